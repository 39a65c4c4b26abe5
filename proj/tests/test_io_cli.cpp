#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "rtgp/cavi.hpp"
#include "rtgp/cli.hpp"
#include "rtgp/errors.hpp"
#include "rtgp/io.hpp"
#include "test_support.hpp"

namespace {

using namespace rtgp;
namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("rtgp-test-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "-" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TEST(MatrixFile, BitwiseRoundTrip) {
    Eigen::MatrixXd m(3, 2);
    m << 1.0, -0.0, std::numeric_limits<double>::denorm_min(), 1e308, 0.1, -7.25;
    const Eigen::MatrixXd back = io::decode_matrix(io::encode_matrix(m));
    ASSERT_EQ(back.rows(), 3);
    ASSERT_EQ(back.cols(), 2);
    EXPECT_EQ(std::memcmp(back.data(), m.data(), sizeof(double) * 6), 0);
    const Eigen::MatrixXd empty = io::decode_matrix(io::encode_matrix(Eigen::MatrixXd(0, 0)));
    EXPECT_EQ(empty.size(), 0);
    EXPECT_EQ(io::encode_matrix(Eigen::MatrixXd(0, 0)).size(), io::kMatrixHeaderBytes);
}

TEST(MatrixFile, RejectsCorruptInput) {
    const std::string good = io::encode_matrix(Eigen::MatrixXd::Ones(2, 2));
    std::string bad = good;
    bad[0] = 'X';
    try {
        io::decode_matrix(bad);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
    EXPECT_THROW(io::decode_matrix(good.substr(0, good.size() - 1)), FormatError);
    EXPECT_THROW(io::decode_matrix(good + "x"), FormatError);
    EXPECT_THROW(io::decode_matrix(good.substr(0, 12)), FormatError);
    std::string huge = good;
    const std::uint64_t big = std::numeric_limits<std::uint64_t>::max() / 2;
    std::memcpy(huge.data() + 8, &big, 8);
    std::memcpy(huge.data() + 16, &big, 8);
    EXPECT_THROW(io::decode_matrix(huge), FormatError);
}

TEST(CsvMatrix, HeaderOptionalAndRaggedRowsRejected) {
    const Eigen::MatrixXd a = io::parse_csv_matrix("x,y,z\n1,2,3\n4,5,6\n");
    const Eigen::MatrixXd b = io::parse_csv_matrix("1,2,3\r\n\n4,5,6");
    ASSERT_EQ(a.rows(), 2);
    ASSERT_EQ(a.cols(), 3);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a(1, 2), 6.0);
    try {
        io::parse_csv_matrix("1,2\n3\n");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 4u);
    }
    EXPECT_THROW(io::parse_csv_matrix("1,2\n3,abc\n"), FormatError);
    EXPECT_EQ(io::parse_csv_matrix("").size(), 0);
}

TEST(CsvTable, ShortestRoundTripFormatting) {
    const Eigen::Vector2d v(0.1, 1.0 / 3.0);
    const std::string t = io::csv_table({"a"}, {v});
    const Eigen::MatrixXd back = io::parse_csv_matrix(t);
    EXPECT_EQ(back(0, 0), 0.1);
    EXPECT_EQ(back(1, 0), 1.0 / 3.0);
    EXPECT_EQ(io::csv_escape("a,b"), "\"a,b\"");
}

TEST(Config, ParsesAndRejectsUnknownKeys) {
    const auto m = io::parse_config("# comment\n a = 1 \n\nb=two # trailing\n", {"a", "b"});
    EXPECT_EQ(m.at("a"), "1");
    EXPECT_EQ(m.at("b"), "two");
    EXPECT_THROW(io::parse_config("c = 3\n", {"a"}), InvalidArgument);
    EXPECT_THROW(io::parse_config("a = 1\na = 2\n", {"a"}), FormatError);
    EXPECT_THROW(io::parse_config("novalue\n", {"a"}), FormatError);
}

FitResult small_fit() {
    const auto inst = rtgp::testing::make_instance(30, 8, 40, 3);
    CaviConfig cfg;
    cfg.max_iter = 20;
    return fit_vi(inst.data, inst.basis, Hyperparameters{}, cfg);
}

TEST(FitContainer, RoundTripPreservesPredictions) {
    const FitResult f = small_fit();
    const io::LoadedFit back = io::decode_fit(io::encode_fit(f, "abc"));
    EXPECT_EQ(back.fingerprint, "abc");
    EXPECT_EQ(back.fit.beta_map, f.beta_map);
    EXPECT_EQ(back.fit.inclusion_prob, f.inclusion_prob);
    EXPECT_EQ(back.fit.region_weights, f.region_weights);
    EXPECT_EQ(back.fit.elbo_trace, f.elbo_trace);
    EXPECT_EQ(back.fit.beta0_mean, f.beta0_mean);
    const Eigen::MatrixXd x = rtgp::testing::gaussian_matrix(5, 30, 9);
    EXPECT_EQ(predict(back.fit, x), predict(f, x));
}

TEST(FitContainer, RejectsCorruptContainers) {
    FitResult f = small_fit();
    f.region_weights.row(0) << 0.3, 0.3, 0.3;
    EXPECT_THROW(io::decode_fit(io::encode_fit(f)), FormatError);
    EXPECT_THROW(io::decode_fit("{not json"), FormatError);
    std::string text = io::encode_fit(small_fit());
    const auto pos = text.find("rtgp-fit/1");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 10, "rtgp-fit/9");
    EXPECT_THROW(io::decode_fit(text), FormatError);
}

TEST(BasisDirectory, RoundTrip) {
    TempDir dir;
    const auto inst = rtgp::testing::make_instance(25, 6, 5, 4);
    BasisManifest man;
    man.fixed_count = 6;
    man.size = 6;
    man.kappa_achieved = inst.basis.kappa_achieved;
    io::OutputBatch out;
    io::stage_basis(out, dir.path, inst.basis, man);
    out.commit();
    EXPECT_TRUE(fs::exists(dir.path / "eigenvalues.csv"));
    const io::LoadedBasis lb = io::load_basis(dir.path);
    EXPECT_EQ(lb.basis.basis, inst.basis.basis);
    EXPECT_EQ(lb.basis.eigenvalues, inst.basis.eigenvalues);
    EXPECT_EQ(lb.manifest.fixed_count, std::optional<Eigen::Index>(6));
}

int run(std::vector<std::string> args, std::string* err_out = nullptr) {
    args.insert(args.begin(), "rtgp");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream log, err;
    const int code = cli::cli_dispatch(static_cast<int>(argv.size()), argv.data(), log, err);
    if (err_out) *err_out = err.str();
    return code;
}

TEST(Cli, EndToEndPipeline) {
    TempDir d;
    const std::string sim = d / "sim";
    ASSERT_EQ(run({"simulate", "--out", sim, "--m", "120", "--reps", "2", "--n-train", "60", "--n-test", "40",
                   "--kappa", "0.99", "--phi", "4"}),
              0);
    EXPECT_TRUE(fs::exists(sim + "/vertices.csv"));
    EXPECT_TRUE(fs::exists(sim + "/rep_000/train_x.mat"));
    ASSERT_EQ(run({"basis", "--out", d / "basis", "--vertices", sim + "/vertices.csv", "--phi", "4", "--l", "20"}), 0);
    EXPECT_TRUE(fs::exists(d / "basis/eigenvalues.csv"));
    const std::string fit0 = d / "fit0.json", fit1 = d / "fit1.json";
    ASSERT_EQ(run({"fit", "--out", fit0, "--x", sim + "/rep_000/train_x.mat", "--y", sim + "/rep_000/train_y.mat",
                   "--basis", d / "basis", "--max-iter", "30"}),
              0);
    ASSERT_EQ(run({"fit", "--out", fit1, "--x", sim + "/rep_001/train_x.mat", "--y", sim + "/rep_001/train_y.mat",
                   "--basis", d / "basis", "--engine", "gibbs", "--n-iter", "60", "--burn-in", "20", "--chain",
                   d / "chain.mat"}),
              0);
    EXPECT_TRUE(fs::exists(fit0 + ".trace.csv"));
    EXPECT_TRUE(fs::exists(fit0 + ".manifest.jsonl"));
    const Eigen::MatrixXd chain = io::read_matrix(d / "chain.mat");
    EXPECT_EQ(chain.rows(), 40);
    const std::string names = slurp(d / "chain.mat.names.csv");
    EXPECT_EQ(names.rfind("column,parameter\n0,beta0", 0), 0u);
    ASSERT_EQ(run({"predict", "--out", d / "pred.csv", "--fit", fit0, "--x", sim + "/rep_000/test_x.mat"}), 0);
    EXPECT_EQ(io::read_csv_matrix(d / "pred.csv").rows(), 40);
    ASSERT_EQ(run({"export-map", "--out", d / "map.csv", "--fit", fit0}), 0);
    const Eigen::MatrixXd map = io::read_csv_matrix(d / "map.csv");
    EXPECT_EQ(map.rows(), 120);
    EXPECT_EQ(map.cols(), 5);
    ASSERT_EQ(run({"evaluate", "--out", d / "eval.csv", "--truth-beta", sim + "/truth_beta.mat", "--fit", fit0, "--fit",
                   fit1, "--test-x", sim + "/rep_000/test_x.mat", "--test-x", sim + "/rep_001/test_x.mat", "--test-y",
                   sim + "/rep_000/test_y.mat", "--test-y", sim + "/rep_001/test_y.mat", "--train-x",
                   sim + "/rep_000/train_x.mat", "--train-x", sim + "/rep_001/train_x.mat", "--train-y",
                   sim + "/rep_000/train_y.mat", "--train-y", sim + "/rep_001/train_y.mat"}),
              0);
    const std::string table = slurp(d / "eval.csv");
    EXPECT_NE(table.find("\nRTGP,"), std::string::npos);
    EXPECT_NE(table.find("\nRidge,"), std::string::npos);
}

TEST(Cli, ExitCodes) {
    TempDir d;
    EXPECT_EQ(run({}), 1);
    EXPECT_EQ(run({"frobnicate"}), 1);
    EXPECT_EQ(run({"simulate"}), 1);
    EXPECT_EQ(run({"simulate", "--out", d / "s", "--m", "0"}), 1);
    {
        std::ofstream cfg(d / "bad.cfg");
        cfg << "mystery = 3\n";
    }
    std::string err;
    EXPECT_EQ(run({"simulate", "--out", d / "s", "--config", d / "bad.cfg"}, &err), 1);
    EXPECT_NE(err.find("mystery"), std::string::npos);
    {
        std::ofstream junk(d / "junk.mat");
        junk << "definitely not a matrix";
    }
    EXPECT_EQ(run({"predict", "--out", d / "p.csv", "--fit", d / "missing.json", "--x", d / "junk.mat"}), 2);
    EXPECT_FALSE(fs::exists(d / "p.csv"));
    {
        std::ofstream v(d / "v.csv");
        v << "x,y,z\n1,0,0\n0,1,0\n0,0,1\n";
    }
    EXPECT_EQ(run({"basis", "--out", d / "b", "--vertices", d / "v.csv"}), 1);  // neither --kappa nor --l
    EXPECT_EQ(run({"basis", "--out", d / "b", "--vertices", d / "v.csv", "--l", "9"}), 2);
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
    TempDir d;
    {
        std::ofstream cfg(d / "sim.cfg");
        cfg << "m = 40\nreps = 1\nn_train = 10\nn_test = 5\nkappa = 0.95\nphi = 4\n";
    }
    ASSERT_EQ(run({"simulate", "--out", d / "a", "--config", d / "sim.cfg", "--n-train", "12"}), 0);
    EXPECT_EQ(io::read_matrix(d / "a/rep_000/train_x.mat").rows(), 12);
    EXPECT_EQ(io::read_matrix(d / "a/rep_000/train_x.mat").cols(), 40);
    const std::string manifest = slurp(d / "a/manifest.jsonl");
    EXPECT_NE(manifest.find("\"n_train\":\"12\""), std::string::npos);
    EXPECT_NE(manifest.find("\"sigma_eps_sq\":\"0.2\""), std::string::npos);
}

TEST(Cli, OutputsAreDeterministic) {
    TempDir d;
    for (const char* tag : {"a", "b"}) {
        const std::string sim = d / (std::string("sim_") + tag);
        ASSERT_EQ(run({"simulate", "--out", sim, "--m", "60", "--reps", "1", "--n-train", "30", "--n-test", "10",
                       "--kappa", "0.99", "--phi", "4"}),
                  0);
        ASSERT_EQ(run({"basis", "--out", sim + "/basis", "--vertices", sim + "/vertices.csv", "--phi", "4", "--l", "10"}),
                  0);
        ASSERT_EQ(run({"fit", "--out", sim + "/fit.json", "--x", sim + "/rep_000/train_x.mat", "--y",
                       sim + "/rep_000/train_y.mat", "--basis", sim + "/basis", "--max-iter", "15"}),
                  0);
    }
    for (const char* f : {"vertices.csv", "truth_beta.mat", "rep_000/train_x.mat", "rep_000/test_y.mat",
                          "basis/eigenvectors.mat", "basis/eigenvalues.csv", "fit.json.trace.csv"})
        EXPECT_EQ(slurp(d / (std::string("sim_a/") + f)), slurp(d / (std::string("sim_b/") + f))) << f;
    const FitResult fa = io::load_fit(d / "sim_a/fit.json"), fb = io::load_fit(d / "sim_b/fit.json");
    EXPECT_EQ(fa.beta_map, fb.beta_map);
    EXPECT_EQ(fa.elbo_trace, fb.elbo_trace);
}

}  // namespace
