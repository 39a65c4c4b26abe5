#pragma once

// File formats: the dense matrix container, CSV tables, key = value configuration files,
// the JSON fit container, JSON-lines run manifests and atomic staged writes.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rtgp/errors.hpp"
#include "rtgp/kernel_basis.hpp"
#include "rtgp/model.hpp"
#include "rtgp/rng.hpp"

namespace rtgp::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- binary matrix container --------------------------------------------------------------
//
// 8-byte magic "RTGPMAT1", rows and cols as little-endian u64, then rows*cols little-endian
// f64 values in row-major order.

inline constexpr char kMatrixMagic[8] = {'R', 'T', 'G', 'P', 'M', 'A', 'T', '1'};
inline constexpr std::size_t kMatrixHeaderBytes = 24;

namespace detail {

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        T out;
        auto* src = reinterpret_cast<const unsigned char*>(&v);
        auto* dst = reinterpret_cast<unsigned char*>(&out);
        for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
        return out;
    }
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

inline std::string encode_matrix(const Eigen::MatrixXd& m) {
    std::string out(kMatrixHeaderBytes + static_cast<std::size_t>(m.size()) * 8, '\0');
    std::memcpy(out.data(), kMatrixMagic, 8);
    const std::uint64_t rows = detail::to_little(static_cast<std::uint64_t>(m.rows()));
    const std::uint64_t cols = detail::to_little(static_cast<std::uint64_t>(m.cols()));
    std::memcpy(out.data() + 8, &rows, 8);
    std::memcpy(out.data() + 16, &cols, 8);
    char* p = out.data() + kMatrixHeaderBytes;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c, p += 8) {
            const double v = detail::to_little(m(r, c));
            std::memcpy(p, &v, 8);
        }
    return out;
}

inline Eigen::MatrixXd decode_matrix(const std::string& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMatrixMagic, 8) != 0)
        throw FormatError("matrix file: bad magic", 0);
    if (bytes.size() < kMatrixHeaderBytes) throw FormatError("matrix file: truncated header", bytes.size());
    std::uint64_t rows, cols;
    std::memcpy(&rows, bytes.data() + 8, 8);
    std::memcpy(&cols, bytes.data() + 16, 8);
    rows = detail::to_little(rows);
    cols = detail::to_little(cols);
    constexpr std::uint64_t kMax = static_cast<std::uint64_t>(std::numeric_limits<Eigen::Index>::max());
    if (rows > kMax) throw FormatError("matrix file: row count overflows", 8);
    if (cols > kMax || (rows != 0 && cols > (kMax / 8) / rows)) throw FormatError("matrix file: size overflows", 16);
    const std::uint64_t payload = rows * cols * 8;
    const std::uint64_t have = bytes.size() - kMatrixHeaderBytes;
    if (have < payload) throw FormatError("matrix file: truncated payload", bytes.size());
    if (have > payload) throw FormatError("matrix file: trailing bytes after payload", kMatrixHeaderBytes + payload);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const char* p = bytes.data() + kMatrixHeaderBytes;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c, p += 8) {
            double v;
            std::memcpy(&v, p, 8);
            m(r, c) = detail::to_little(v);
        }
    return m;
}

inline Eigen::MatrixXd read_matrix(const fs::path& path) { return decode_matrix(detail::read_file(path)); }

// ---- atomic writes ----------------------------------------------------------------------------

/// Stages output files next to their targets and renames them into place on commit().
/// Staged files that were never committed are removed on destruction, so a failing command
/// leaves no partial outputs behind.
class OutputBatch {
public:
    OutputBatch() = default;
    OutputBatch(const OutputBatch&) = delete;
    OutputBatch& operator=(const OutputBatch&) = delete;
    ~OutputBatch() {
        for (const auto& [tmp, target] : staged_) {
            std::error_code ec;
            fs::remove(tmp, ec);
        }
    }

    void add(const fs::path& target, const std::string& contents) {
        if (target.has_parent_path()) fs::create_directories(target.parent_path());
        fs::path tmp = target;
        tmp += ".tmp-" + std::to_string(staged_.size());
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw FormatError("cannot write " + tmp.string(), 0);
            out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
            if (!out) throw FormatError("write failed for " + tmp.string(), 0);
        }
        staged_.emplace_back(tmp, target);
        hashes_[target.string()] = rtgp::detail::fnv1a(contents);
    }

    void add_matrix(const fs::path& target, const Eigen::MatrixXd& m) { add(target, encode_matrix(m)); }

    void commit() {
        for (const auto& [tmp, target] : staged_) fs::rename(tmp, target);
        staged_.clear();
    }

    /// FNV-1a hash of every staged file's contents, keyed by path.
    const std::map<std::string, std::uint64_t>& hashes() const noexcept { return hashes_; }

private:
    std::vector<std::pair<fs::path, fs::path>> staged_;
    std::map<std::string, std::uint64_t> hashes_;
};

inline void write_matrix(const fs::path& path, const Eigen::MatrixXd& m) {
    OutputBatch b;
    b.add_matrix(path, m);
    b.commit();
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::uint64_t file_hash(const fs::path& path) { return rtgp::detail::fnv1a(detail::read_file(path)); }

// ---- CSV ----------------------------------------------------------------------------------

/// Shortest round-trip decimal form of a double, with '.' as separator.
inline std::string format_double(double v) {
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

/// Columns of equal length under a header row.
inline std::string csv_table(const std::vector<std::string>& header, const std::vector<Eigen::VectorXd>& columns) {
    rtgp::detail::require(header.size() == columns.size(), "csv_table: header and column counts differ");
    std::ostringstream os;
    for (std::size_t c = 0; c < header.size(); ++c) os << (c ? "," : "") << csv_escape(header[c]);
    os << '\n';
    const Eigen::Index rows = columns.empty() ? 0 : columns.front().size();
    for (const auto& col : columns) rtgp::detail::require(col.size() == rows, "csv_table: ragged columns");
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << format_double(columns[c][r]);
        os << '\n';
    }
    return os.str();
}

/// Numeric CSV with an optional header row: the first line is treated as a header when
/// any of its fields fails to parse as a number. Blank lines are skipped; every data row
/// must have the same field count.
inline Eigen::MatrixXd parse_csv_matrix(const std::string& text) {
    std::vector<std::vector<double>> rows;
    std::istringstream in(text);
    std::string line;
    std::size_t offset = 0;
    bool first = true;
    while (std::getline(in, line)) {
        const std::size_t here = offset;
        offset += line.size() + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<double> vals;
        bool numeric = true;
        std::stringstream fields(line);
        std::string f;
        while (std::getline(fields, f, ',')) {
            const char* b = f.c_str();
            char* e = nullptr;
            const double v = std::strtod(b, &e);
            while (e && (*e == ' ' || *e == '\t')) ++e;
            if (e == b || *e != '\0') numeric = false;
            vals.push_back(v);
        }
        if (!line.empty() && line.back() == ',') numeric = false;
        if (!numeric) {
            if (first) {
                first = false;
                continue;
            }
            throw FormatError("csv: non-numeric field", here);
        }
        first = false;
        if (!rows.empty() && vals.size() != rows.front().size()) throw FormatError("csv: ragged row", here);
        rows.push_back(std::move(vals));
    }
    const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index c = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return m;
}

inline Eigen::MatrixXd read_csv_matrix(const fs::path& path) { return parse_csv_matrix(detail::read_file(path)); }

/// Reads either container: binary when the file starts with the matrix magic, CSV otherwise.
inline Eigen::MatrixXd read_any_matrix(const fs::path& path) {
    const std::string bytes = detail::read_file(path);
    if (bytes.size() >= sizeof kMatrixMagic && std::memcmp(bytes.data(), kMatrixMagic, sizeof kMatrixMagic) == 0)
        return decode_matrix(bytes);
    return parse_csv_matrix(bytes);
}

// ---- configuration files --------------------------------------------------------------------

/// `key = value` lines; `#` starts a comment; blank lines are ignored. Keys must be in
/// `allowed` and may appear once.
inline std::map<std::string, std::string> parse_config(const std::string& text, const std::vector<std::string>& allowed) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    std::size_t offset = 0;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t here = offset;
        offset += line.size() + 1;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("config line " + std::to_string(lineno) + ": expected key = value", here);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw FormatError("config line " + std::to_string(lineno) + ": empty key", here);
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw InvalidArgument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (!out.emplace(key, value).second)
            throw FormatError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'", here);
    }
    return out;
}

// ---- fit container --------------------------------------------------------------------------

inline constexpr const char* kFitFormat = "rtgp-fit/1";

namespace detail {

inline json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd json_vec(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json mat_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

inline Eigen::MatrixXd json_mat(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const json& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows) throw FormatError("fit container: matrix row count", 0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::VectorXd row = json_vec(data.at(static_cast<std::size_t>(r)));
        if (row.size() != cols) throw FormatError("fit container: matrix column count", 0);
        m.row(r) = row.transpose();
    }
    return m;
}

}  // namespace detail

inline json hyper_json(const Hyperparameters& h) {
    return {{"sigma_beta0_sq", h.sigma_beta0_sq}, {"s_beta", h.s_beta}, {"s_eps", h.s_eps},   {"s_alpha", h.s_alpha},
            {"t_min", h.t_min},                   {"t_max", h.t_max},   {"n_delta", h.n_delta}};
}

inline Hyperparameters json_hyper(const json& j) {
    Hyperparameters h;
    h.sigma_beta0_sq = j.at("sigma_beta0_sq").get<double>();
    h.s_beta = j.at("s_beta").get<double>();
    h.s_eps = j.at("s_eps").get<double>();
    h.s_alpha = j.at("s_alpha").get<double>();
    h.t_min = j.at("t_min").get<double>();
    h.t_max = j.at("t_max").get<double>();
    h.n_delta = j.at("n_delta").get<int>();
    return h;
}

inline json manifest_json(const BasisManifest& b) {
    json j = {{"phi", b.kernel.phi}, {"nu", b.kernel.nu}, {"jitter", b.jitter}, {"size", b.size},
              {"kappa_achieved", b.kappa_achieved}};
    j["kappa_target"] = b.kappa_target ? json(*b.kappa_target) : json(nullptr);
    j["fixed_count"] = b.fixed_count ? json(*b.fixed_count) : json(nullptr);
    return j;
}

inline BasisManifest json_manifest(const json& j) {
    BasisManifest b;
    b.kernel.phi = j.at("phi").get<double>();
    b.kernel.nu = j.at("nu").get<double>();
    b.jitter = j.at("jitter").get<double>();
    b.size = j.at("size").get<Eigen::Index>();
    b.kappa_achieved = j.at("kappa_achieved").get<double>();
    if (!j.at("kappa_target").is_null()) b.kappa_target = j.at("kappa_target").get<double>();
    if (!j.at("fixed_count").is_null()) b.fixed_count = j.at("fixed_count").get<Eigen::Index>();
    return b;
}

/// Serialized fit. `fingerprint` identifies the inputs and settings that produced it.
inline std::string encode_fit(const FitResult& f, const std::string& fingerprint = "") {
    json j;
    j["format"] = kFitFormat;
    j["fingerprint"] = fingerprint;
    j["engine"] = f.engine;
    j["hyperparameters"] = hyper_json(f.hyper);
    j["basis"] = manifest_json(f.basis);
    j["beta_tilde_mean"] = detail::vec_json(f.beta_tilde_mean);
    j["inclusion_prob"] = detail::vec_json(f.inclusion_prob);
    j["beta_map"] = detail::vec_json(f.beta_map);
    j["beta0_mean"] = f.beta0_mean;
    j["sigma_eps_sq_mean"] = f.sigma_eps_sq_mean;
    j["delta_grid"] = f.delta_grid;
    j["delta_prob"] = detail::vec_json(f.delta_prob);
    j["theta_mean"] = detail::vec_json(f.theta_mean);
    j["theta_cov"] = detail::mat_json(f.theta_cov);
    j["region_weights"] = detail::mat_json(f.region_weights);
    j["selection_threshold"] = f.selection_threshold;
    j["elbo_trace"] = f.elbo_trace;
    j["chain_samples"] = f.chain_samples;
    return j.dump(1) + "\n";
}

struct LoadedFit {
    FitResult fit;
    std::string fingerprint;
};

inline LoadedFit decode_fit(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("fit container: ") + e.what(), e.byte);
    }
    try {
        const auto fmt = j.at("format").get<std::string>();
        if (fmt != kFitFormat)
            throw FormatError("fit container: version '" + fmt + "' is not " + kFitFormat, 0);
        LoadedFit out;
        FitResult& f = out.fit;
        out.fingerprint = j.at("fingerprint").get<std::string>();
        f.engine = j.at("engine").get<std::string>();
        f.hyper = json_hyper(j.at("hyperparameters"));
        f.basis = json_manifest(j.at("basis"));
        f.beta_tilde_mean = detail::json_vec(j.at("beta_tilde_mean"));
        f.inclusion_prob = detail::json_vec(j.at("inclusion_prob"));
        f.beta_map = detail::json_vec(j.at("beta_map"));
        f.beta0_mean = j.at("beta0_mean").get<double>();
        f.sigma_eps_sq_mean = j.at("sigma_eps_sq_mean").get<double>();
        f.delta_grid = j.at("delta_grid").get<std::vector<double>>();
        f.delta_prob = detail::json_vec(j.at("delta_prob"));
        f.theta_mean = detail::json_vec(j.at("theta_mean"));
        f.theta_cov = detail::json_mat(j.at("theta_cov"));
        f.region_weights = detail::json_mat(j.at("region_weights"));
        f.selection_threshold = j.at("selection_threshold").get<double>();
        f.elbo_trace = j.at("elbo_trace").get<std::vector<double>>();
        f.chain_samples = j.at("chain_samples").get<std::size_t>();
        try {
            validate(f);
        } catch (const InvalidArgument& e) {
            throw FormatError(std::string("fit container failed validation: ") + e.what(), 0);
        }
        return out;
    } catch (const json::exception& e) {
        throw FormatError(std::string("fit container: ") + e.what(), 0);
    }
}

inline void save_fit(const fs::path& path, const FitResult& f, const std::string& fingerprint = "") {
    OutputBatch b;
    b.add(path, encode_fit(f, fingerprint));
    b.commit();
}

inline FitResult load_fit(const fs::path& path) { return decode_fit(detail::read_file(path)).fit; }

// ---- basis directory ----------------------------------------------------------------------

/// A basis on disk: eigenvalues.csv (index, eigenvalue), eigenvectors.mat (M x L) and basis.json.
inline void stage_basis(OutputBatch& out, const fs::path& dir, const BasisExpansion& b, const BasisManifest& m) {
    out.add(dir / "eigenvalues.csv",
            csv_table({"index", "eigenvalue"},
                      {Eigen::VectorXd::LinSpaced(b.size(), 0.0, static_cast<double>(b.size() - 1)), b.eigenvalues}));
    out.add_matrix(dir / "eigenvectors.mat", b.eigenvectors);
    json j = manifest_json(m);
    j["format"] = "rtgp-basis/1";
    j["total_variation"] = b.total_variation;
    j["vertices"] = b.vertices();
    out.add(dir / "basis.json", j.dump(1) + "\n");
}

struct LoadedBasis {
    BasisExpansion basis;
    BasisManifest manifest;
};

inline LoadedBasis load_basis(const fs::path& dir) {
    json j;
    const std::string text = detail::read_file(dir / "basis.json");
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("basis manifest: ") + e.what(), e.byte);
    }
    try {
        if (j.at("format").get<std::string>() != "rtgp-basis/1") throw FormatError("basis manifest: unknown format", 0);
        LoadedBasis out;
        out.manifest = json_manifest(j);
        const Eigen::MatrixXd vals = read_csv_matrix(dir / "eigenvalues.csv");
        const Eigen::MatrixXd vecs = read_matrix(dir / "eigenvectors.mat");
        if (vals.cols() != 2) throw FormatError("eigenvalues.csv must have index and eigenvalue columns", 0);
        try {
            out.basis = make_basis(vals.col(1), vecs, j.at("total_variation").get<double>());
        } catch (const InvalidArgument& e) {
            throw FormatError(std::string("basis failed validation: ") + e.what(), 0);
        }
        return out;
    } catch (const json::exception& e) {
        throw FormatError(std::string("basis manifest: ") + e.what(), 0);
    }
}

// ---- run manifest ---------------------------------------------------------------------------

/// One JSON-lines record describing a run: command, every resolved setting and the hash of
/// each file written.
inline std::string manifest_record(const std::string& command, const std::map<std::string, std::string>& settings,
                                   const std::map<std::string, std::uint64_t>& outputs,
                                   const std::map<std::string, std::uint64_t>& inputs = {}) {
    json j;
    j["command"] = command;
    j["settings"] = settings;
    json outs = json::object(), ins = json::object();
    for (const auto& [p, h] : outputs) outs[p] = hex64(h);
    for (const auto& [p, h] : inputs) ins[p] = hex64(h);
    j["outputs"] = outs;
    j["inputs"] = ins;
    return j.dump() + "\n";
}

}  // namespace rtgp::io
