#include "rtgp/cli.hpp"

int main(int argc, char** argv) { return rtgp::cli::cli_dispatch(argc, argv); }
