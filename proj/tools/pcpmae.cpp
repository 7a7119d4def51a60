#include "pcpmae/cli.hpp"

int main(int argc, char** argv) { return pcpmae::cli::run_cli(argc, argv); }
