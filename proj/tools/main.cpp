#include "dropsplat/cli.hpp"

int main(int argc, char** argv) { return dropsplat::cli::run_cli(argc, argv); }
