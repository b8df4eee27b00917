#include "engagerl/cli.hpp"

int main(int argc, char** argv) { return engagerl::cli::run_cli(argc, argv); }
