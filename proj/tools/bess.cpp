#include <iostream>

#include "bess/cli.hpp"

int main(int argc, char** argv) { return bess::cli::run_cli(argc, argv, std::cout, std::cerr); }
