#include <iostream>

#include "mft/cli.hpp"

int main(int argc, char** argv) { return mft::cli::run_cli(argc, argv, std::cout, std::cerr); }
