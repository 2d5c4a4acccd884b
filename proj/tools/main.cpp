#include <iostream>

#include "bilinsim/cli.hpp"

int main(int argc, char** argv) { return bilinsim::run_cli(argc, argv, std::cout, std::cerr); }
