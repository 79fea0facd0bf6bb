#include <iostream>

#include "sram/cli.hpp"

int main(int argc, char** argv) { return sram::run_cli(argc, argv, std::cout, std::cerr); }
