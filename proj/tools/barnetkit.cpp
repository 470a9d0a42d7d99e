#include <iostream>

#include "barnet/cli.hpp"

int main(int argc, char** argv) { return barnet::run_cli(argc, argv, std::cout, std::cerr); }
