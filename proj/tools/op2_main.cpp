#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return op2::cli_dispatch(argc, argv, std::cout, std::cerr); }
