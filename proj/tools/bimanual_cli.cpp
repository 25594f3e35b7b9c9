#include <iostream>

#include "bimanual/cli.hpp"

int main(int argc, char** argv) { return bimanual::cli_dispatch(argc, argv, std::cout, std::cerr); }
