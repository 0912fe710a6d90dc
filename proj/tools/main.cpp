#include <iostream>

#include "kllab/cli.hpp"

int main(int argc, char** argv) { return kllab::run_cli(argc, argv, std::cout, std::cerr); }
