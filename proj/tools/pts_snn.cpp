#include <iostream>

#include "pts/cli.hpp"

int main(int argc, char** argv) { return pts::run_cli(argc, argv, std::cout, std::cerr); }
