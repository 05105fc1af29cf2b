#include <iostream>

#include "rkpinn/cli.hpp"

int main(int argc, char** argv) { return rkpinn::run_cli(argc, argv, std::cout, std::cerr); }
