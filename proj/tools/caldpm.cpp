#include <iostream>

#include "caldpm/commands.hpp"

int main(int argc, char** argv) { return caldpm::run_cli(argc, argv, std::cout, std::cerr); }
