#include "ffts/harness/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return ffts::harness::run_cli(argc, argv, std::cout, std::cerr); }
