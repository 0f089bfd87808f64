#include <iostream>

#include "invflow/cli.hpp"

int main(int argc, char** argv) { return invflow::run_cli(argc, argv, std::cout, std::cerr); }
