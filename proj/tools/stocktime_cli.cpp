#include <iostream>

#include "stocktime/cli.hpp"

int main(int argc, char** argv) { return stocktime::run_cli(argc, argv, std::cout, std::cerr); }
