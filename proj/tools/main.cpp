#include <iostream>

#include "hadpo/cli.hpp"

int main(int argc, char** argv) { return hadpo::cli::run(argc, argv, std::cout, std::cerr); }
