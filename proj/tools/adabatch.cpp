#include <iostream>

#include "adabatch/cli.hpp"

int main(int argc, char** argv) { return adabatch::cli::run(argc, argv, std::cout, std::cerr); }
