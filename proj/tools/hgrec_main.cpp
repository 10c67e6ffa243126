#include <iostream>

#include "hgrec/cli.hpp"

int main(int argc, char** argv) { return hgrec::cli::run(argc, argv, std::cout, std::cerr); }
