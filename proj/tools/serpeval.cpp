#include "serpeval/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return serpeval::cli::run(argc, argv, std::cout, std::cerr); }
