#include <iostream>

#include "pced/cli.hpp"

int main(int argc, char** argv) {
  return pced::cli::run(argc, argv, std::cout, std::cerr);
}
