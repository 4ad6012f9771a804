#include <iostream>

#include "psld/harness/cli.hpp"

int main(int argc, char** argv) {
  return psld::harness::cli_main(argc, argv, std::cout, std::cerr);
}
