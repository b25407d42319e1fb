#include <iostream>
#include <string>
#include <vector>

#include "ctpvt/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ctpvt::cli::run(args, std::cout, std::cerr);
}
