#include <iostream>
#include <string>
#include <vector>

#include "sorel/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return sorel::run_command(args, std::cout, std::cerr);
}
