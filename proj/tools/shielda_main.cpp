#include <iostream>
#include <string>
#include <vector>

#include "shielda/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return shielda::dispatch(args, std::cout, std::cerr);
}
