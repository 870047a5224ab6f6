#include <string>
#include <vector>

#include "chsurgeon/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return chsurgeon::cli::run(args);
}
