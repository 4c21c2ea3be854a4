#include <string>
#include <vector>

#include "spanexplain/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return spanexplain::run_cli(args);
}
