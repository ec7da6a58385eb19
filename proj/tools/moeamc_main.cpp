#include <vector>

#include "moeamc/cli.hpp"

int main(int argc, char** argv) {
  return moeamc::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
