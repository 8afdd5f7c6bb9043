#include <string>
#include <vector>

#include "bst/cli.hpp"

int main(int argc, char** argv) {
  return bst::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
