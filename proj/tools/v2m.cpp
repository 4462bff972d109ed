#include <iostream>

#include "v2m/cli/run.hpp"

int main(int argc, char** argv) {
  return v2m::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
