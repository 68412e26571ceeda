#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "can/cli.hpp"
#include "can/kernels.hpp"

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("CAN_THREADS")) {
    try {
      can::kernels::set_max_threads(std::stoi(threads));
    } catch (const std::exception&) {
      std::cerr << "usage error: CAN_THREADS must be an integer, got '" << threads << "'\n";
      return can::kExitUsage;
    }
  }
  return can::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
