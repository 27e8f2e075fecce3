#include <iostream>

#include "lmaml/cli.hpp"

int main(int argc, char** argv) {
  try {
    return lmaml::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "lmaml: internal error: " << e.what() << "\n";
    return lmaml::kExitInternal;
  }
}
