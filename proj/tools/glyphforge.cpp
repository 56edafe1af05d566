#include <iostream>

#include "cli.hpp"
#include "glyphforge/runtime.hpp"

int main(int argc, char** argv) {
  glyphforge::tune_allocator();
  const std::vector<std::string> args(argv + 1, argv + argc);
  return glyphforge::cli::run(args, std::cout, std::cerr).exit_code;
}
