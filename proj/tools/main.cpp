#include <vector>
#include <string>

#include "cli.hpp"
#include "speedmode/util.hpp"

int main(int argc, char** argv) {
  speedmode::retain_heap_memory();
  return speedmode::cli::run(std::vector<std::string>(argv, argv + argc));
}
