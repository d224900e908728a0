#include "gril/cli/app.hpp"

int main(int argc, char** argv) {
  return gril::cli::run(std::vector<std::string>(argv, argv + argc));
}
