#include "srnn/cli.hpp"

int main(int argc, char** argv) {
  return srnn::cli::run({argv + 1, argv + argc});
}
