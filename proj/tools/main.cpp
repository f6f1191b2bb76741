// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) {
  return spinepoi::cli::run(std::vector<std::string>(argv, argv + argc));
}
