// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  return voxelser::cli::run({argv, argv + argc}, std::cout, std::cerr);
}
