// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  return qkv::cli::cli_main(argc, argv, std::cout, std::cerr);
}
