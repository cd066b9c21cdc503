// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "attrsyn/cli.hpp"

int main(int argc, char** argv) {
  return attrsyn::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cin, std::cout, std::cerr);
}
