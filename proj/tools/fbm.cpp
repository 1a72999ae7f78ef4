// Copyright (C) 2026 The FBM Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbm/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return fbm::cli::run(argc, argv, std::cout, std::cerr); }
