// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/cli.hpp"

int main(int argc, char** argv) { return kfade::run_cli(argc, argv); }
