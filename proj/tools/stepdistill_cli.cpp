// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/cli.hpp"

int main(int argc, char** argv) { return sd::cli_main(argc, argv); }
