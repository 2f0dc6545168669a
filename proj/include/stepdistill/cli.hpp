// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point. Exit codes: 0 success, 2 configuration or usage
// error, 3 data error, 4 numeric divergence. Failures print one JSON line to
// stderr: {"error":"<kind>","exit_code":N,"reason":"..."}.

#pragma once

namespace sd {

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_data = 3, exit_divergence = 4 };

int cli_main(int argc, char** argv);

} // namespace sd
