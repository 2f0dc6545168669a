// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal comma-separated tables: no quoting, fields may not contain commas
// or newlines. Everything this project writes satisfies that.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sd {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Index of `name` in the header, or -1.
    int column(const std::string& name) const;
    bool has(const std::string& name) const { return column(name) >= 0; }
    const std::string& at(std::size_t row, const std::string& name) const;
    double number(std::size_t row, const std::string& name) const;
};

// Throws DataError on a missing file, empty header, or ragged rows.
CsvTable read_csv(const std::filesystem::path& path);

std::string join_csv(const std::vector<std::string>& fields);
// Shortest round-trippable decimal form.
std::string format_number(double v);

} // namespace sd
