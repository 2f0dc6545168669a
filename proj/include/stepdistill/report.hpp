// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0
//
// Plots and a markdown summary from an evaluation or ablation table.
//
//   fd_vs_nfe.svg      one line per method, when the table has method/nfe_per_sample
//   fd_vs_lambda.svg   median fd per lambda, when the table has lambda
//   loss_kinds.svg     median fd per loss kind, when the table has loss_kind
//   summary.md         every column and row of the table

#pragma once

#include "stepdistill/csv.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sd {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                          const std::vector<Series>& series, bool log_x = false);
std::string bar_plot_svg(const std::string& title, const std::string& ylabel, const std::vector<std::string>& labels,
                         const std::vector<double>& values);
std::string markdown_table(const CsvTable& table);

double median(std::vector<double> v);

// Writes the files that apply to `table` into `plots_dir`; returns their
// paths. Throws DataError on an empty table.
std::vector<std::filesystem::path> write_report(const CsvTable& table, const std::filesystem::path& plots_dir);

} // namespace sd
