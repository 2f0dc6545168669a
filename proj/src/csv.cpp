// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/csv.hpp"

#include "stepdistill/error.hpp"

#include <charconv>
#include <fstream>

namespace sd {

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

} // namespace

int CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

const std::string& CsvTable::at(std::size_t row, const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw DataError("csv: missing column '" + name + "'");
    return rows.at(row).at(static_cast<std::size_t>(c));
}

double CsvTable::number(std::size_t row, const std::string& name) const {
    const std::string& s = at(row, name);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw DataError("csv: column '" + name + "' row " + std::to_string(row) + " is not a number: '" + s + "'");
    return v;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open: " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(is, line) || line.empty()) throw DataError("csv: empty table: " + path.string());
    t.header = split(line);
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split(line);
        if (fields.size() != t.header.size())
            throw DataError("csv: line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                            " fields, expected " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(fields));
    }
    return t;
}

std::string join_csv(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += fields[i];
    }
    return out;
}

std::string format_number(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

} // namespace sd
