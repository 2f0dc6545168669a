// Copyright (c) 2026, the stepdistill authors
// SPDX-License-Identifier: Apache-2.0

#include "stepdistill/report.hpp"

#include "stepdistill/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace sd {

namespace {

constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

struct Range {
    double lo, hi;
    // Pads degenerate ranges so a single point still lands mid-axis.
    Range(double a, double b) : lo(a), hi(b) {
        if (!(hi > lo)) {
            const double pad = std::abs(lo) > 0 ? std::abs(lo) * 0.1 : 1.0;
            lo -= pad;
            hi += pad;
        }
    }
    double frac(double v) const { return (v - lo) / (hi - lo); }
};

void header(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
       << "</text>\n";
}

void axes(std::ostringstream& os, const std::string& xlabel, const std::string& ylabel) {
    const double x0 = kLeft, y0 = kHeight - kBottom, x1 = kWidth - kRight;
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << x0 << "\" y1=\"" << kTop << "\" x2=\"" << x0 << "\" y2=\"" << y0
       << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">" << escape(xlabel)
       << "</text>\n"
       << "<text transform=\"translate(18," << (kTop + y0) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << escape(ylabel) << "</text>\n";
}

void y_ticks(std::ostringstream& os, const Range& r) {
    const double plot_h = kHeight - kBottom - kTop;
    for (int i = 0; i <= 4; ++i) {
        const double v = r.lo + (r.hi - r.lo) * i / 4.0;
        const double y = kHeight - kBottom - plot_h * i / 4.0;
        os << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << y << "\" x2=\"" << kLeft << "\" y2=\"" << y
           << "\" stroke=\"black\"/>\n"
           << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
    }
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write: " + path.string());
    os << text;
}

} // namespace

double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                          const std::vector<Series>& series, bool log_x) {
    auto tx = [&](double x) { return log_x ? std::log10(x) : x; };
    double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            xlo = std::min(xlo, tx(s.x[i]));
            xhi = std::max(xhi, tx(s.x[i]));
            ylo = std::min(ylo, s.y[i]);
            yhi = std::max(yhi, s.y[i]);
        }
    if (!std::isfinite(xlo)) xlo = xhi = ylo = yhi = 0.0;
    const Range rx(xlo, xhi), ry(std::min(0.0, ylo), yhi);
    const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + plot_w * rx.frac(tx(x)); };
    auto py = [&](double y) { return kHeight - kBottom - plot_h * ry.frac(y); };

    std::ostringstream os;
    header(os, title);
    axes(os, xlabel, ylabel);
    y_ticks(os, ry);
    std::vector<double> xs;
    for (const auto& s : series) xs.insert(xs.end(), s.x.begin(), s.x.end());
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    for (double x : xs)
        os << "<text x=\"" << px(x) << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">" << num(x)
           << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kColors[si % std::size(kColors)];
        if (s.x.size() > 1) {
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i) os << px(s.x[i]) << "," << py(s.y[i]) << " ";
            os << "\"/>\n";
        }
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"4\" fill=\"" << color
               << "\"/>\n";
        const double ly = kTop + 18.0 * static_cast<double>(si);
        os << "<rect x=\"" << kWidth - kRight + 12 << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\""
           << color << "\"/>\n"
           << "<text x=\"" << kWidth - kRight + 28 << "\" y=\"" << ly + 10 << "\">" << escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string bar_plot_svg(const std::string& title, const std::string& ylabel, const std::vector<std::string>& labels,
                         const std::vector<double>& values) {
    double hi = 0.0;
    for (double v : values) hi = std::max(hi, v);
    const Range ry(0.0, hi);
    const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
    std::ostringstream os;
    header(os, title);
    axes(os, "", ylabel);
    y_ticks(os, ry);
    const double slot = plot_w / static_cast<double>(std::max<std::size_t>(values.size(), 1));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double h = plot_h * ry.frac(values[i]);
        const double x = kLeft + slot * (static_cast<double>(i) + 0.2);
        os << "<rect x=\"" << x << "\" y=\"" << kHeight - kBottom - h << "\" width=\"" << slot * 0.6
           << "\" height=\"" << h << "\" fill=\"" << kColors[i % std::size(kColors)] << "\"/>\n"
           << "<text x=\"" << x + slot * 0.3 << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"middle\">"
           << escape(labels[i]) << "</text>\n"
           << "<text x=\"" << x + slot * 0.3 << "\" y=\"" << kHeight - kBottom - h - 4
           << "\" text-anchor=\"middle\">" << num(values[i]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string markdown_table(const CsvTable& table) {
    std::ostringstream os;
    os << "|";
    for (const auto& h : table.header) os << " " << h << " |";
    os << "\n|";
    for (std::size_t i = 0; i < table.header.size(); ++i) os << " --- |";
    os << "\n";
    for (const auto& row : table.rows) {
        os << "|";
        for (const auto& f : row) os << " " << f << " |";
        os << "\n";
    }
    return os.str();
}

std::vector<std::filesystem::path> write_report(const CsvTable& table, const std::filesystem::path& plots_dir) {
    if (table.rows.empty()) throw DataError("report: table has no rows");
    if (!table.has("fd")) throw DataError("report: table has no fd column");
    std::filesystem::create_directories(plots_dir);
    std::vector<std::filesystem::path> written;
    const std::size_t n = table.rows.size();

    const std::string nfe_col = table.has("nfe_per_sample") ? "nfe_per_sample" : "nfe";
    if (table.has("method") && table.has(nfe_col)) {
        std::map<std::string, std::map<double, std::vector<double>>> by_method;
        for (std::size_t r = 0; r < n; ++r)
            by_method[table.at(r, "method")][table.number(r, nfe_col)].push_back(table.number(r, "fd"));
        std::vector<Series> series;
        for (const auto& [method, points] : by_method) {
            Series s{method, {}, {}};
            for (const auto& [nfe, fds] : points) {
                s.x.push_back(nfe);
                s.y.push_back(median(fds));
            }
            series.push_back(std::move(s));
        }
        const auto path = plots_dir / "fd_vs_nfe.svg";
        write_file(path, line_plot_svg("Frechet distance vs NFE", "NFE per sample", "fd", series, true));
        written.push_back(path);
    }

    if (table.has("lambda")) {
        std::map<double, std::vector<double>> by_lambda;
        for (std::size_t r = 0; r < n; ++r) {
            if (table.has("self_compare") && table.at(r, "self_compare") != "1") continue;
            by_lambda[table.number(r, "lambda")].push_back(table.number(r, "fd"));
        }
        if (!by_lambda.empty()) {
            Series s{"median over seeds", {}, {}};
            for (const auto& [l, fds] : by_lambda) {
                s.x.push_back(l);
                s.y.push_back(median(fds));
            }
            const auto path = plots_dir / "fd_vs_lambda.svg";
            write_file(path, line_plot_svg("Frechet distance vs self-compare weight", "lambda", "fd", {s}));
            written.push_back(path);
        }
    }

    if (table.has("loss_kind")) {
        std::map<std::string, std::vector<double>> by_kind;
        for (std::size_t r = 0; r < n; ++r) by_kind[table.at(r, "loss_kind")].push_back(table.number(r, "fd"));
        std::vector<std::string> labels;
        std::vector<double> values;
        for (const auto& [k, fds] : by_kind) {
            labels.push_back(k);
            values.push_back(median(fds));
        }
        const auto path = plots_dir / "loss_kinds.svg";
        write_file(path, bar_plot_svg("Median Frechet distance by loss kind", "fd", labels, values));
        written.push_back(path);
    }

    const auto md = plots_dir / "summary.md";
    write_file(md, "# Results\n\n" + markdown_table(table));
    written.push_back(md);
    return written;
}

} // namespace sd
