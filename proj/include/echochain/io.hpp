#pragma once

// CSV output with '#' metadata lines and shortest round-trip numbers, and the
// matching reader.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

namespace echochain {

inline constexpr std::string_view kVersion = "0.1.0";

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double x) {
    if (x == 0.0) return std::signbit(x) ? "-0" : "0";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    if (r.ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
    return {buf, r.ptr};
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
        throw std::invalid_argument("not a number: '" + std::string(s) + "'");
    return v;
}

/// Ordered "# key: value" metadata block.
using Metadata = std::vector<std::pair<std::string, std::string>>;

class CsvWriter {
public:
    CsvWriter(std::ostream& os, const Metadata& meta, const std::vector<std::string>& columns)
        : os_(os), ncol_(columns.size()) {
        for (const auto& [k, v] : meta) os_ << "# " << k << ": " << v << '\n';
        for (std::size_t i = 0; i < columns.size(); ++i) os_ << (i ? "," : "") << columns[i];
        os_ << '\n';
    }

    void row(const std::vector<double>& values) {
        if (values.size() != ncol_) throw std::invalid_argument("CsvWriter: wrong number of values");
        for (std::size_t i = 0; i < values.size(); ++i) os_ << (i ? "," : "") << format_double(values[i]);
        os_ << '\n';
    }

private:
    std::ostream& os_;
    std::size_t ncol_;
};

struct CsvTable {
    std::map<std::string, std::string> meta;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    [[nodiscard]] std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw std::invalid_argument("CSV has no column '" + name + "'");
    }

    [[nodiscard]] std::vector<double> values(const std::string& name) const {
        const std::size_t c = column(name);
        std::vector<double> v;
        v.reserve(rows.size());
        for (const auto& r : rows) v.push_back(r[c]);
        return v;
    }

    [[nodiscard]] bool has_column(const std::string& name) const {
        for (const auto& c : columns)
            if (c == name) return true;
        return false;
    }
};

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t p = line.find(',', start);
        out.push_back(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
        if (p == std::string_view::npos) break;
        start = p + 1;
    }
    return out;
}

inline CsvTable read_csv(std::istream& is) {
    CsvTable t;
    std::string line;
    bool have_header = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::size_t colon = line.find(": ");
            if (colon != std::string::npos && colon > 2) t.meta[line.substr(2, colon - 2)] = line.substr(colon + 2);
            continue;
        }
        const auto fields = split_commas(line);
        if (!have_header) {
            for (auto f : fields) t.columns.emplace_back(f);
            have_header = true;
            continue;
        }
        if (fields.size() != t.columns.size()) throw std::invalid_argument("CSV row has wrong number of fields");
        std::vector<double> r;
        r.reserve(fields.size());
        for (auto f : fields) r.push_back(parse_double(f));
        t.rows.push_back(std::move(r));
    }
    if (!have_header) throw std::invalid_argument("CSV has no header row");
    return t;
}

inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open '" + path + "'");
    return read_csv(in);
}

} // namespace echochain
