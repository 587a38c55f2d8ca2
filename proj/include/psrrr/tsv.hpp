#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <psrrr/common.hpp>

namespace psrrr::tsv {

inline std::vector<std::string> split(std::string_view line, char sep = '\t') {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            break;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

/// A data row together with its 1-based source line for error messages.
struct Row {
    std::size_t line = 0;
    std::vector<std::string> fields;
};

/// Reads a TSV table. The first non-empty line is the header; a leading '#' on it is
/// stripped. Later lines starting with '#' are comments. Trailing '\r' is removed.
struct Table {
    std::vector<std::string> header;
    std::vector<Row> rows;
};

inline Table read_table(std::istream& in, std::string_view what) {
    Table t;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!have_header) {
            std::string_view h(line);
            if (h.front() == '#') h.remove_prefix(1);
            t.header = split(h);
            have_header = true;
            continue;
        }
        if (line.front() == '#') continue;
        t.rows.push_back({lineno, split(line)});
    }
    if (!have_header) throw DataError(std::string(what) + ": empty file");
    return t;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open input file: " + path);
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open output file: " + path);
    return out;
}

inline std::string where(std::string_view what, std::size_t line) {
    return std::string(what) + " line " + std::to_string(line);
}

inline double parse_double(std::string_view s, std::string_view what, std::size_t line) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw DataError(where(what, line) + ": not a number: '" + std::string(s) + "'");
    return v;
}

inline std::int64_t parse_int(std::string_view s, std::string_view what, std::size_t line) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw DataError(where(what, line) + ": not an integer: '" + std::string(s) + "'");
    return v;
}

/// Shortest round-trip decimal representation.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

} // namespace psrrr::tsv
