#pragma once

// Labelled dense matrices in two interchangeable encodings.
//
// TSV:    `#<corner>\t<col label>...` header, then `<row label>\t<value>...` rows.
// Binary: little-endian; magic "PSRRDNS1", u64 rows, u64 cols, u32 corner-label length
//         + bytes, then for each row label and each column label a u32 length + bytes,
//         then rows*cols f64 values in row-major order.
//
// read_dense() picks the encoding from the first eight bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <psrrr/common.hpp>
#include <psrrr/tsv.hpp>

namespace psrrr {

inline constexpr char kDenseMagic[8] = {'P', 'S', 'R', 'R', 'D', 'N', 'S', '1'};

struct DenseTable {
    std::string corner = "id";
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    Matrix values;
};

inline void write_dense_tsv(std::ostream& out, const DenseTable& t) {
    out << '#' << t.corner;
    for (const auto& c : t.col_labels) out << '\t' << c;
    out << '\n';
    for (Index i = 0; i < t.values.rows(); ++i) {
        out << t.row_labels[static_cast<std::size_t>(i)];
        for (Index j = 0; j < t.values.cols(); ++j) out << '\t' << tsv::fmt(t.values(i, j));
        out << '\n';
    }
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "binary dense format assumes a little-endian host");

inline void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_string(std::ostream& out, const std::string& s) {
    const auto n = static_cast<std::uint32_t>(s.size());
    out.write(reinterpret_cast<const char*>(&n), 4);
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 8)) throw DataError("dense binary: truncated header");
    return v;
}
inline std::string get_string(std::istream& in) {
    std::uint32_t n = 0;
    if (!in.read(reinterpret_cast<char*>(&n), 4)) throw DataError("dense binary: truncated label");
    std::string s(n, '\0');
    if (n && !in.read(s.data(), n)) throw DataError("dense binary: truncated label");
    return s;
}

} // namespace detail

inline void write_dense_binary(std::ostream& out, const DenseTable& t) {
    out.write(kDenseMagic, 8);
    detail::put_u64(out, static_cast<std::uint64_t>(t.values.rows()));
    detail::put_u64(out, static_cast<std::uint64_t>(t.values.cols()));
    detail::put_string(out, t.corner);
    for (const auto& r : t.row_labels) detail::put_string(out, r);
    for (const auto& c : t.col_labels) detail::put_string(out, c);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = t.values;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * 8));
}

inline DenseTable read_dense_binary(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kDenseMagic, 8) != 0) throw DataError("dense binary: bad magic");
    DenseTable t;
    const auto rows = detail::get_u64(in), cols = detail::get_u64(in);
    t.corner = detail::get_string(in);
    for (std::uint64_t i = 0; i < rows; ++i) t.row_labels.push_back(detail::get_string(in));
    for (std::uint64_t j = 0; j < cols; ++j) t.col_labels.push_back(detail::get_string(in));
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(static_cast<Index>(rows),
                                                                            static_cast<Index>(cols));
    if (!in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * 8)))
        throw DataError("dense binary: truncated values");
    t.values = rm;
    return t;
}

inline DenseTable read_dense_tsv(std::istream& in, std::string_view what) {
    auto table = tsv::read_table(in, what);
    if (table.header.empty()) throw DataError(std::string(what) + ": empty header");
    DenseTable t;
    t.corner = table.header[0];
    t.col_labels.assign(table.header.begin() + 1, table.header.end());
    const auto cols = t.col_labels.size();
    t.values.resize(static_cast<Index>(table.rows.size()), static_cast<Index>(cols));
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        if (row.fields.size() != cols + 1)
            throw DataError(tsv::where(what, row.line) + ": expected " + std::to_string(cols + 1) + " fields");
        t.row_labels.push_back(row.fields[0]);
        for (std::size_t j = 0; j < cols; ++j)
            t.values(static_cast<Index>(i), static_cast<Index>(j)) = tsv::parse_double(row.fields[j + 1], what, row.line);
    }
    return t;
}

inline DenseTable read_dense(std::istream& in, std::string_view what) {
    char head[8] = {};
    in.read(head, 8);
    const auto got = in.gcount();
    in.clear();
    in.seekg(0);
    if (got == 8 && std::memcmp(head, kDenseMagic, 8) == 0) return read_dense_binary(in);
    return read_dense_tsv(in, what);
}

} // namespace psrrr
