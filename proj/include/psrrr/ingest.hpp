#pragma once

// Genotype, SNP metadata and covariate parsing; SNP quality control, imputation and
// column standardisation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <psrrr/common.hpp>
#include <psrrr/tsv.hpp>

namespace psrrr {

// ---------------------------------------------------------------------------
// Chromosomes
// ---------------------------------------------------------------------------

inline bool is_valid_chromosome(std::string_view token) {
    if (token == "X" || token == "Y" || token == "MT") return true;
    if (token.empty() || token.size() > 2 || token.front() == '0') return false;
    int v = 0;
    for (char c : token) {
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    return v >= 1 && v <= 22;
}

inline bool is_autosome(std::string_view token) {
    return is_valid_chromosome(token) && token != "X" && token != "Y" && token != "MT";
}

/// Sort key: 1..22, X=23, Y=24, MT=25.
inline int chromosome_rank(std::string_view token) {
    if (token == "X") return 23;
    if (token == "Y") return 24;
    if (token == "MT") return 25;
    int v = 0;
    for (char c : token) v = v * 10 + (c - '0');
    return v;
}

// ---------------------------------------------------------------------------
// Genotypes
// ---------------------------------------------------------------------------

struct SnpInfo {
    std::string id;
    std::string chromosome;
    std::int64_t position = 0;
};

/// N x P genotype matrix. Before imputation missing calls are NaN.
struct GenotypeMatrix {
    Matrix values;
    std::vector<std::string> subject_ids;
    std::vector<SnpInfo> snps;
    bool standardized = false;

    Index n_subjects() const { return values.rows(); }
    Index n_snps() const { return values.cols(); }

    Index missing_count() const {
        Index n = 0;
        for (Index j = 0; j < values.cols(); ++j)
            for (Index i = 0; i < values.rows(); ++i) n += std::isnan(values(i, j)) ? 1 : 0;
        return n;
    }

    GenotypeMatrix select_snps(std::span<const Index> cols) const {
        GenotypeMatrix out;
        out.values.resize(values.rows(), static_cast<Index>(cols.size()));
        out.subject_ids = subject_ids;
        out.standardized = standardized;
        out.snps.reserve(cols.size());
        for (std::size_t k = 0; k < cols.size(); ++k) {
            out.values.col(static_cast<Index>(k)) = values.col(cols[k]);
            out.snps.push_back(snps[static_cast<std::size_t>(cols[k])]);
        }
        return out;
    }
};

inline std::vector<SnpInfo> parse_snp_metadata(std::istream& in) {
    constexpr std::string_view what = "SNP metadata";
    auto table = tsv::read_table(in, what);
    std::vector<SnpInfo> out;
    std::unordered_set<std::string> seen;
    for (const auto& row : table.rows) {
        if (row.fields.size() != 3)
            throw DataError(tsv::where(what, row.line) + ": expected 3 fields, got " +
                            std::to_string(row.fields.size()));
        SnpInfo s{row.fields[0], row.fields[1], tsv::parse_int(row.fields[2], what, row.line)};
        if (!is_valid_chromosome(s.chromosome))
            throw DataError(tsv::where(what, row.line) + ": unknown chromosome '" + s.chromosome + "'");
        if (s.position < 1) throw DataError(tsv::where(what, row.line) + ": position must be >= 1");
        if (!seen.insert(s.id).second)
            throw DataError(tsv::where(what, row.line) + ": duplicate SNP id '" + s.id + "'");
        out.push_back(std::move(s));
    }
    return out;
}

/// Genotype table: header `#subject_id<TAB>snp...`, then one row per subject with
/// values in {0,1,2,NA}. SNP positions are joined from the metadata by id.
inline GenotypeMatrix parse_genotypes(std::istream& genotypes, std::istream& snp_metadata) {
    constexpr std::string_view what = "genotype file";
    auto meta = parse_snp_metadata(snp_metadata);
    std::unordered_map<std::string, std::size_t> meta_index;
    for (std::size_t k = 0; k < meta.size(); ++k) meta_index.emplace(meta[k].id, k);

    auto table = tsv::read_table(genotypes, what);
    if (table.header.size() < 2) throw DataError("genotype file: header lists no SNPs");
    GenotypeMatrix g;
    const auto p = table.header.size() - 1;
    std::unordered_set<std::string> seen;
    for (std::size_t k = 1; k < table.header.size(); ++k) {
        const auto& id = table.header[k];
        if (!seen.insert(id).second) throw DataError("genotype file: duplicate SNP id '" + id + "'");
        auto it = meta_index.find(id);
        if (it == meta_index.end())
            throw DataError("genotype file: SNP '" + id + "' missing from SNP metadata");
        g.snps.push_back(meta[it->second]);
    }
    g.values.resize(static_cast<Index>(table.rows.size()), static_cast<Index>(p));
    std::unordered_set<std::string> subjects;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        if (row.fields.size() != p + 1)
            throw DataError(tsv::where(what, row.line) + ": expected " + std::to_string(p + 1) +
                            " fields, got " + std::to_string(row.fields.size()));
        if (!subjects.insert(row.fields[0]).second)
            throw DataError(tsv::where(what, row.line) + ": duplicate subject '" + row.fields[0] + "'");
        g.subject_ids.push_back(row.fields[0]);
        for (std::size_t k = 0; k < p; ++k) {
            const auto& f = row.fields[k + 1];
            double v;
            if (f == "NA")
                v = std::numeric_limits<double>::quiet_NaN();
            else if (f == "0" || f == "1" || f == "2")
                v = f[0] - '0';
            else
                throw DataError(tsv::where(what, row.line) + ": invalid genotype '" + f + "'");
            g.values(static_cast<Index>(i), static_cast<Index>(k)) = v;
        }
    }
    return g;
}

inline void write_snp_metadata(std::ostream& out, std::span<const SnpInfo> snps) {
    out << "#snp_id\tchromosome\tposition\n";
    for (const auto& s : snps) out << s.id << '\t' << s.chromosome << '\t' << s.position << '\n';
}

/// Writes allele counts; values must be NaN or integral in {0,1,2}.
inline void write_genotypes(std::ostream& out, const GenotypeMatrix& g) {
    out << "#subject_id";
    for (const auto& s : g.snps) out << '\t' << s.id;
    out << '\n';
    for (Index i = 0; i < g.n_subjects(); ++i) {
        out << g.subject_ids[static_cast<std::size_t>(i)];
        for (Index j = 0; j < g.n_snps(); ++j) {
            const double v = g.values(i, j);
            if (std::isnan(v))
                out << "\tNA";
            else
                out << '\t' << static_cast<int>(std::lround(v));
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Covariates
// ---------------------------------------------------------------------------

struct CovariateRecord {
    std::string subject_id;
    double age = 0.0;
    int sex = 0;
    std::string group;
};

struct CovariateTable {
    std::vector<CovariateRecord> records;

    const CovariateRecord* find(const std::string& subject) const {
        for (const auto& r : records)
            if (r.subject_id == subject) return &r;
        return nullptr;
    }

    /// Records reordered to `subjects`; throws if any subject lacks a row.
    CovariateTable aligned_to(std::span<const std::string> subjects) const {
        std::unordered_map<std::string, std::size_t> idx;
        for (std::size_t k = 0; k < records.size(); ++k) idx.emplace(records[k].subject_id, k);
        CovariateTable out;
        out.records.reserve(subjects.size());
        for (const auto& s : subjects) {
            auto it = idx.find(s);
            if (it == idx.end()) throw DataError("covariates: no row for subject '" + s + "'");
            out.records.push_back(records[it->second]);
        }
        return out;
    }
};

inline CovariateTable parse_covariates(std::istream& in) {
    constexpr std::string_view what = "covariate file";
    auto table = tsv::read_table(in, what);
    CovariateTable out;
    std::unordered_set<std::string> seen;
    for (const auto& row : table.rows) {
        if (row.fields.size() != 4)
            throw DataError(tsv::where(what, row.line) + ": expected 4 fields (subject_id, age, sex, group)");
        CovariateRecord r;
        r.subject_id = row.fields[0];
        r.age = tsv::parse_double(row.fields[1], what, row.line);
        const auto sex = tsv::parse_int(row.fields[2], what, row.line);
        if (sex != 0 && sex != 1) throw DataError(tsv::where(what, row.line) + ": sex must be 0 or 1");
        r.sex = static_cast<int>(sex);
        r.group = row.fields[3];
        if (!seen.insert(r.subject_id).second)
            throw DataError(tsv::where(what, row.line) + ": duplicate subject '" + r.subject_id + "'");
        out.records.push_back(std::move(r));
    }
    return out;
}

inline void write_covariates(std::ostream& out, const CovariateTable& t) {
    out << "#subject_id\tage\tsex\tgroup\n";
    for (const auto& r : t.records)
        out << r.subject_id << '\t' << tsv::fmt(r.age) << '\t' << r.sex << '\t' << r.group << '\n';
}

// ---------------------------------------------------------------------------
// Quality control
// ---------------------------------------------------------------------------

/// 1-df chi-square goodness-of-fit test of genotype counts against Hardy-Weinberg
/// proportions. Monomorphic SNPs return 1.
inline double hwe_pvalue(double n_hom_minor, double n_het, double n_hom_major) {
    if (n_hom_minor < 0 || n_het < 0 || n_hom_major < 0)
        throw ConfigError("hwe_pvalue: genotype counts must be non-negative");
    const double n = n_hom_minor + n_het + n_hom_major;
    if (n <= 0) throw ConfigError("hwe_pvalue: total genotype count must be positive");
    const double p = (2.0 * n_hom_minor + n_het) / (2.0 * n);
    const double q = 1.0 - p;
    if (p <= 0.0 || q <= 0.0) return 1.0;
    const std::array<double, 3> observed{n_hom_minor, n_het, n_hom_major};
    const std::array<double, 3> expected{n * p * p, 2.0 * n * p * q, n * q * q};
    double chi2 = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
        const double d = observed[k] - expected[k];
        chi2 += d * d / expected[k];
    }
    // Upper tail of chi-square with 1 df.
    return std::erfc(std::sqrt(chi2 / 2.0));
}

struct QcThresholds {
    double call_rate_min = 0.95;
    double hwe_p_min = 5e-7;
    double maf_min = 0.1;
    bool autosomes_only = true;
};

enum QcTag : unsigned {
    kTagCallRate = 1u << 0,
    kTagHwe = 1u << 1,
    kTagMaf = 1u << 2,
    kTagNonAutosome = 1u << 3,
    kTagZeroVariance = 1u << 4,
};

inline std::string qc_tag_string(unsigned tags) {
    static constexpr std::array<std::pair<unsigned, const char*>, 5> names{{
        {kTagCallRate, "call_rate"},
        {kTagHwe, "hwe"},
        {kTagMaf, "maf"},
        {kTagNonAutosome, "non_autosome"},
        {kTagZeroVariance, "zero_variance"},
    }};
    std::string out;
    for (const auto& [bit, name] : names) {
        if (!(tags & bit)) continue;
        if (!out.empty()) out += ',';
        out += name;
    }
    return out.empty() ? "-" : out;
}

struct SnpQc {
    SnpInfo snp;
    double call_rate = 0.0;
    double maf = 0.0;
    double hwe_p = 1.0;
    unsigned tags = 0;

    bool retained() const { return tags == 0; }
};

struct QcReport {
    std::vector<SnpQc> snps;

    std::size_t input_count() const { return snps.size(); }
    std::size_t retained_count() const {
        return static_cast<std::size_t>(
            std::count_if(snps.begin(), snps.end(), [](const SnpQc& s) { return s.retained(); }));
    }
    std::size_t removed_count() const { return input_count() - retained_count(); }

    std::vector<std::string> removed_with(unsigned tag) const {
        std::vector<std::string> out;
        for (const auto& s : snps)
            if (s.tags & tag) out.push_back(s.snp.id);
        return out;
    }

    void tag(const std::string& snp_id, unsigned tag) {
        for (auto& s : snps)
            if (s.snp.id == snp_id) s.tags |= tag;
    }
};

/// Thrown when quality control removes every SNP. Carries the full report.
class AllFilteredError : public DataError {
public:
    explicit AllFilteredError(QcReport report)
        : DataError("quality control removed all " + std::to_string(report.input_count()) + " SNPs"),
          report_(std::move(report)) {}
    const QcReport& report() const { return report_; }

private:
    QcReport report_;
};

/// Per-SNP call rate, MAF and HWE p-value computed from observed (non-missing) calls.
inline SnpQc snp_qc_metrics(const SnpInfo& snp, const Eigen::Ref<const Vector>& column) {
    std::array<double, 3> counts{0, 0, 0};
    Index observed = 0;
    for (Index i = 0; i < column.size(); ++i) {
        const double v = column[i];
        if (std::isnan(v)) continue;
        counts[static_cast<std::size_t>(std::lround(v))] += 1;
        ++observed;
    }
    SnpQc m;
    m.snp = snp;
    m.call_rate = column.size() ? static_cast<double>(observed) / static_cast<double>(column.size()) : 0.0;
    if (observed > 0) {
        const double freq = (counts[1] + 2.0 * counts[2]) / (2.0 * static_cast<double>(observed));
        m.maf = std::min(freq, 1.0 - freq);
        m.hwe_p = hwe_pvalue(counts[2], counts[1], counts[0]);
    }
    return m;
}

inline std::pair<GenotypeMatrix, QcReport> qc_filter(const GenotypeMatrix& g, const QcThresholds& t = {}) {
    if (g.standardized) throw ConfigError("qc_filter: genotypes must not be standardized");
    QcReport report;
    std::vector<Index> keep;
    for (Index j = 0; j < g.n_snps(); ++j) {
        auto m = snp_qc_metrics(g.snps[static_cast<std::size_t>(j)], g.values.col(j));
        if (m.call_rate < t.call_rate_min) m.tags |= kTagCallRate;
        if (m.hwe_p < t.hwe_p_min) m.tags |= kTagHwe;
        if (m.maf < t.maf_min) m.tags |= kTagMaf;
        if (t.autosomes_only && !is_autosome(m.snp.chromosome)) m.tags |= kTagNonAutosome;
        if (m.retained()) keep.push_back(j);
        report.snps.push_back(std::move(m));
    }
    if (keep.empty()) throw AllFilteredError(std::move(report));
    return {g.select_snps(keep), std::move(report)};
}

inline void write_qc_report(std::ostream& out, const QcReport& r) {
    out << "#snp_id\tchromosome\tposition\tcall_rate\tmaf\thwe_p\tstatus\ttags\n";
    for (const auto& s : r.snps) {
        out << s.snp.id << '\t' << s.snp.chromosome << '\t' << s.snp.position << '\t' << tsv::fmt(s.call_rate)
            << '\t' << tsv::fmt(s.maf) << '\t' << tsv::fmt(s.hwe_p) << '\t' << (s.retained() ? "retained" : "removed")
            << '\t' << qc_tag_string(s.tags) << '\n';
    }
    out << "# summary\tinput=" << r.input_count() << "\tretained=" << r.retained_count()
        << "\tremoved=" << r.removed_count() << "\tcall_rate=" << r.removed_with(kTagCallRate).size()
        << "\thwe=" << r.removed_with(kTagHwe).size() << "\tmaf=" << r.removed_with(kTagMaf).size()
        << "\tnon_autosome=" << r.removed_with(kTagNonAutosome).size()
        << "\tzero_variance=" << r.removed_with(kTagZeroVariance).size() << '\n';
}

// ---------------------------------------------------------------------------
// Imputation and standardisation
// ---------------------------------------------------------------------------

/// Replaces each missing call by the mean of the observed calls of its SNP.
inline GenotypeMatrix impute_missing(GenotypeMatrix g) {
    for (Index j = 0; j < g.n_snps(); ++j) {
        auto col = g.values.col(j);
        double sum = 0.0;
        Index observed = 0;
        for (Index i = 0; i < col.size(); ++i) {
            if (std::isnan(col[i])) continue;
            sum += col[i];
            ++observed;
        }
        if (observed == 0)
            throw DataError("impute_missing: SNP '" + g.snps[static_cast<std::size_t>(j)].id + "' has no observed calls");
        if (observed == col.size()) continue;
        const double mean = sum / static_cast<double>(observed);
        for (Index i = 0; i < col.size(); ++i)
            if (std::isnan(col[i])) col[i] = mean;
    }
    return g;
}

/// Centres one column and scales it to unit Euclidean norm. Returns false (leaving the
/// column centred) when it has no variation.
inline bool standardize_column(Eigen::Ref<Vector> col) {
    col.array() -= col.mean();
    const double norm = col.norm();
    if (!(norm > 1e-12 * std::sqrt(static_cast<double>(col.size())))) return false;
    col /= norm;
    return true;
}

/// Centres every column and scales it to unit norm. Zero-variance columns are dropped
/// and their ids appended to `dropped`; without a `dropped` sink they are an error.
inline GenotypeMatrix standardize(const GenotypeMatrix& g, std::vector<std::string>* dropped = nullptr) {
    if (g.values.hasNaN()) throw DataError("standardize: genotype matrix has missing values");
    GenotypeMatrix out = g;
    std::vector<Index> keep;
    for (Index j = 0; j < out.n_snps(); ++j) {
        Vector col = out.values.col(j);
        if (standardize_column(col)) {
            out.values.col(j) = col;
            keep.push_back(j);
            continue;
        }
        const auto& id = g.snps[static_cast<std::size_t>(j)].id;
        if (!dropped) throw DataError("standardize: SNP '" + id + "' has zero variance");
        dropped->push_back(id);
    }
    if (static_cast<Index>(keep.size()) != out.n_snps()) out = out.select_snps(keep);
    out.standardized = true;
    return out;
}

/// QC, mean imputation and standardisation in sequence. Zero-variance SNPs are tagged
/// in the returned report.
inline std::pair<GenotypeMatrix, QcReport> prepare_genotypes(const GenotypeMatrix& raw, const QcThresholds& t = {}) {
    auto [filtered, report] = qc_filter(raw, t);
    std::vector<std::string> dropped;
    auto standardized = standardize(impute_missing(std::move(filtered)), &dropped);
    for (const auto& id : dropped) report.tag(id, kTagZeroVariance);
    if (standardized.n_snps() == 0) throw AllFilteredError(std::move(report));
    return {std::move(standardized), std::move(report)};
}

} // namespace psrrr
