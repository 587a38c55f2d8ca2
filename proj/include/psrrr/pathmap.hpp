#pragma once

// SNP -> gene -> pathway mapping and the overlap-expanded group design.

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <set>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <psrrr/common.hpp>
#include <psrrr/design.hpp>
#include <psrrr/ingest.hpp>
#include <psrrr/tsv.hpp>

namespace psrrr {

struct GeneLocation {
    std::string symbol;
    std::string chromosome;
    std::int64_t start = 0;
    std::int64_t end = 0;
};

inline void validate_gene_location(const GeneLocation& g, const std::string& context) {
    if (!is_valid_chromosome(g.chromosome))
        throw DataError(context + ": unknown chromosome '" + g.chromosome + "' for gene '" + g.symbol + "'");
    if (g.start > g.end) throw DataError(context + ": gene '" + g.symbol + "' has start > end");
}

inline std::vector<GeneLocation> parse_gene_locations(std::istream& in) {
    constexpr std::string_view what = "gene location file";
    auto table = tsv::read_table(in, what);
    std::vector<GeneLocation> out;
    for (const auto& row : table.rows) {
        if (row.fields.size() != 4)
            throw DataError(tsv::where(what, row.line) + ": expected 4 fields (gene_symbol, chromosome, start_bp, end_bp)");
        GeneLocation g{row.fields[0], row.fields[1], tsv::parse_int(row.fields[2], what, row.line),
                       tsv::parse_int(row.fields[3], what, row.line)};
        validate_gene_location(g, tsv::where(what, row.line));
        out.push_back(std::move(g));
    }
    return out;
}

inline void write_gene_locations(std::ostream& out, std::span<const GeneLocation> genes) {
    out << "#gene_symbol\tchromosome\tstart_bp\tend_bp\n";
    for (const auto& g : genes) out << g.symbol << '\t' << g.chromosome << '\t' << g.start << '\t' << g.end << '\n';
}

struct GeneSet {
    std::string name;
    std::string description;
    std::vector<std::string> genes;
};

/// GMT: name TAB description TAB gene... one pathway per line. No header.
inline std::vector<GeneSet> parse_gmt(std::istream& in) {
    std::vector<GeneSet> out;
    std::unordered_set<std::string> names;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        auto fields = tsv::split(line);
        if (fields.size() < 3)
            throw DataError(tsv::where("GMT file", lineno) + ": expected name, description and at least one gene");
        GeneSet s{fields[0], fields[1], {}};
        for (std::size_t k = 2; k < fields.size(); ++k)
            if (!fields[k].empty()) s.genes.push_back(fields[k]);
        if (!names.insert(s.name).second)
            throw DataError(tsv::where("GMT file", lineno) + ": duplicate pathway '" + s.name + "'");
        out.push_back(std::move(s));
    }
    if (out.empty()) throw DataError("GMT file: no gene sets");
    return out;
}

inline void write_gmt(std::ostream& out, std::span<const GeneSet> sets) {
    for (const auto& s : sets) {
        out << s.name << '\t' << s.description;
        for (const auto& g : s.genes) out << '\t' << g;
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// SNP -> gene
// ---------------------------------------------------------------------------

/// Both directions of the SNP/gene window mapping. Gene indices refer to `gene_symbols`,
/// which holds each distinct symbol (case-insensitive) in first-appearance order.
struct SnpGeneMap {
    std::int64_t window_bp = 0;
    std::vector<std::string> gene_symbols;
    std::vector<std::vector<Index>> genes_of_snp;
    std::vector<std::vector<Index>> snps_of_gene;

    std::vector<Index> unmapped_snps() const {
        std::vector<Index> out;
        for (std::size_t j = 0; j < genes_of_snp.size(); ++j)
            if (genes_of_snp[j].empty()) out.push_back(static_cast<Index>(j));
        return out;
    }

    std::unordered_map<std::string, Index> symbol_index;  ///< upper-cased symbol -> gene

    /// Index of a gene by case-insensitive symbol, or -1.
    Index find_gene(const std::string& symbol) const {
        auto it = symbol_index.find(to_upper(symbol));
        return it == symbol_index.end() ? -1 : it->second;
    }
};

/// SNP s maps to gene g iff they share a chromosome and
/// start(g) - window <= position(s) <= end(g) + window.
inline SnpGeneMap map_snps_to_genes(std::span<const SnpInfo> snps, std::span<const GeneLocation> genes,
                                    std::int64_t window_bp = 10000) {
    if (window_bp < 0) throw ConfigError("map_snps_to_genes: window must be non-negative");
    SnpGeneMap m;
    m.window_bp = window_bp;
    m.genes_of_snp.resize(snps.size());

    std::vector<Index> interval_gene(genes.size());
    for (std::size_t k = 0; k < genes.size(); ++k) {
        validate_gene_location(genes[k], "gene locations");
        auto [it, inserted] = m.symbol_index.emplace(to_upper(genes[k].symbol), static_cast<Index>(m.gene_symbols.size()));
        if (inserted) m.gene_symbols.push_back(genes[k].symbol);
        interval_gene[k] = it->second;
    }
    m.snps_of_gene.resize(m.gene_symbols.size());

    // Per chromosome: intervals sorted by start; a SNP can only hit intervals whose start
    // lies within [pos - window - longest, pos + window].
    struct Interval {
        std::int64_t start, end;
        Index gene;
    };
    std::map<std::string, std::vector<Interval>> by_chrom;
    std::map<std::string, std::int64_t> longest;
    for (std::size_t k = 0; k < genes.size(); ++k) {
        by_chrom[genes[k].chromosome].push_back({genes[k].start, genes[k].end, interval_gene[k]});
        auto& l = longest[genes[k].chromosome];
        l = std::max(l, genes[k].end - genes[k].start);
    }
    for (auto& [chrom, v] : by_chrom)
        std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) {
            return a.start != b.start ? a.start < b.start : a.gene < b.gene;
        });

    for (std::size_t j = 0; j < snps.size(); ++j) {
        const auto& s = snps[j];
        if (!is_valid_chromosome(s.chromosome))
            throw DataError("map_snps_to_genes: unknown chromosome '" + s.chromosome + "' for SNP '" + s.id + "'");
        auto it = by_chrom.find(s.chromosome);
        if (it == by_chrom.end()) continue;
        const auto& v = it->second;
        const std::int64_t lo = s.position - window_bp - longest[s.chromosome];
        auto first = std::lower_bound(v.begin(), v.end(), lo, [](const Interval& a, std::int64_t x) { return a.start < x; });
        auto& hits = m.genes_of_snp[j];
        for (auto p = first; p != v.end() && p->start - window_bp <= s.position; ++p)
            if (s.position <= p->end + window_bp) hits.push_back(p->gene);
        std::sort(hits.begin(), hits.end());
        hits.erase(std::unique(hits.begin(), hits.end()), hits.end());
        for (auto g : hits) m.snps_of_gene[static_cast<std::size_t>(g)].push_back(static_cast<Index>(j));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Gene -> pathway
// ---------------------------------------------------------------------------

struct Pathway {
    std::string name;
    std::vector<Index> snps;   ///< member SNP indices, ordered by (chromosome, position)
    std::vector<Index> genes;  ///< matched gene indices into PathwayAnnotation::gene_symbols
    double weight = 1.0;

    Index size() const { return static_cast<Index>(snps.size()); }
};

/// L non-empty (possibly overlapping) groups of SNPs. SNP indices refer to `snp_ids`.
struct PathwayAnnotation {
    std::vector<std::string> snp_ids;
    std::vector<std::string> gene_symbols;
    std::vector<std::vector<Index>> genes_of_snp;  ///< SNP -> mapped genes (any pathway)
    std::vector<Pathway> pathways;

    Index n_pathways() const { return static_cast<Index>(pathways.size()); }

    std::vector<Index> sizes() const {
        std::vector<Index> s;
        for (const auto& p : pathways) s.push_back(p.size());
        return s;
    }

    Vector weights() const {
        Vector w(n_pathways());
        for (Index l = 0; l < n_pathways(); ++l) w[l] = pathways[static_cast<std::size_t>(l)].weight;
        return w;
    }

    void set_weights(const Vector& w) {
        if (w.size() != n_pathways()) throw ConfigError("set_weights: expected one weight per pathway");
        for (Index l = 0; l < n_pathways(); ++l) {
            if (!(w[l] > 0.0)) throw ConfigError("set_weights: weights must be strictly positive");
            pathways[static_cast<std::size_t>(l)].weight = w[l];
        }
    }

    Index pathway_index(const std::string& name) const {
        for (std::size_t l = 0; l < pathways.size(); ++l)
            if (pathways[l].name == name) return static_cast<Index>(l);
        return -1;
    }
};

/// w_l = sqrt(S_l).
inline Vector init_weights(const PathwayAnnotation& a) {
    Vector w(a.n_pathways());
    for (Index l = 0; l < a.n_pathways(); ++l)
        w[l] = std::sqrt(static_cast<double>(a.pathways[static_cast<std::size_t>(l)].size()));
    return w;
}

enum class PathwayStatus { kRetained, kNoSnps, kExcluded, kUnlocated };

inline const char* to_string(PathwayStatus s) {
    switch (s) {
    case PathwayStatus::kRetained: return "retained";
    case PathwayStatus::kNoSnps: return "dropped_no_snps";
    case PathwayStatus::kExcluded: return "excluded";
    case PathwayStatus::kUnlocated: return "dropped_unlocated";
    }
    return "?";
}

struct MappingReport {
    struct Entry {
        std::string pathway;
        std::size_t n_genes_listed = 0;
        std::size_t n_genes_matched = 0;
        std::size_t n_snps = 0;
        PathwayStatus status = PathwayStatus::kRetained;
    };
    std::vector<Entry> entries;
    std::vector<std::string> unmatched_genes;  ///< gene-set symbols absent from gene locations
    std::vector<std::string> unmapped_snps;    ///< genotyped SNPs within no gene window
};

struct PathwayMapOptions {
    std::vector<std::string> exclude;   ///< pathway names to leave out
    bool drop_unlocated = false;        ///< drop (not reject) pathways with no located genes
};

/// Builds the pathway groups. `snp_gene_map` must have been built over exactly
/// `genotyped_snps`.
inline std::pair<PathwayAnnotation, MappingReport> map_genes_to_pathways(std::span<const GeneSet> gene_sets,
                                                                         const SnpGeneMap& snp_gene_map,
                                                                         std::span<const SnpInfo> genotyped_snps,
                                                                         const PathwayMapOptions& opts = {}) {
    if (gene_sets.empty()) throw DataError("map_genes_to_pathways: empty gene-set collection");
    if (snp_gene_map.genes_of_snp.size() != genotyped_snps.size())
        throw ConfigError("map_genes_to_pathways: SNP/gene map does not match the genotyped SNP list");

    PathwayAnnotation ann;
    MappingReport report;
    for (const auto& s : genotyped_snps) ann.snp_ids.push_back(s.id);
    ann.gene_symbols = snp_gene_map.gene_symbols;
    ann.genes_of_snp = snp_gene_map.genes_of_snp;

    std::unordered_set<std::string> excluded;
    for (const auto& e : opts.exclude) excluded.insert(e);

    auto snp_less = [&](Index a, Index b) {
        const auto& sa = genotyped_snps[static_cast<std::size_t>(a)];
        const auto& sb = genotyped_snps[static_cast<std::size_t>(b)];
        const int ra = chromosome_rank(sa.chromosome), rb = chromosome_rank(sb.chromosome);
        if (ra != rb) return ra < rb;
        if (sa.position != sb.position) return sa.position < sb.position;
        return a < b;
    };

    std::set<std::string> unmatched;
    std::vector<std::string> unlocated;
    for (const auto& set : gene_sets) {
        MappingReport::Entry entry;
        entry.pathway = set.name;
        entry.n_genes_listed = set.genes.size();
        Pathway p;
        p.name = set.name;
        std::vector<char> in_group(genotyped_snps.size(), 0);
        for (const auto& symbol : set.genes) {
            const Index g = snp_gene_map.find_gene(symbol);
            if (g < 0) {
                unmatched.insert(symbol);
                continue;
            }
            if (std::find(p.genes.begin(), p.genes.end(), g) != p.genes.end()) continue;
            p.genes.push_back(g);
            for (auto j : snp_gene_map.snps_of_gene[static_cast<std::size_t>(g)]) {
                if (in_group[static_cast<std::size_t>(j)]) continue;
                in_group[static_cast<std::size_t>(j)] = 1;
                p.snps.push_back(j);
            }
        }
        std::sort(p.genes.begin(), p.genes.end());
        std::sort(p.snps.begin(), p.snps.end(), snp_less);
        entry.n_genes_matched = p.genes.size();
        entry.n_snps = p.snps.size();
        if (excluded.count(set.name)) {
            entry.status = PathwayStatus::kExcluded;
        } else if (p.genes.empty() && !set.genes.empty()) {
            entry.status = PathwayStatus::kUnlocated;
            unlocated.push_back(set.name);
        } else if (p.snps.empty()) {
            entry.status = PathwayStatus::kNoSnps;
        } else {
            p.weight = std::sqrt(static_cast<double>(p.snps.size()));
            ann.pathways.push_back(std::move(p));
        }
        report.entries.push_back(std::move(entry));
    }
    if (!unlocated.empty() && !opts.drop_unlocated) {
        std::string names;
        for (const auto& n : unlocated) names += (names.empty() ? "" : ", ") + n;
        throw DataError("map_genes_to_pathways: no gene of these pathways has a known location: " + names);
    }
    report.unmatched_genes.assign(unmatched.begin(), unmatched.end());
    for (auto j : snp_gene_map.unmapped_snps()) report.unmapped_snps.push_back(ann.snp_ids[static_cast<std::size_t>(j)]);
    if (ann.pathways.empty()) throw DataError("map_genes_to_pathways: no pathway has any mapped SNP");
    return {std::move(ann), std::move(report)};
}

inline void write_mapping_report(std::ostream& out, const MappingReport& r) {
    out << "#pathway\tn_genes_listed\tn_genes_matched\tn_snps\tstatus\n";
    for (const auto& e : r.entries)
        out << e.pathway << '\t' << e.n_genes_listed << '\t' << e.n_genes_matched << '\t' << e.n_snps << '\t'
            << to_string(e.status) << '\n';
    out << "# unmatched_genes\t" << r.unmatched_genes.size();
    for (const auto& g : r.unmatched_genes) out << '\t' << g;
    out << "\n# unmapped_snps\t" << r.unmapped_snps.size();
    for (const auto& s : r.unmapped_snps) out << '\t' << s;
    out << '\n';
}

// ---------------------------------------------------------------------------
// Expanded design
// ---------------------------------------------------------------------------

struct ColumnRef {
    Index pathway;
    Index snp;  ///< column in the source genotype matrix
    bool operator==(const ColumnRef&) const = default;
};

/// Overlap-expanded design: pathway blocks laid side by side, shared SNPs duplicated.
struct ExpandedDesign {
    GroupedDesign design;
    std::vector<ColumnRef> columns;

    Index n_expanded() const { return static_cast<Index>(columns.size()); }
};

/// Expands a matrix whose columns follow `annotation.snp_ids` order.
inline ExpandedDesign expand_columns(const Eigen::Ref<const Matrix>& x, const PathwayAnnotation& ann) {
    if (x.cols() != static_cast<Index>(ann.snp_ids.size()))
        throw ConfigError("expand_design: matrix width does not match the annotation SNP universe");
    ExpandedDesign e;
    Index total = 0;
    for (const auto& p : ann.pathways) total += p.size();
    e.design.x.resize(x.rows(), total);
    e.design.offsets.assign(1, 0);
    e.columns.reserve(static_cast<std::size_t>(total));
    Index c = 0;
    for (Index l = 0; l < ann.n_pathways(); ++l) {
        for (auto j : ann.pathways[static_cast<std::size_t>(l)].snps) {
            if (j < 0 || j >= x.cols()) throw DataError("expand_design: SNP index out of range");
            e.design.x.col(c++) = x.col(j);
            e.columns.push_back({l, j});
        }
        e.design.offsets.push_back(c);
    }
    return e;
}

/// Expands a standardised genotype matrix. SNPs are matched by id, so an annotation that
/// references a SNP no longer present (e.g. removed by QC) is rejected.
inline ExpandedDesign expand_design(const GenotypeMatrix& g, const PathwayAnnotation& ann) {
    if (!g.standardized) throw ConfigError("expand_design: genotypes must be standardized");
    std::unordered_map<std::string, Index> col_of;
    for (Index j = 0; j < g.n_snps(); ++j) col_of.emplace(g.snps[static_cast<std::size_t>(j)].id, j);
    std::vector<Index> source(ann.snp_ids.size(), -1);
    for (const auto& p : ann.pathways)
        for (auto j : p.snps) {
            const auto& id = ann.snp_ids[static_cast<std::size_t>(j)];
            auto it = col_of.find(id);
            if (it == col_of.end())
                throw DataError("expand_design: pathway '" + p.name + "' references SNP '" + id +
                                "' that is not in the genotype matrix");
            source[static_cast<std::size_t>(j)] = it->second;
        }
    ExpandedDesign e = [&] {
        Matrix aligned = Matrix::Zero(g.n_subjects(), static_cast<Index>(ann.snp_ids.size()));
        for (std::size_t j = 0; j < source.size(); ++j)
            if (source[j] >= 0) aligned.col(static_cast<Index>(j)) = g.values.col(source[j]);
        return expand_columns(aligned, ann);
    }();
    for (auto& ref : e.columns) ref.snp = source[static_cast<std::size_t>(ref.snp)];
    return e;
}

// ---------------------------------------------------------------------------
// Summary statistics
// ---------------------------------------------------------------------------

struct DistributionSummary {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
};

struct MappingStats {
    DistributionSummary pathway_size;
    DistributionSummary snp_overlap;                ///< pathways per mapped SNP
    std::map<Index, Index> size_histogram;          ///< bin lower edge -> pathway count
    Index size_bin_width = 1;
    std::map<Index, Index> overlap_histogram;       ///< k -> SNPs in exactly k pathways
    Index n_mapped_snps = 0;
};

inline MappingStats mapping_stats(const PathwayAnnotation& ann, Index size_bins = 10) {
    MappingStats st;
    if (ann.pathways.empty()) return st;
    auto sizes = ann.sizes();
    const auto [mn, mx] = std::minmax_element(sizes.begin(), sizes.end());
    st.pathway_size = {static_cast<double>(*mn), static_cast<double>(*mx),
                       static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), Index{0})) /
                           static_cast<double>(sizes.size())};
    st.size_bin_width = std::max<Index>(1, (*mx - *mn + size_bins) / size_bins);
    for (auto s : sizes) st.size_histogram[*mn + (s - *mn) / st.size_bin_width * st.size_bin_width] += 1;

    std::vector<Index> count(ann.snp_ids.size(), 0);
    for (const auto& p : ann.pathways)
        for (auto j : p.snps) ++count[static_cast<std::size_t>(j)];
    Index lo = std::numeric_limits<Index>::max(), hi = 0, total = 0;
    for (auto k : count) {
        if (k == 0) continue;
        ++st.n_mapped_snps;
        st.overlap_histogram[k] += 1;
        lo = std::min(lo, k);
        hi = std::max(hi, k);
        total += k;
    }
    if (st.n_mapped_snps > 0)
        st.snp_overlap = {static_cast<double>(lo), static_cast<double>(hi),
                          static_cast<double>(total) / static_cast<double>(st.n_mapped_snps)};
    return st;
}

inline void write_mapping_stats(std::ostream& out, const MappingStats& st) {
    out << "#statistic\tmin\tmax\tmean\n";
    out << "pathway_size\t" << tsv::fmt(st.pathway_size.min) << '\t' << tsv::fmt(st.pathway_size.max) << '\t'
        << tsv::fmt(st.pathway_size.mean) << '\n';
    out << "snp_overlap\t" << tsv::fmt(st.snp_overlap.min) << '\t' << tsv::fmt(st.snp_overlap.max) << '\t'
        << tsv::fmt(st.snp_overlap.mean) << '\n';
    for (const auto& [edge, n] : st.size_histogram)
        out << "# size_bin\t" << edge << '\t' << edge + st.size_bin_width - 1 << '\t' << n << '\n';
    for (const auto& [k, n] : st.overlap_histogram) out << "# overlap\t" << k << '\t' << n << '\n';
}

} // namespace psrrr
