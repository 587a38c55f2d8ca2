#pragma once

// Stability-selection ranking. Pathways are ranked by how often the rank-1 group-penalised
// model selects them over random half-samples; within each subsample a lasso rank-1 model
// over the (deduplicated) SNPs of the selected pathways then gives SNP and gene frequencies.
// A permutation test scores how highly a target gene list sits in the pathway ranking.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include <psrrr/common.hpp>
#include <psrrr/design.hpp>
#include <psrrr/ingest.hpp>
#include <psrrr/model.hpp>
#include <psrrr/parallel.hpp>
#include <psrrr/pathmap.hpp>
#include <psrrr/solver.hpp>
#include <psrrr/tsv.hpp>

namespace psrrr {

/// floor(fraction * n) distinct row indices in increasing order, deterministic in (seed, b).
inline std::vector<Index> subsample_rows(Index n, double fraction, std::uint64_t seed, Index b) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("subsample_rows: fraction must lie in (0, 1)");
    const auto m = static_cast<Index>(std::floor(fraction * static_cast<double>(n)));
    if (m < 2) throw ConfigError("subsample_rows: subsample would have fewer than 2 rows");
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::mt19937_64 rng(derive_seed(seed, 0x737562u, static_cast<std::uint64_t>(b)));
    // Partial Fisher-Yates: the first m slots end up a uniform m-subset.
    for (Index i = 0; i < m; ++i) {
        std::uniform_int_distribution<Index> pick(i, n - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    idx.resize(static_cast<std::size_t>(m));
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline std::string row_set_hash(const std::vector<Index>& rows) {
    std::string s;
    for (auto r : rows) s += std::to_string(r) + ',';
    return hex64(fnv1a64(s));
}

/// Design data shared read-only by all subsample fits: the SNP columns used by any pathway
/// (once each) and, per pathway, which of those columns form its block.
struct RankingContext {
    Matrix snps;                              ///< N x U, columns follow `snp_index`
    std::vector<Index> snp_index;             ///< column -> annotation SNP index
    std::vector<std::vector<Index>> group_cols;
    PathwayAnnotation annotation;

    Index n_rows() const { return snps.rows(); }
    Index n_groups() const { return static_cast<Index>(group_cols.size()); }

    /// `x` has one column per annotation SNP (annotation.snp_ids order).
    static RankingContext from_aligned(const Matrix& x, const PathwayAnnotation& ann) {
        if (x.cols() != static_cast<Index>(ann.snp_ids.size()))
            throw ConfigError("ranking: matrix width does not match the annotation SNP universe");
        RankingContext c;
        c.annotation = ann;
        std::vector<Index> col_of(ann.snp_ids.size(), -1);
        for (const auto& p : ann.pathways)
            for (auto j : p.snps) col_of[static_cast<std::size_t>(j)] = 0;
        for (std::size_t j = 0; j < col_of.size(); ++j)
            if (col_of[j] == 0) {
                col_of[j] = static_cast<Index>(c.snp_index.size());
                c.snp_index.push_back(static_cast<Index>(j));
            }
        c.snps.resize(x.rows(), static_cast<Index>(c.snp_index.size()));
        for (std::size_t k = 0; k < c.snp_index.size(); ++k) c.snps.col(static_cast<Index>(k)) = x.col(c.snp_index[k]);
        for (const auto& p : ann.pathways) {
            std::vector<Index> cols;
            for (auto j : p.snps) cols.push_back(col_of[static_cast<std::size_t>(j)]);
            c.group_cols.push_back(std::move(cols));
        }
        return c;
    }

    /// Standardised genotypes matched to the annotation by SNP id.
    static RankingContext from_genotypes(const GenotypeMatrix& g, const PathwayAnnotation& ann) {
        if (!g.standardized) throw ConfigError("ranking: genotypes must be standardized");
        std::unordered_map<std::string, Index> col_of;
        for (Index j = 0; j < g.n_snps(); ++j) col_of.emplace(g.snps[static_cast<std::size_t>(j)].id, j);
        Matrix aligned = Matrix::Zero(g.n_subjects(), static_cast<Index>(ann.snp_ids.size()));
        std::vector<char> used(ann.snp_ids.size(), 0);
        for (const auto& p : ann.pathways)
            for (auto j : p.snps) used[static_cast<std::size_t>(j)] = 1;
        for (std::size_t j = 0; j < used.size(); ++j) {
            if (!used[j]) continue;
            auto it = col_of.find(ann.snp_ids[j]);
            if (it == col_of.end())
                throw DataError("ranking: annotation SNP '" + ann.snp_ids[j] + "' is not in the genotype matrix");
            aligned.col(static_cast<Index>(j)) = g.values.col(it->second);
        }
        return from_aligned(aligned, ann);
    }

    /// SNP columns restricted to `rows`, re-centred and rescaled to unit norm. Columns that
    /// are constant on the subsample become zero.
    Matrix subsample_snps(const std::vector<Index>& rows) const {
        Matrix xs(static_cast<Index>(rows.size()), snps.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) xs.row(static_cast<Index>(i)) = snps.row(rows[i]);
        for (Index j = 0; j < xs.cols(); ++j) {
            Vector col = xs.col(j);
            if (!standardize_column(col)) col.setZero();
            xs.col(j) = col;
        }
        return xs;
    }

    GroupedDesign expanded(const Matrix& xs) const {
        GroupedDesign d;
        Index total = 0;
        for (const auto& g : group_cols) total += static_cast<Index>(g.size());
        d.x.resize(xs.rows(), total);
        Index c = 0;
        for (const auto& g : group_cols) {
            for (auto k : g) d.x.col(c++) = xs.col(k);
            d.offsets.push_back(c);
        }
        return d;
    }
};

inline Matrix subsample_phenotypes(const Matrix& y, const std::vector<Index>& rows) {
    Matrix ys(static_cast<Index>(rows.size()), y.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ys.row(static_cast<Index>(i)) = y.row(rows[i]);
    ys.rowwise() -= ys.colwise().mean();
    return ys;
}

struct SubsampleRecord {
    Index index = 0;
    std::vector<Index> rows;
    std::string row_hash;
    std::vector<Index> selected;      ///< pathway indices
    std::vector<double> block_norms;  ///< ||b_l|| for each selected pathway
    double lambda = 0.0;
    double lambda_max = 0.0;
    int iterations = 0;
    bool converged = false;
    // second level
    Index z = 0;                      ///< distinct SNPs entering the lasso
    std::vector<Index> snps;          ///< selected annotation SNP indices
    std::vector<Index> genes;         ///< attributed gene indices
    double lasso_lambda = 0.0;
    double lasso_lambda_max = 0.0;
    int lasso_iterations = 0;
    bool lasso_converged = true;
    bool second_level_done = false;
};

struct RankingRow {
    Index rank = 0;
    std::string id;
    Index count = 0;
    double pi = 0.0;
    Index size = 0;
    std::vector<std::string> extra;
};

struct RankingTable {
    std::string entity;                    ///< "pathway", "snp" or "gene"
    std::string size_label = "size";
    std::vector<std::string> extra_columns;
    Index n_subsamples = 0;
    std::vector<RankingRow> rows;

    /// Orders by descending frequency, then ascending id, and assigns ranks 1..n.
    void finalize() {
        for (auto& r : rows) r.pi = n_subsamples ? double(r.count) / double(n_subsamples) : 0.0;
        std::sort(rows.begin(), rows.end(), [](const RankingRow& a, const RankingRow& b) {
            if (a.count != b.count) return a.count > b.count;
            return a.id < b.id;
        });
        for (std::size_t k = 0; k < rows.size(); ++k) rows[k].rank = static_cast<Index>(k + 1);
    }

    const RankingRow* find(const std::string& id) const {
        for (const auto& r : rows)
            if (r.id == id) return &r;
        return nullptr;
    }
};

inline void write_ranking_table(std::ostream& out, const RankingTable& t) {
    out << "#rank\t" << t.entity << "\tpi\tcount\t" << t.size_label;
    for (const auto& c : t.extra_columns) out << '\t' << c;
    out << '\n';
    for (const auto& r : t.rows) {
        out << r.rank << '\t' << r.id << '\t' << tsv::fmt(r.pi) << '\t' << r.count << '\t' << r.size;
        for (const auto& e : r.extra) out << '\t' << e;
        out << '\n';
    }
}

/// Pathway ranks keyed by name, read back from a ranking table.
inline std::vector<std::pair<std::string, Index>> read_pathway_ranks(std::istream& in) {
    const auto t = tsv::read_table(in, "pathway ranking");
    std::vector<std::pair<std::string, Index>> out;
    for (const auto& row : t.rows) {
        if (row.fields.size() < 2) throw DataError(tsv::where("pathway ranking", row.line) + ": too few fields");
        out.emplace_back(row.fields[1], tsv::parse_int(row.fields[0], "pathway ranking", row.line));
    }
    return out;
}

struct RankingOptions {
    FitOptions fit;            ///< gamma defaults to 0.8
    Index n_subsamples = 1000;
    double fraction = 0.5;
    std::uint64_t seed = 0;
    unsigned workers = 1;
};

struct PathwayRanking {
    RankingTable table;
    std::vector<SubsampleRecord> records;
    bool all_empty = false;    ///< no subsample selected any pathway
    Index selection_events = 0;
};

inline RankingTable pathway_table(const std::vector<SubsampleRecord>& records, const PathwayAnnotation& ann) {
    RankingTable t;
    t.entity = "pathway";
    t.extra_columns = {"n_genes", "weight"};
    t.n_subsamples = static_cast<Index>(records.size());
    std::vector<Index> counts(static_cast<std::size_t>(ann.n_pathways()), 0);
    for (const auto& r : records)
        for (auto l : r.selected) ++counts[static_cast<std::size_t>(l)];
    for (Index l = 0; l < ann.n_pathways(); ++l) {
        const auto& p = ann.pathways[static_cast<std::size_t>(l)];
        t.rows.push_back({0, p.name, counts[static_cast<std::size_t>(l)], 0.0, p.size(),
                          {std::to_string(p.genes.size()), tsv::fmt(p.weight)}});
    }
    t.finalize();
    return t;
}

/// Fits the rank-1 model on each of B half-samples (re-standardised design, re-centred
/// phenotypes) and counts pathway selections.
inline PathwayRanking rank_pathways(const Matrix& y, const RankingContext& ctx, const Vector& weights,
                                    const RankingOptions& o) {
    check_fit_options(o.fit);
    if (o.n_subsamples < 1) throw ConfigError("rank_pathways: need at least one subsample");
    if (y.rows() != ctx.n_rows()) throw ConfigError("rank_pathways: phenotype rows do not match genotype rows");
    if (weights.size() != ctx.n_groups()) throw ConfigError("rank_pathways: expected one weight per pathway");
    if ((weights.array() <= 0.0).any()) throw ConfigError("rank_pathways: weights must be positive");
    // Validates fraction and subsample size before any work is scheduled.
    (void)subsample_rows(ctx.n_rows(), o.fraction, o.seed, 0);

    PathwayRanking out;
    out.records = parallel_map<SubsampleRecord>(
        static_cast<std::size_t>(o.n_subsamples), o.workers, [&](std::size_t b) {
            SubsampleRecord rec;
            rec.index = static_cast<Index>(b);
            rec.rows = subsample_rows(ctx.n_rows(), o.fraction, o.seed, rec.index);
            rec.row_hash = row_set_hash(rec.rows);
            const GroupedDesign d = ctx.expanded(ctx.subsample_snps(rec.rows));
            const Matrix ys = subsample_phenotypes(y, rec.rows);
            const auto fit = fit_rank1(ys, d, weights, o.fit);
            rec.selected = fit.selected;
            for (auto l : fit.selected) rec.block_norms.push_back(fit.b.segment(d.group_start(l), d.group_size(l)).norm());
            rec.lambda = fit.lambda;
            rec.lambda_max = fit.lambda_max;
            rec.iterations = fit.iterations;
            rec.converged = fit.converged && fit.solver_converged;
            return rec;
        });
    out.table = pathway_table(out.records, ctx.annotation);
    out.all_empty = true;
    for (const auto& r : out.records) {
        out.selection_events += static_cast<Index>(r.selected.size());
        if (!r.selected.empty()) out.all_empty = false;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Second level: SNPs and genes
// ---------------------------------------------------------------------------

struct LassoRank1Fit {
    Vector beta;   ///< unit norm or zero
    Vector alpha;
    double lambda = 0.0;
    double lambda_max = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Rank-1 reduced-rank regression with a lasso penalty on the genotype loading, by the same
/// alternation as fit_rank1 with lambda = gamma * max_j |x_j' Y alpha|.
inline LassoRank1Fit fit_lasso_rank1(const Matrix& y, const Matrix& x, double gamma, double tol = 1e-4,
                                     int max_alt = 100, const LassoOptions& lo = {}) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("fit_lasso_rank1: gamma must lie in (0, 1)");
    LassoRank1Fit fit;
    fit.alpha = Vector::Constant(y.cols(), 1.0 / std::sqrt(static_cast<double>(y.cols())));
    fit.beta = Vector::Zero(x.cols());
    Vector raw;
    for (int it = 1; it <= max_alt; ++it) {
        fit.iterations = it;
        const Vector z = y * fit.alpha;
        fit.lambda_max = lasso_lambda_max(x, z);
        if (!(fit.lambda_max > 0.0)) {
            fit.beta.setZero();
            break;
        }
        fit.lambda = gamma * fit.lambda_max;
        const auto res = lasso_cd(z, x, fit.lambda, lo, raw.size() ? &raw : nullptr);
        if (res.beta.isZero(0.0)) {
            fit.beta.setZero();
            break;
        }
        raw = res.beta;
        const Vector beta = res.beta / res.beta.norm();
        const Vector alpha = update_a(beta, x, y);
        const double db = aligned_change(beta, fit.beta), da = aligned_change(alpha, fit.alpha);
        fit.beta = beta;
        fit.alpha = alpha;
        if (db < tol && da < tol) {
            fit.converged = true;
            break;
        }
    }
    if (fit.beta.isZero(0.0)) fit.converged = true;
    return fit;
}

/// Genes credited for SNP j given the selected pathways: genes mapped to j that belong to
/// at least one selected pathway which itself contains j.
inline std::vector<Index> attribute_genes(const PathwayAnnotation& ann, const std::vector<Index>& selected_pathways,
                                          const std::vector<Index>& selected_snps) {
    std::vector<Index> genes;
    for (auto j : selected_snps) {
        const auto& mapped = ann.genes_of_snp[static_cast<std::size_t>(j)];
        for (auto l : selected_pathways) {
            const auto& p = ann.pathways[static_cast<std::size_t>(l)];
            if (std::find(p.snps.begin(), p.snps.end(), j) == p.snps.end()) continue;
            for (auto g : mapped)
                if (std::binary_search(p.genes.begin(), p.genes.end(), g)) genes.push_back(g);
        }
    }
    std::sort(genes.begin(), genes.end());
    genes.erase(std::unique(genes.begin(), genes.end()), genes.end());
    return genes;
}

struct SnpGeneRanking {
    RankingTable snps;
    RankingTable genes;
    bool all_empty = false;
};

/// Runs the second-level lasso on every record (in place) and builds SNP and gene tables.
/// Records must come from rank_pathways on the same data and context.
inline SnpGeneRanking rank_snps_genes(std::vector<SubsampleRecord>& records, const Matrix& y,
                                      const RankingContext& ctx, double gamma_lasso = 0.8, unsigned workers = 1,
                                      double tol = 1e-4, int max_alt = 100) {
    if (!(gamma_lasso > 0.0 && gamma_lasso < 1.0)) throw ConfigError("rank_snps_genes: gamma must lie in (0, 1)");
    if (y.rows() != ctx.n_rows()) throw ConfigError("rank_snps_genes: phenotype rows do not match genotype rows");
    const auto& ann = ctx.annotation;
    parallel_for(records.size(), workers, [&](std::size_t b) {
        auto& rec = records[b];
        rec.snps.clear();
        rec.genes.clear();
        rec.z = 0;
        rec.second_level_done = true;
        if (rec.selected.empty()) return;
        std::vector<Index> cols;
        for (auto l : rec.selected) {
            const auto& g = ctx.group_cols[static_cast<std::size_t>(l)];
            cols.insert(cols.end(), g.begin(), g.end());
        }
        std::sort(cols.begin(), cols.end());
        cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
        rec.z = static_cast<Index>(cols.size());
        const Matrix xs_all = ctx.subsample_snps(rec.rows);
        Matrix xs(xs_all.rows(), rec.z);
        for (std::size_t k = 0; k < cols.size(); ++k) xs.col(static_cast<Index>(k)) = xs_all.col(cols[k]);
        const Matrix ys = subsample_phenotypes(y, rec.rows);
        const auto fit = fit_lasso_rank1(ys, xs, gamma_lasso, tol, max_alt);
        rec.lasso_lambda = fit.lambda;
        rec.lasso_lambda_max = fit.lambda_max;
        rec.lasso_iterations = fit.iterations;
        rec.lasso_converged = fit.converged;
        for (std::size_t k = 0; k < cols.size(); ++k)
            if (fit.beta[static_cast<Index>(k)] != 0.0) rec.snps.push_back(ctx.snp_index[static_cast<std::size_t>(cols[k])]);
        std::sort(rec.snps.begin(), rec.snps.end());
        rec.genes = attribute_genes(ann, rec.selected, rec.snps);
    });

    SnpGeneRanking out;
    out.all_empty = std::all_of(records.begin(), records.end(), [](const auto& r) { return r.selected.empty(); });
    const auto B = static_cast<Index>(records.size());

    std::unordered_map<Index, Index> snp_count, gene_count;
    for (const auto& r : records) {
        for (auto j : r.snps) ++snp_count[j];
        for (auto g : r.genes) ++gene_count[g];
    }
    std::vector<Index> pathways_of_snp(ann.snp_ids.size(), 0);
    for (const auto& p : ann.pathways)
        for (auto j : p.snps) ++pathways_of_snp[static_cast<std::size_t>(j)];
    std::vector<Index> pathways_of_gene(ann.gene_symbols.size(), 0), snps_of_gene(ann.gene_symbols.size(), 0);
    for (const auto& p : ann.pathways)
        for (auto g : p.genes) ++pathways_of_gene[static_cast<std::size_t>(g)];
    for (const auto& genes : ann.genes_of_snp)
        for (auto g : genes) ++snps_of_gene[static_cast<std::size_t>(g)];

    out.snps.entity = "snp";
    out.snps.size_label = "n_pathways";
    out.snps.extra_columns = {"genes"};
    out.snps.n_subsamples = B;
    for (auto j : ctx.snp_index) {
        std::string genes;
        for (auto g : ann.genes_of_snp[static_cast<std::size_t>(j)])
            genes += (genes.empty() ? "" : ",") + ann.gene_symbols[static_cast<std::size_t>(g)];
        auto it = snp_count.find(j);
        out.snps.rows.push_back({0, ann.snp_ids[static_cast<std::size_t>(j)], it == snp_count.end() ? 0 : it->second,
                                 0.0, pathways_of_snp[static_cast<std::size_t>(j)], {genes.empty() ? "-" : genes}});
    }
    out.snps.finalize();

    out.genes.entity = "gene";
    out.genes.size_label = "n_snps";
    out.genes.extra_columns = {"n_pathways"};
    out.genes.n_subsamples = B;
    for (std::size_t g = 0; g < ann.gene_symbols.size(); ++g) {
        if (pathways_of_gene[g] == 0) continue;
        auto it = gene_count.find(static_cast<Index>(g));
        out.genes.rows.push_back({0, ann.gene_symbols[g], it == gene_count.end() ? 0 : it->second, 0.0,
                                  snps_of_gene[g], {std::to_string(pathways_of_gene[g])}});
    }
    out.genes.finalize();
    return out;
}

inline nlohmann::json subsample_json(const SubsampleRecord& r, const PathwayAnnotation& ann) {
    nlohmann::json j;
    j["b"] = r.index;
    j["n_rows"] = r.rows.size();
    j["row_hash"] = r.row_hash;
    auto& sel = j["selected"] = nlohmann::json::array();
    for (auto l : r.selected) sel.push_back(ann.pathways[static_cast<std::size_t>(l)].name);
    j["block_norms"] = r.block_norms;
    j["lambda"] = r.lambda;
    j["lambda_max"] = r.lambda_max;
    j["iterations"] = r.iterations;
    j["converged"] = r.converged;
    if (r.second_level_done) {
        j["z"] = r.z;
        auto& snps = j["snps"] = nlohmann::json::array();
        for (auto s : r.snps) snps.push_back(ann.snp_ids[static_cast<std::size_t>(s)]);
        auto& genes = j["genes"] = nlohmann::json::array();
        for (auto g : r.genes) genes.push_back(ann.gene_symbols[static_cast<std::size_t>(g)]);
        j["lasso_lambda"] = r.lasso_lambda;
        j["lasso_lambda_max"] = r.lasso_lambda_max;
        j["lasso_iterations"] = r.lasso_iterations;
        j["lasso_converged"] = r.lasso_converged;
    }
    return j;
}

/// One JSON object per line, in subsample order.
inline void write_subsample_ledger(std::ostream& out, const std::vector<SubsampleRecord>& records,
                                   const PathwayAnnotation& ann) {
    for (const auto& r : records) out << subsample_json(r, ann).dump() << '\n';
}

/// Inverse of write_subsample_ledger. Row sets are regenerated from (seed, fraction) and
/// checked against the stored hashes.
inline std::vector<SubsampleRecord> read_subsample_ledger(std::istream& in, const PathwayAnnotation& ann, Index n_rows,
                                                          double fraction, std::uint64_t seed) {
    std::vector<SubsampleRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("subsample ledger line " + std::to_string(lineno) + ": " + e.what());
        }
        SubsampleRecord r;
        try {
            r.index = j.at("b").get<Index>();
            r.rows = subsample_rows(n_rows, fraction, seed, r.index);
            r.row_hash = row_set_hash(r.rows);
            if (r.row_hash != j.at("row_hash").get<std::string>())
                throw DataError("subsample ledger line " + std::to_string(lineno) +
                                ": row set does not match (different seed, fraction or subject count)");
            for (const auto& name : j.at("selected")) {
                const Index l = ann.pathway_index(name.get<std::string>());
                if (l < 0) throw DataError("subsample ledger: unknown pathway '" + name.get<std::string>() + "'");
                r.selected.push_back(l);
            }
            r.block_norms = j.at("block_norms").get<std::vector<double>>();
            r.lambda = j.at("lambda").get<double>();
            r.lambda_max = j.at("lambda_max").get<double>();
            r.iterations = j.at("iterations").get<int>();
            r.converged = j.at("converged").get<bool>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("subsample ledger line " + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(std::move(r));
    }
    if (out.empty()) throw DataError("subsample ledger is empty");
    return out;
}

// ---------------------------------------------------------------------------
// Enrichment
// ---------------------------------------------------------------------------

/// Sum over target genes of the mean rank of the pathways containing the gene.
/// `membership[g]` lists pathway indices; `rank_of[l]` is pathway l's rank.
inline double enrichment_score(const std::vector<std::vector<Index>>& membership, const std::vector<double>& rank_of) {
    double score = 0.0;
    for (const auto& m : membership) {
        double s = 0.0;
        for (auto l : m) s += rank_of[static_cast<std::size_t>(l)];
        score += s / static_cast<double>(m.size());
    }
    return score;
}

struct EnrichmentResult {
    double score = 0.0;
    double p_value = 1.0;
    Index n_perm = 0;
    Index n_lower = 0;
    std::vector<std::string> targets_used;
    std::vector<std::string> targets_dropped;  ///< in no ranked pathway
};

/// Permutation p-value: fraction of uniformly random re-rankings of the pathways whose score
/// is strictly lower than the observed one. Scores within 1e-12 (relative) of the observed
/// value count as ties, so summation-order rounding cannot create spurious "lower" scores.
inline EnrichmentResult enrichment_permutation(const std::vector<std::vector<Index>>& membership,
                                               const std::vector<double>& rank_of, Index n_perm, std::uint64_t seed,
                                               unsigned workers = 1) {
    if (membership.empty()) throw DataError("enrichment: no target gene belongs to any ranked pathway");
    if (n_perm < 1) throw ConfigError("enrichment: n_perm must be positive");
    for (const auto& m : membership)
        if (m.empty()) throw ConfigError("enrichment: every target gene needs at least one pathway");
    EnrichmentResult res;
    res.score = enrichment_score(membership, rank_of);
    res.n_perm = n_perm;
    const double cut = res.score - 1e-12 * std::max(1.0, std::abs(res.score));
    constexpr Index kChunk = 1000;
    const Index n_chunks = (n_perm + kChunk - 1) / kChunk;
    const auto lower = parallel_map<Index>(static_cast<std::size_t>(n_chunks), workers, [&](std::size_t c) {
        std::mt19937_64 rng(derive_seed(seed, 0x656e72u, c));
        std::vector<double> perm = rank_of;
        Index count = 0;
        const Index todo = std::min(kChunk, n_perm - static_cast<Index>(c) * kChunk);
        for (Index k = 0; k < todo; ++k) {
            std::shuffle(perm.begin(), perm.end(), rng);
            if (enrichment_score(membership, perm) < cut) ++count;
        }
        return count;
    });
    for (auto c : lower) res.n_lower += c;
    res.p_value = double(res.n_lower) / double(n_perm);
    return res;
}

/// Enrichment of `targets` (gene symbols, case-insensitive) in a pathway ranking.
inline EnrichmentResult enrichment_test(const std::vector<std::pair<std::string, Index>>& pathway_ranks,
                                        const PathwayAnnotation& ann, const std::vector<std::string>& targets,
                                        Index n_perm = 100000, std::uint64_t seed = 0, unsigned workers = 1) {
    std::vector<double> rank_of;
    std::vector<Index> ann_index;
    for (const auto& [name, rank] : pathway_ranks) {
        const Index l = ann.pathway_index(name);
        if (l < 0) throw DataError("enrichment: ranked pathway '" + name + "' is not in the annotation");
        ann_index.push_back(l);
        rank_of.push_back(static_cast<double>(rank));
    }
    std::unordered_map<std::string, Index> gene_of;
    for (std::size_t g = 0; g < ann.gene_symbols.size(); ++g) gene_of.emplace(to_upper(ann.gene_symbols[g]), static_cast<Index>(g));
    std::vector<std::vector<Index>> membership;
    EnrichmentResult res;
    std::vector<std::string> seen;
    for (const auto& t : targets) {
        const auto key = to_upper(t);
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
        seen.push_back(key);
        std::vector<Index> m;
        auto it = gene_of.find(key);
        if (it != gene_of.end())
            for (std::size_t k = 0; k < ann_index.size(); ++k) {
                const auto& genes = ann.pathways[static_cast<std::size_t>(ann_index[k])].genes;
                if (std::binary_search(genes.begin(), genes.end(), it->second)) m.push_back(static_cast<Index>(k));
            }
        if (m.empty()) res.targets_dropped.push_back(t);
        else {
            res.targets_used.push_back(t);
            membership.push_back(std::move(m));
        }
    }
    if (membership.empty()) throw DataError("enrichment: no target gene belongs to any ranked pathway");
    auto perm = enrichment_permutation(membership, rank_of, n_perm, seed, workers);
    perm.targets_used = std::move(res.targets_used);
    perm.targets_dropped = std::move(res.targets_dropped);
    return perm;
}

inline void write_enrichment(std::ostream& out, const EnrichmentResult& r) {
    out << "#score\tp_value\tn_perm\tn_lower\tn_targets\tn_dropped\n";
    out << tsv::fmt(r.score) << '\t' << tsv::fmt(r.p_value) << '\t' << r.n_perm << '\t' << r.n_lower << '\t'
        << r.targets_used.size() << '\t' << r.targets_dropped.size() << '\n';
    out << "# dropped_targets";
    for (const auto& t : r.targets_dropped) out << '\t' << t;
    out << '\n';
}

} // namespace psrrr
