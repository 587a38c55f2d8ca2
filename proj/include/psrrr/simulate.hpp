#pragma once

// Synthetic data: block-correlated genotypes, gene/pathway annotation with controlled
// overlap, rank-1 planted phenotypes and matching longitudinal trait tables.
//
// Genotypes come from a Gaussian copula: within each LD block two latent AR(1) chains per
// subject (one per haplotype) are thresholded at the MAF quantile and the allele indicators
// summed. The attained SNP correlation is lower than the latent rho and is not controlled
// exactly.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include <psrrr/common.hpp>
#include <psrrr/ingest.hpp>
#include <psrrr/parallel.hpp>
#include <psrrr/pathmap.hpp>
#include <psrrr/phenosig.hpp>

namespace psrrr {

struct SimulationSpec {
    Index n_subjects = 200;
    Index n_snps = 2000;
    Index n_pathways = 20;
    Index pathway_size_min = 40;     ///< SNPs, before overlap is added
    Index pathway_size_max = 150;
    double overlap_rate = 0.1;       ///< borrowed genes as a fraction of a pathway's own genes
    double maf_min = 0.15;
    double maf_max = 0.5;
    Index ld_block_size = 10;
    double ld_rho = 0.5;
    Index snps_per_gene = 5;
    Index snp_spacing_bp = 25000;
    Index n_chromosomes = 22;
    std::vector<Index> causal_pathways{0};
    Index causal_snps_per_pathway = 20;
    double signal_scale = 1.0;       ///< Y = scale * X b* a*' + E with ||b*|| = 1
    double noise_sd = 0.05;
    /// When positive, noise_sd is ignored and solved so that the mean marginal R^2 of a causal
    /// SNP against a single trait equals this value on the realised data.
    double target_marginal_r2 = 0.0;
    Index n_traits = 50;             ///< Q
    Index n_null_traits = 50;        ///< extra longitudinal traits with no genetic signal
    double group_effect = 1.0;       ///< AD-vs-CN slope shift on signal traits, in trait SD units
    /// Diagnosis follows tertiles of the standardised genetic score X b* plus noise with this SD.
    double diagnosis_noise = 0.5;
    std::vector<double> visits{6.0, 12.0, 24.0};
    std::uint64_t seed = 1;

    /// Every violated constraint, one message each.
    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (n_subjects < 4) v.push_back("n_subjects must be at least 4");
        if (n_snps < 1) v.push_back("n_snps must be positive");
        if (n_pathways < 1) v.push_back("n_pathways must be positive");
        if (pathway_size_min < 1 || pathway_size_max < pathway_size_min)
            v.push_back("pathway sizes must satisfy 1 <= pathway_size_min <= pathway_size_max");
        if (!(overlap_rate >= 0.0 && overlap_rate <= 1.0)) v.push_back("overlap_rate must lie in [0, 1]");
        if (!(maf_min > 0.0 && maf_max <= 0.5 && maf_min <= maf_max)) v.push_back("MAF range must lie in (0, 0.5]");
        if (ld_block_size < 1) v.push_back("ld_block_size must be positive");
        if (!(ld_rho >= 0.0 && ld_rho < 1.0)) v.push_back("ld_rho must lie in [0, 1)");
        if (snps_per_gene < 1) v.push_back("snps_per_gene must be positive");
        if (snp_spacing_bp <= 2 * 10000 + 200) v.push_back("snp_spacing_bp must exceed 20200 so gene windows do not overlap");
        if (n_chromosomes < 1 || n_chromosomes > 22) v.push_back("n_chromosomes must lie in [1, 22]");
        for (auto c : causal_pathways)
            if (c < 0 || c >= n_pathways) v.push_back("causal pathway index " + std::to_string(c) + " out of range");
        if (causal_snps_per_pathway < 0) v.push_back("causal_snps_per_pathway must be non-negative");
        if (!(signal_scale >= 0.0)) v.push_back("signal_scale must be non-negative");
        if (!(noise_sd >= 0.0)) v.push_back("noise_sd must be non-negative");
        if (!(target_marginal_r2 >= 0.0 && target_marginal_r2 < 1.0))
            v.push_back("target_marginal_r2 must lie in [0, 1)");
        if (n_traits < 1) v.push_back("n_traits must be positive");
        if (n_null_traits < 0) v.push_back("n_null_traits must be non-negative");
        if (!(diagnosis_noise >= 0.0)) v.push_back("diagnosis_noise must be non-negative");
        if (visits.size() < 2) v.push_back("at least two visit times are required");
        if (n_pathways * pathway_size_min > n_snps) v.push_back("n_snps cannot hold n_pathways disjoint pathways of minimum size");
        return v;
    }

    void validate() const {
        const auto v = violations();
        if (v.empty()) return;
        std::string msg = "invalid simulation spec:";
        for (const auto& s : v) msg += "\n  - " + s;
        throw ConfigError(msg);
    }
};

inline void to_json(nlohmann::json& j, const SimulationSpec& s) {
    j = {{"n_subjects", s.n_subjects}, {"n_snps", s.n_snps}, {"n_pathways", s.n_pathways},
         {"pathway_size_min", s.pathway_size_min}, {"pathway_size_max", s.pathway_size_max},
         {"overlap_rate", s.overlap_rate}, {"maf_min", s.maf_min}, {"maf_max", s.maf_max},
         {"ld_block_size", s.ld_block_size}, {"ld_rho", s.ld_rho}, {"snps_per_gene", s.snps_per_gene},
         {"snp_spacing_bp", s.snp_spacing_bp}, {"n_chromosomes", s.n_chromosomes},
         {"causal_pathways", s.causal_pathways}, {"causal_snps_per_pathway", s.causal_snps_per_pathway},
         {"signal_scale", s.signal_scale}, {"noise_sd", s.noise_sd},
         {"target_marginal_r2", s.target_marginal_r2}, {"n_traits", s.n_traits},
         {"n_null_traits", s.n_null_traits}, {"group_effect", s.group_effect},
         {"diagnosis_noise", s.diagnosis_noise}, {"visits", s.visits},
         {"seed", s.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, SimulationSpec& s) {
    if (!j.is_object()) throw ConfigError("simulation spec must be a JSON object");
    const nlohmann::json known = s;
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key())) throw ConfigError("simulation spec: unknown key '" + it.key() + "'");
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("simulation spec: bad value for '") + key + "'");
        }
    };
    get("n_subjects", s.n_subjects);
    get("n_snps", s.n_snps);
    get("n_pathways", s.n_pathways);
    get("pathway_size_min", s.pathway_size_min);
    get("pathway_size_max", s.pathway_size_max);
    get("overlap_rate", s.overlap_rate);
    get("maf_min", s.maf_min);
    get("maf_max", s.maf_max);
    get("ld_block_size", s.ld_block_size);
    get("ld_rho", s.ld_rho);
    get("snps_per_gene", s.snps_per_gene);
    get("snp_spacing_bp", s.snp_spacing_bp);
    get("n_chromosomes", s.n_chromosomes);
    get("causal_pathways", s.causal_pathways);
    get("causal_snps_per_pathway", s.causal_snps_per_pathway);
    get("signal_scale", s.signal_scale);
    get("noise_sd", s.noise_sd);
    get("target_marginal_r2", s.target_marginal_r2);
    get("n_traits", s.n_traits);
    get("n_null_traits", s.n_null_traits);
    get("group_effect", s.group_effect);
    get("diagnosis_noise", s.diagnosis_noise);
    get("visits", s.visits);
    get("seed", s.seed);
}

namespace detail {
inline std::string padded(const char* prefix, Index i, int width) {
    std::string n = std::to_string(i);
    if (static_cast<int>(n.size()) < width) n.insert(0, static_cast<std::size_t>(width) - n.size(), '0');
    return prefix + n;
}
} // namespace detail

/// SNP ids, chromosomes and positions: SNPs split into contiguous chromosome runs,
/// spaced `snp_spacing_bp` apart.
inline std::vector<SnpInfo> simulated_snp_layout(const SimulationSpec& s) {
    std::vector<SnpInfo> out;
    const Index per_chrom = (s.n_snps + s.n_chromosomes - 1) / s.n_chromosomes;
    for (Index j = 0; j < s.n_snps; ++j) {
        const Index c = j / per_chrom;
        const Index k = j % per_chrom;
        out.push_back({"rs" + std::to_string(j + 1), std::to_string(c + 1), 100000 + k * s.snp_spacing_bp});
    }
    return out;
}

/// Minor-allele counts for all subjects; deterministic in spec.seed and independent of
/// the worker count.
inline GenotypeMatrix gen_genotypes(const SimulationSpec& s, unsigned workers = 1) {
    s.validate();
    GenotypeMatrix g;
    g.snps = simulated_snp_layout(s);
    for (Index i = 0; i < s.n_subjects; ++i) g.subject_ids.push_back(detail::padded("S", i + 1, 4));
    g.values.resize(s.n_subjects, s.n_snps);
    const Index n_blocks = (s.n_snps + s.ld_block_size - 1) / s.ld_block_size;
    const boost::math::normal unit;
    const double innov = std::sqrt(1.0 - s.ld_rho * s.ld_rho);
    parallel_for(static_cast<std::size_t>(n_blocks), workers, [&](std::size_t blk) {
        std::mt19937_64 rng(derive_seed(s.seed, 0x67656eu, blk));
        std::uniform_real_distribution<double> maf_dist(s.maf_min, s.maf_max);
        std::normal_distribution<double> nd;
        const Index first = static_cast<Index>(blk) * s.ld_block_size;
        const Index count = std::min(s.ld_block_size, s.n_snps - first);
        std::vector<double> threshold(static_cast<std::size_t>(count));
        for (auto& t : threshold) t = boost::math::quantile(unit, maf_dist(rng));
        for (Index i = 0; i < s.n_subjects; ++i) {
            double h1 = nd(rng), h2 = nd(rng);
            for (Index k = 0; k < count; ++k) {
                if (k > 0) {
                    h1 = s.ld_rho * h1 + innov * nd(rng);
                    h2 = s.ld_rho * h2 + innov * nd(rng);
                }
                const double t = threshold[static_cast<std::size_t>(k)];
                g.values(i, first + k) = double(h1 < t) + double(h2 < t);
            }
        }
    });
    return g;
}

struct SimulatedAnnotation {
    std::vector<GeneLocation> genes;
    std::vector<GeneSet> gene_sets;
    std::vector<std::vector<Index>> pathway_snps;  ///< SNP indices per pathway (sorted)
};

/// Genes are runs of `snps_per_gene` consecutive SNPs on one chromosome. Each pathway first
/// receives its own disjoint genes (target size drawn log-uniformly in the size range and
/// rounded to whole genes), then borrows round(overlap_rate * own genes) genes from other
/// pathways. SNPs in genes no pathway owns stay outside all pathways.
inline SimulatedAnnotation gen_annotation(const SimulationSpec& s) {
    s.validate();
    const auto snps = simulated_snp_layout(s);
    SimulatedAnnotation out;
    std::vector<std::vector<Index>> gene_snps;
    for (Index j = 0; j < s.n_snps;) {
        std::vector<Index> members{j};
        Index k = j + 1;
        while (k < s.n_snps && static_cast<Index>(members.size()) < s.snps_per_gene &&
               snps[static_cast<std::size_t>(k)].chromosome == snps[static_cast<std::size_t>(j)].chromosome)
            members.push_back(k++);
        const auto& a = snps[static_cast<std::size_t>(members.front())];
        const auto& b = snps[static_cast<std::size_t>(members.back())];
        out.genes.push_back({detail::padded("GENE", static_cast<Index>(out.genes.size()) + 1, 5), a.chromosome,
                             a.position - 100, b.position + 100});
        gene_snps.push_back(std::move(members));
        j = k;
    }
    const Index n_genes = static_cast<Index>(gene_snps.size());

    std::mt19937_64 rng(derive_seed(s.seed, 0x616e6eu));
    std::uniform_real_distribution<double> u01;
    std::vector<Index> target(static_cast<std::size_t>(s.n_pathways));
    const double lo = std::log(static_cast<double>(s.pathway_size_min));
    const double hi = std::log(static_cast<double>(s.pathway_size_max));
    for (auto& t : target) t = static_cast<Index>(std::lround(std::exp(lo + (hi - lo) * u01(rng))));

    std::vector<Index> order(static_cast<std::size_t>(n_genes));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<Index>> own(static_cast<std::size_t>(s.n_pathways));
    std::size_t next = 0;
    for (Index l = 0; l < s.n_pathways; ++l) {
        Index size = 0;
        auto& genes = own[static_cast<std::size_t>(l)];
        while (size < target[static_cast<std::size_t>(l)] || genes.empty()) {
            if (next >= order.size())
                throw ConfigError("gen_annotation: n_snps too small for the drawn pathway sizes");
            const Index g = order[next++];
            genes.push_back(g);
            size += static_cast<Index>(gene_snps[static_cast<std::size_t>(g)].size());
        }
    }
    std::vector<std::vector<Index>> all = own;
    for (Index l = 0; l < s.n_pathways && s.n_pathways > 1; ++l) {
        const auto borrow = static_cast<Index>(std::lround(s.overlap_rate * double(own[static_cast<std::size_t>(l)].size())));
        std::vector<Index> pool;
        for (Index m = 0; m < s.n_pathways; ++m)
            if (m != l) pool.insert(pool.end(), own[static_cast<std::size_t>(m)].begin(), own[static_cast<std::size_t>(m)].end());
        std::shuffle(pool.begin(), pool.end(), rng);
        for (Index k = 0; k < std::min<Index>(borrow, static_cast<Index>(pool.size())); ++k)
            all[static_cast<std::size_t>(l)].push_back(pool[static_cast<std::size_t>(k)]);
    }
    for (Index l = 0; l < s.n_pathways; ++l) {
        auto& genes = all[static_cast<std::size_t>(l)];
        std::sort(genes.begin(), genes.end());
        GeneSet set;
        set.name = detail::padded("PATHWAY_", l + 1, 3);
        set.description = "simulated";
        std::vector<Index> members;
        for (auto g : genes) {
            set.genes.push_back(out.genes[static_cast<std::size_t>(g)].symbol);
            const auto& gs = gene_snps[static_cast<std::size_t>(g)];
            members.insert(members.end(), gs.begin(), gs.end());
        }
        std::sort(members.begin(), members.end());
        out.gene_sets.push_back(std::move(set));
        out.pathway_snps.push_back(std::move(members));
    }
    return out;
}

/// Centred, unit-norm copy of a genotype matrix; constant columns are left at zero.
inline Matrix standardized_columns(const Matrix& values) {
    Matrix x = values;
    for (Index j = 0; j < x.cols(); ++j) {
        Vector col = x.col(j);
        if (!standardize_column(col)) col.setZero();
        x.col(j) = col;
    }
    return x;
}

struct PlantedPhenotype {
    Matrix y;                        ///< N x Q, mean-centred
    Vector b;                        ///< true genotype loading over the SNP columns, unit norm
    Vector a;                        ///< true phenotype loading, unit norm
    std::vector<Index> causal_snps;
    double noise_sd = 0.0;           ///< noise level actually used
};

/// Mean over causal SNPs j and traits q of corr(x_j, signal_q + noise)^2 in expectation,
/// for noise with standard deviation `noise_sd`. Columns of `x` are unit-norm and centred.
inline double mean_marginal_r2(const Matrix& x, const Matrix& signal, const std::vector<Index>& causal,
                               double noise_sd) {
    if (causal.empty() || signal.cols() == 0) return 0.0;
    const double noise_ss = static_cast<double>(x.rows() - 1) * noise_sd * noise_sd;
    double total = 0.0;
    for (Index q = 0; q < signal.cols(); ++q) {
        const double denom = signal.col(q).squaredNorm() + noise_ss;
        if (denom <= 0.0) continue;
        for (auto j : causal) {
            const double c = x.col(j).dot(signal.col(q));
            total += c * c / denom;
        }
    }
    return total / static_cast<double>(causal.size() * static_cast<std::size_t>(signal.cols()));
}

/// Noise level at which mean_marginal_r2 equals `target`.
inline double noise_sd_for_marginal_r2(const Matrix& x, const Matrix& signal, const std::vector<Index>& causal,
                                       double target) {
    if (!(target > 0.0 && target < 1.0)) throw ConfigError("target marginal R^2 must lie in (0, 1)");
    if (mean_marginal_r2(x, signal, causal, 0.0) < target)
        throw ConfigError("target marginal R^2 exceeds what the noiseless signal attains");
    double lo = 0.0, hi = 1.0;
    while (mean_marginal_r2(x, signal, causal, hi) > target) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mean_marginal_r2(x, signal, causal, mid) > target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Y = scale * X b* a*' + E. `x` must have unit-norm centred columns indexed like the
/// annotation's SNP universe; `pathway_snps` gives each pathway's member columns.
inline PlantedPhenotype plant_rank1_phenotype(const Matrix& x, const std::vector<std::vector<Index>>& pathway_snps,
                                              const SimulationSpec& s) {
    s.validate();
    PlantedPhenotype out;
    std::mt19937_64 rng(derive_seed(s.seed, 0x706c616eu));
    std::normal_distribution<double> nd;
    std::vector<char> chosen(static_cast<std::size_t>(x.cols()), 0);
    for (auto l : s.causal_pathways) {
        if (l < 0 || static_cast<std::size_t>(l) >= pathway_snps.size())
            throw ConfigError("plant_rank1_phenotype: causal pathway not in annotation");
        auto members = pathway_snps[static_cast<std::size_t>(l)];
        if (s.causal_snps_per_pathway > static_cast<Index>(members.size()))
            throw ConfigError("plant_rank1_phenotype: causal SNP count exceeds pathway size");
        std::shuffle(members.begin(), members.end(), rng);
        for (Index k = 0; k < s.causal_snps_per_pathway; ++k) {
            const Index j = members[static_cast<std::size_t>(k)];
            if (j < 0 || j >= x.cols()) throw ConfigError("plant_rank1_phenotype: SNP index out of range");
            chosen[static_cast<std::size_t>(j)] = 1;
        }
    }
    out.b = Vector::Zero(x.cols());
    std::bernoulli_distribution coin(0.5);
    for (Index j = 0; j < x.cols(); ++j)
        if (chosen[static_cast<std::size_t>(j)]) {
            out.causal_snps.push_back(j);
            out.b[j] = coin(rng) ? 1.0 : -1.0;
        }
    if (!out.causal_snps.empty()) out.b.normalize();
    out.a.resize(s.n_traits);
    for (Index q = 0; q < s.n_traits; ++q) out.a[q] = nd(rng);
    out.a.normalize();
    out.y = s.signal_scale * (x * out.b) * out.a.transpose();
    out.noise_sd = s.target_marginal_r2 > 0.0
                       ? noise_sd_for_marginal_r2(x, out.y, out.causal_snps, s.target_marginal_r2)
                       : s.noise_sd;
    for (Index q = 0; q < out.y.cols(); ++q)
        for (Index i = 0; i < out.y.rows(); ++i) out.y(i, q) += out.noise_sd * nd(rng);
    out.y.rowwise() -= out.y.colwise().mean();
    return out;
}

/// Independent standard normal entries, mean-centred columns.
inline Matrix null_phenotype(Index n, Index q, std::uint64_t seed) {
    if (n < 1 || q < 1) throw ConfigError("null_phenotype: dimensions must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Matrix y(n, q);
    for (Index k = 0; k < q; ++k)
        for (Index i = 0; i < n; ++i) y(i, k) = nd(rng);
    y.rowwise() -= y.colwise().mean();
    return y;
}

/// Ages in [60, 85] to one decimal, sex 0/1 and groups AD, MCI, CN in equal thirds. Without a liability
/// the groups are assigned at random; with one, the top third of liability is AD and the
/// bottom third CN.
inline CovariateTable gen_covariates(const std::vector<std::string>& subjects, std::uint64_t seed,
                                     const Vector* liability = nullptr) {
    if (liability && liability->size() != static_cast<Index>(subjects.size()))
        throw ConfigError("gen_covariates: one liability value per subject");
    std::mt19937_64 rng(derive_seed(seed, 0x636f76u));
    std::uniform_real_distribution<double> age(60.0, 85.0);
    std::bernoulli_distribution sex(0.5);
    static const char* kGroups[] = {"AD", "MCI", "CN"};
    const std::size_t n = subjects.size();
    std::vector<int> group(n);
    if (liability) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return (*liability)[static_cast<Index>(a)] > (*liability)[static_cast<Index>(b)]; });
        for (std::size_t k = 0; k < n; ++k) group[order[k]] = static_cast<int>(k * 3 / n);
    } else {
        for (std::size_t i = 0; i < n; ++i) group[i] = static_cast<int>(i % 3);
        std::shuffle(group.begin(), group.end(), rng);
    }
    CovariateTable t;
    for (std::size_t i = 0; i < n; ++i)
        t.records.push_back({subjects[i], std::round(age(rng) * 10.0) / 10.0, sex(rng) ? 1 : 0, kGroups[group[i]]});
    return t;
}

/// Standardised genetic score X b* plus N(0, noise^2).
inline Vector diagnosis_liability(const Matrix& x, const Vector& b, double noise, std::uint64_t seed) {
    Vector s = x * b;
    const double sd = std::sqrt((s.array() - s.mean()).square().sum() / std::max<double>(1.0, double(s.size() - 1)));
    if (sd > 0.0) s = (s.array() - s.mean()) / sd;
    std::mt19937_64 rng(derive_seed(seed, 0x646961u));
    std::normal_distribution<double> nd;
    for (Index i = 0; i < s.size(); ++i) s[i] += noise * nd(rng);
    return s;
}

/// Long-format table whose per-subject slopes are: for the first Q traits, the planted
/// phenotype plus a group shift (AD: +effect, MCI: +effect/2, CN: 0, in units of the trait
/// SD); for the remaining traits, noise with the same SD. Values are exact lines in time.
inline LongitudinalTable gen_longitudinal(const Matrix& y, const CovariateTable& cov, const SimulationSpec& s) {
    const Index n = y.rows(), q = y.cols(), q_all = q + s.n_null_traits;
    if (static_cast<Index>(cov.records.size()) != n) throw ConfigError("gen_longitudinal: covariates must align with Y");
    std::mt19937_64 rng(derive_seed(s.seed, 0x6c6f6eu));
    std::normal_distribution<double> nd;
    const double sd = std::max(1e-12, std::sqrt(y.squaredNorm() / double(n * q)));
    Matrix slopes(n, q_all);
    for (Index i = 0; i < n; ++i) {
        const auto& g = cov.records[static_cast<std::size_t>(i)].group;
        const double shift = g == "AD" ? 1.0 : (g == "MCI" ? 0.5 : 0.0);
        for (Index k = 0; k < q; ++k) slopes(i, k) = y(i, k) + shift * s.group_effect * sd;
        for (Index k = q; k < q_all; ++k) slopes(i, k) = sd * nd(rng);
    }
    LongitudinalTable t;
    for (Index k = 0; k < q_all; ++k) t.trait_names.push_back(detail::padded("T", k + 1, 5));
    t.values.resize(n * static_cast<Index>(s.visits.size()), q_all);
    Index row = 0;
    for (Index i = 0; i < n; ++i)
        for (double v : s.visits) {
            t.subject_ids.push_back(cov.records[static_cast<std::size_t>(i)].subject_id);
            t.visit_months.push_back(v);
            t.values.row(row++) = slopes.row(i) * v;
        }
    return t;
}

/// Annotation obtained by running the simulated gene locations and gene sets through the
/// ordinary SNP -> gene -> pathway mapping.
inline PathwayAnnotation simulated_pathway_annotation(const std::vector<SnpInfo>& snps, const SimulatedAnnotation& a,
                                                      std::int64_t window_bp = 10000) {
    const auto map = map_snps_to_genes(snps, a.genes, window_bp);
    return map_genes_to_pathways(a.gene_sets, map, snps).first;
}

/// All simulated artefacts for one spec.
struct SimulatedDataset {
    SimulationSpec spec;
    GenotypeMatrix genotypes;   ///< raw counts
    SimulatedAnnotation annotation;
    Matrix x;                   ///< standardised genotypes
    PlantedPhenotype planted;
    CovariateTable covariates;
    LongitudinalTable longitudinal;
};

inline SimulatedDataset simulate_dataset(const SimulationSpec& s, unsigned workers = 1) {
    SimulatedDataset d;
    d.spec = s;
    d.genotypes = gen_genotypes(s, workers);
    d.annotation = gen_annotation(s);
    d.x = standardized_columns(d.genotypes.values);
    d.planted = plant_rank1_phenotype(d.x, d.annotation.pathway_snps, s);
    const Vector liability = diagnosis_liability(d.x, d.planted.b, s.diagnosis_noise, s.seed);
    d.covariates = gen_covariates(d.genotypes.subject_ids, s.seed, &liability);
    d.longitudinal = gen_longitudinal(d.planted.y, d.covariates, s);
    return d;
}

} // namespace psrrr
