#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include <psrrr/ranking.hpp>

#include "oracles.hpp"

using namespace psrrr;

namespace {

// 40 SNPs in five pathways of eight; pathway 1 shares its first two SNPs with pathway 0.
// Gene g covers SNPs 4g..4g+3; pathway l holds the genes of its SNPs.
struct Fixture {
    PathwayAnnotation ann;
    Matrix x;
    Matrix y;
};

Fixture fixture(std::uint64_t seed, Index n = 120, double noise = 0.05) {
    Fixture f;
    for (int j = 0; j < 40; ++j) f.ann.snp_ids.push_back("rs" + std::to_string(j));
    for (int g = 0; g < 10; ++g) f.ann.gene_symbols.push_back("GENE" + std::to_string(g));
    for (int j = 0; j < 40; ++j) f.ann.genes_of_snp.push_back({j / 4});
    for (int l = 0; l < 5; ++l) {
        Pathway p;
        p.name = "P" + std::to_string(l);
        const int start = l == 1 ? 6 : 8 * l;
        for (int j = start; j < start + 8; ++j) p.snps.push_back(j);
        for (auto j : p.snps) p.genes.push_back(j / 4);
        std::sort(p.genes.begin(), p.genes.end());
        p.genes.erase(std::unique(p.genes.begin(), p.genes.end()), p.genes.end());
        p.weight = std::sqrt(8.0);
        f.ann.pathways.push_back(p);
    }
    std::mt19937_64 rng(seed);
    f.x.resize(n, 40);
    for (Index j = 0; j < 40; ++j) f.x.col(j) = oracle::random_vector(rng, n);
    // Signal on pathway 3 (SNPs 24..31) only.
    Vector b = Vector::Zero(40);
    b.segment(24, 8) << 1.0, -0.8, 0.6, 0.0, 0.9, -0.7, 0.5, 0.4;
    const Vector a = Vector::LinSpaced(4, 1.0, 0.4).normalized();
    std::normal_distribution<double> nd;
    f.y = (f.x * b) * a.transpose();
    for (Index k = 0; k < f.y.cols(); ++k)
        for (Index i = 0; i < n; ++i) f.y(i, k) += noise * nd(rng);
    f.y.rowwise() -= f.y.colwise().mean();
    return f;
}

std::string table_text(const RankingTable& t) {
    std::ostringstream s;
    write_ranking_table(s, t);
    return s.str();
}

} // namespace

TEST(Subsample, SizeOrderAndDeterminism) {
    const auto r = subsample_rows(101, 0.5, 9, 3);
    EXPECT_EQ(r.size(), 50u);
    EXPECT_TRUE(std::is_sorted(r.begin(), r.end()));
    EXPECT_EQ(std::set<Index>(r.begin(), r.end()).size(), r.size());
    EXPECT_GE(r.front(), 0);
    EXPECT_LT(r.back(), 101);
    EXPECT_EQ(r, subsample_rows(101, 0.5, 9, 3));
    EXPECT_NE(r, subsample_rows(101, 0.5, 9, 4));
    EXPECT_NE(r, subsample_rows(101, 0.5, 10, 3));
    EXPECT_EQ(row_set_hash(r), row_set_hash(subsample_rows(101, 0.5, 9, 3)));
    EXPECT_THROW(subsample_rows(100, 1.0, 0, 0), ConfigError);
    EXPECT_THROW(subsample_rows(3, 0.5, 0, 0), ConfigError);
}

TEST(Subsample, RowsAreUniformlyCovered) {
    std::vector<int> hits(40, 0);
    for (Index b = 0; b < 2000; ++b)
        for (auto i : subsample_rows(40, 0.5, 1, b)) ++hits[static_cast<std::size_t>(i)];
    for (int h : hits) EXPECT_NEAR(h / 2000.0, 0.5, 0.05);
}

TEST(RankingContext, DeduplicatesSharedSnps) {
    const auto f = fixture(1);
    const auto ctx = RankingContext::from_aligned(f.x, f.ann);
    EXPECT_EQ(ctx.snps.cols(), 38);  // SNPs 14 and 15 are in no pathway
    const auto d = ctx.expanded(ctx.snps);
    EXPECT_EQ(d.n_cols(), 40);
    EXPECT_EQ(d.x.col(8), d.x.col(6));  // P1 starts at SNP 6, which P0 also holds
    const auto xs = ctx.subsample_snps(subsample_rows(120, 0.5, 0, 0));
    for (Index j = 0; j < xs.cols(); ++j) {
        EXPECT_NEAR(xs.col(j).sum(), 0.0, 1e-12);
        EXPECT_NEAR(xs.col(j).norm(), 1.0, 1e-12);
    }
    EXPECT_THROW(RankingContext::from_aligned(f.x.leftCols(10), f.ann), ConfigError);
}

TEST(RankPathways, PlantedPathwayRanksFirst) {
    const auto f = fixture(2);
    const auto ctx = RankingContext::from_aligned(f.x, f.ann);
    RankingOptions o;
    o.n_subsamples = 40;
    o.seed = 11;
    const auto r = rank_pathways(f.y, ctx, f.ann.weights(), o);
    ASSERT_EQ(r.table.rows.size(), 5u);
    EXPECT_EQ(r.table.rows[0].id, "P3");
    EXPECT_GE(r.table.rows[0].pi, 0.9);
    EXPECT_FALSE(r.all_empty);
    for (std::size_t k = 1; k < r.table.rows.size(); ++k) {
        EXPECT_GE(r.table.rows[k - 1].count, r.table.rows[k].count);
        EXPECT_EQ(r.table.rows[k].rank, static_cast<Index>(k + 1));
    }
    Index events = 0;
    for (const auto& row : r.table.rows) events += row.count;
    EXPECT_EQ(events, r.selection_events);
}

TEST(RankPathways, WorkerCountDoesNotChangeOutput) {
    const auto f = fixture(3, 100, 1.0);
    const auto ctx = RankingContext::from_aligned(f.x, f.ann);
    RankingOptions o;
    o.n_subsamples = 30;
    o.seed = 4;
    const auto one = rank_pathways(f.y, ctx, f.ann.weights(), o);
    o.workers = 4;
    auto four = rank_pathways(f.y, ctx, f.ann.weights(), o);
    EXPECT_EQ(table_text(one.table), table_text(four.table));
    auto one_records = one.records;
    const auto s1 = rank_snps_genes(one_records, f.y, ctx, 0.8, 1);
    const auto s4 = rank_snps_genes(four.records, f.y, ctx, 0.8, 4);
    EXPECT_EQ(table_text(s1.snps), table_text(s4.snps));
    EXPECT_EQ(table_text(s1.genes), table_text(s4.genes));
}

TEST(RankPathways, RejectsBadInputs) {
    const auto f = fixture(4);
    const auto ctx = RankingContext::from_aligned(f.x, f.ann);
    RankingOptions o;
    EXPECT_THROW(rank_pathways(f.y.topRows(50), ctx, f.ann.weights(), o), ConfigError);
    EXPECT_THROW(rank_pathways(f.y, ctx, Vector::Ones(4), o), ConfigError);
    EXPECT_THROW(rank_pathways(f.y, ctx, -f.ann.weights(), o), ConfigError);
    o.n_subsamples = 0;
    EXPECT_THROW(rank_pathways(f.y, ctx, f.ann.weights(), o), ConfigError);
}

TEST(LassoRank1, FixedPointMatchesProximalGradient) {
    std::mt19937_64 rng(5);
    const Index n = 60;
    Matrix x(n, 12);
    for (Index j = 0; j < 12; ++j) x.col(j) = oracle::random_vector(rng, n);
    Vector b = Vector::Zero(12);
    b[2] = 1.0;
    b[7] = -0.6;
    Matrix y = (x * b) * Vector::LinSpaced(3, 1.0, 0.5).transpose();
    std::normal_distribution<double> nd;
    for (Index k = 0; k < 3; ++k)
        for (Index i = 0; i < n; ++i) y(i, k) += 0.1 * nd(rng);
    LassoOptions lo;
    lo.tol = 1e-12;
    const auto fit = fit_lasso_rank1(y, x, 0.5, 1e-10, 1000, lo);
    ASSERT_TRUE(fit.converged);
    EXPECT_NE(fit.beta[2], 0.0);
    EXPECT_NE(fit.beta[7], 0.0);
    const Vector z = y * fit.alpha;
    const Vector ref = oracle::prox_grad_lasso(x, z, fit.lambda);
    EXPECT_LT(aligned_change(ref.normalized(), fit.beta), 1e-6);
    EXPECT_THROW(fit_lasso_rank1(y, x, 0.0), ConfigError);
    EXPECT_TRUE(fit_lasso_rank1(Matrix::Zero(n, 3), x, 0.5).beta.isZero(0.0));
}

TEST(AttributeGenes, OnlyGenesInsideASelectedPathwayCount) {
    PathwayAnnotation ann;
    ann.snp_ids = {"rs1", "rs2"};
    ann.gene_symbols = {"G_IN", "G_OUT"};
    ann.genes_of_snp = {{0, 1}, {1}};
    ann.pathways = {{"SELECTED", {0}, {0}, 1.0}, {"OTHER", {0, 1}, {1}, 1.0}};
    EXPECT_EQ(attribute_genes(ann, {0}, {0}), std::vector<Index>{0});
    EXPECT_EQ(attribute_genes(ann, {1}, {0}), std::vector<Index>{1});
    EXPECT_EQ(attribute_genes(ann, {0, 1}, {0}), (std::vector<Index>{0, 1}));
    // rs2 is not a member of SELECTED, so nothing is credited through it.
    EXPECT_TRUE(attribute_genes(ann, {0}, {1}).empty());
}

TEST(RankSnpsGenes, PlantedSnpsAndGenesLead) {
    const auto f = fixture(6);
    const auto ctx = RankingContext::from_aligned(f.x, f.ann);
    RankingOptions o;
    o.n_subsamples = 30;
    o.seed = 2;
    auto r = rank_pathways(f.y, ctx, f.ann.weights(), o);
    const auto sg = rank_snps_genes(r.records, f.y, ctx, 0.5);
    EXPECT_EQ(sg.snps.rows.size(), 38u);
    EXPECT_EQ(sg.genes.rows.size(), 10u);
    std::set<std::string> top_snps;
    for (int k = 0; k < 3; ++k) top_snps.insert(sg.snps.rows[static_cast<std::size_t>(k)].id);
    for (const auto& id : top_snps) {
        const int j = std::stoi(id.substr(2));
        EXPECT_GE(j, 24);
        EXPECT_LT(j, 32);
    }
    std::set<std::string> top_genes{sg.genes.rows[0].id, sg.genes.rows[1].id};
    EXPECT_EQ(top_genes, (std::set<std::string>{"GENE6", "GENE7"}));
    for (const auto& rec : r.records) {
        EXPECT_TRUE(rec.second_level_done);
        for (auto j : rec.snps) {
            bool inside = false;
            for (auto l : rec.selected) {
                const auto& s = f.ann.pathways[static_cast<std::size_t>(l)].snps;
                inside = inside || std::find(s.begin(), s.end(), j) != s.end();
            }
            EXPECT_TRUE(inside);
        }
    }
}

TEST(SubsampleLedger, RoundTripAndSeedCheck) {
    const auto f = fixture(7);
    const auto ctx = RankingContext::from_aligned(f.x, f.ann);
    RankingOptions o;
    o.n_subsamples = 5;
    o.seed = 3;
    const auto r = rank_pathways(f.y, ctx, f.ann.weights(), o);
    std::stringstream s;
    write_subsample_ledger(s, r.records, f.ann);
    const auto text = s.str();
    std::istringstream in(text);
    const auto back = read_subsample_ledger(in, f.ann, 120, 0.5, 3);
    ASSERT_EQ(back.size(), 5u);
    for (std::size_t b = 0; b < 5; ++b) {
        EXPECT_EQ(back[b].rows, r.records[b].rows);
        EXPECT_EQ(back[b].selected, r.records[b].selected);
        EXPECT_EQ(back[b].lambda, r.records[b].lambda);
    }
    EXPECT_EQ(table_text(pathway_table(back, f.ann)), table_text(r.table));
    std::istringstream wrong_seed(text);
    EXPECT_THROW(read_subsample_ledger(wrong_seed, f.ann, 120, 0.5, 4), DataError);
    std::istringstream garbage("{not json\n");
    EXPECT_THROW(read_subsample_ledger(garbage, f.ann, 120, 0.5, 3), DataError);
    std::istringstream empty("");
    EXPECT_THROW(read_subsample_ledger(empty, f.ann, 120, 0.5, 3), DataError);
}

TEST(Enrichment, ScoreIsSumOfMeanRanks) {
    const std::vector<std::vector<Index>> membership{{0, 2}, {1}};
    const std::vector<double> rank_of{1, 5, 3};
    EXPECT_DOUBLE_EQ(enrichment_score(membership, rank_of), 2.0 + 5.0);
}

TEST(Enrichment, ExactPValueOnSmallProblem) {
    // One target in one of four pathways: score is that pathway's rank. At rank 2 exactly
    // one of four equally likely ranks is lower.
    const auto r = enrichment_permutation({{1}}, {3, 2, 1, 4}, 40000, 8);
    EXPECT_DOUBLE_EQ(r.score, 2.0);
    EXPECT_NEAR(r.p_value, 0.25, 0.01);
    EXPECT_EQ(r.n_lower, static_cast<Index>(std::llround(r.p_value * 40000)));
    const auto top = enrichment_permutation({{2}}, {3, 2, 1, 4}, 1000, 8);
    EXPECT_EQ(top.p_value, 0.0);
}

TEST(Enrichment, InvariantScoreGivesZeroNotSpuriousHits) {
    // A gene in every pathway has the same score under any permutation.
    const std::vector<double> rank_of{0.1, 0.2, 0.7, 3.3, 1.9};
    const auto r = enrichment_permutation({{0, 1, 2, 3, 4}}, rank_of, 2000, 1);
    EXPECT_EQ(r.n_lower, 0);
}

TEST(Enrichment, NullIsCalibratedAndWorkerInvariant) {
    std::vector<double> ps;
    std::mt19937_64 rng(9);
    std::vector<double> rank_of(50);
    std::iota(rank_of.begin(), rank_of.end(), 1.0);
    for (int rep = 0; rep < 150; ++rep) {
        std::shuffle(rank_of.begin(), rank_of.end(), rng);
        const auto r = enrichment_permutation({{0, 1}, {2}, {3, 4, 5}}, rank_of, 1000, static_cast<std::uint64_t>(rep));
        ps.push_back(r.p_value);
    }
    EXPECT_GT(oracle::ks_uniform_pvalue(ps), 0.001);
    const auto a = enrichment_permutation({{0, 1}, {2}}, rank_of, 5000, 3, 1);
    const auto b = enrichment_permutation({{0, 1}, {2}}, rank_of, 5000, 3, 4);
    EXPECT_EQ(a.n_lower, b.n_lower);
}

TEST(Enrichment, TargetsMatchCaseInsensitivelyAndReportDrops) {
    const auto f = fixture(10);
    const std::vector<std::pair<std::string, Index>> ranks{{"P3", 1}, {"P0", 2}, {"P1", 3}, {"P2", 4}, {"P4", 5}};
    const auto r = enrichment_test(ranks, f.ann, {"gene6", "GENE7", "Gene6", "NOPE"}, 2000, 1);
    EXPECT_EQ(r.targets_used, (std::vector<std::string>{"gene6", "GENE7"}));
    EXPECT_EQ(r.targets_dropped, std::vector<std::string>{"NOPE"});
    EXPECT_DOUBLE_EQ(r.score, 2.0);
    EXPECT_EQ(r.p_value, 0.0);
    EXPECT_THROW(enrichment_test(ranks, f.ann, {"NOPE"}, 100, 1), DataError);
    EXPECT_THROW(enrichment_test({{"UNKNOWN", 1}}, f.ann, {"GENE1"}, 100, 1), DataError);
    std::ostringstream out;
    write_enrichment(out, r);
    EXPECT_NE(out.str().find("dropped_targets\tNOPE"), std::string::npos);
}
