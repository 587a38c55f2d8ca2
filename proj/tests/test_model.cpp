#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include <psrrr/model.hpp>

#include "oracles.hpp"

using namespace psrrr;

namespace {

struct Planted {
    GroupedDesign d;
    Matrix y;
    Vector b;
    Vector a;
};

/// Independent unit-norm columns; one causal group; Y = X b a' + noise.
Planted planted(std::uint64_t seed, Index n, std::vector<Index> sizes, Index causal, Index q, double noise) {
    std::mt19937_64 rng(seed);
    Planted p{oracle::random_design(rng, n, sizes), {}, {}, {}};
    std::normal_distribution<double> nd;
    p.b = Vector::Zero(p.d.n_cols());
    for (Index j = 0; j < p.d.group_size(causal); ++j) p.b[p.d.group_start(causal) + j] = nd(rng);
    p.b.normalize();
    p.a = oracle::random_vector(rng, q).normalized();
    p.y = (p.d.x * p.b) * p.a.transpose();
    for (Index k = 0; k < q; ++k)
        for (Index i = 0; i < n; ++i) p.y(i, k) += noise * nd(rng);
    p.y.rowwise() -= p.y.colwise().mean();
    return p;
}

Vector sqrt_sizes(const GroupedDesign& d) {
    Vector w(d.n_groups());
    for (Index l = 0; l < d.n_groups(); ++l) w[l] = std::sqrt(static_cast<double>(d.group_size(l)));
    return w;
}

double abs_corr(const Vector& u, const Vector& v) {
    const Vector a = u.array() - u.mean(), b = v.array() - v.mean();
    return std::abs(a.dot(b)) / (a.norm() * b.norm());
}

} // namespace

TEST(UpdateA, ClosedFormAndUnitNorm) {
    std::mt19937_64 rng(1);
    const auto d = oracle::random_design(rng, 20, {3, 4});
    const Vector b = oracle::random_vector(rng, 7);
    Matrix y(20, 3);
    for (Index k = 0; k < 3; ++k) y.col(k) = oracle::random_vector(rng, 20);
    const Vector a = update_a(b, d.x, y);
    const Vector xb = d.x * b;
    Vector expected(3);
    for (Index k = 0; k < 3; ++k) expected[k] = y.col(k).dot(xb) / xb.dot(xb);
    EXPECT_NEAR(a.norm(), 1.0, 1e-14);
    EXPECT_LT((a - expected.normalized()).norm(), 1e-12);

    EXPECT_THROW(update_a(Vector::Zero(7), d.x, y), DegenerateFactorError);
    Matrix orth = Matrix::Zero(20, 3);
    EXPECT_THROW(update_a(b, d.x, orth), DegenerateFactorError);
    EXPECT_THROW(update_a(Vector::Ones(3), d.x, y), ConfigError);
}

TEST(AlignedChange, IgnoresSign) {
    Vector u(3);
    u << 0.6, 0.8, 0.0;
    EXPECT_EQ(aligned_change(u, -u), 0.0);
    EXPECT_EQ(aligned_change(u, u), 0.0);
    EXPECT_TRUE(std::isinf(aligned_change(u, Vector::Zero(3))));
}

TEST(FitRank1, RecoversPlantedGroupAndFactor) {
    const auto p = planted(2, 120, {8, 10, 6, 12, 9}, 2, 6, 0.02);
    FitOptions o;
    o.gamma = 0.5;
    const auto fit = fit_rank1(p.y, p.d, sqrt_sizes(p.d), o);
    EXPECT_TRUE(fit.converged);
    EXPECT_EQ(fit.selected, std::vector<Index>{2});
    EXPECT_NEAR(fit.b.norm(), 1.0, 1e-12);
    EXPECT_NEAR(fit.a.norm(), 1.0, 1e-12);
    EXPECT_GT(std::abs(fit.a.dot(p.a)), 0.99);
    EXPECT_GT(abs_corr(p.d.x * fit.b, p.d.x * p.b), 0.99);
    for (Index l = 0; l < p.d.n_groups(); ++l) {
        if (l != 2) {
            EXPECT_EQ(fit.b.segment(p.d.group_start(l), p.d.group_size(l)).squaredNorm(), 0.0);
        }
    }
    EXPECT_DOUBLE_EQ(fit.lambda, 0.5 * fit.lambda_max);
}

TEST(FitRank1, ConvergedFitIsAFixedPointOfBothUpdates) {
    const auto p = planted(3, 80, {5, 7, 6, 4}, 0, 4, 0.3);
    FitOptions o;
    o.gamma = 0.6;
    o.tol = 1e-9;
    o.max_alt = 1000;
    o.solver.bcd.tol = 1e-12;
    const Vector w = sqrt_sizes(p.d);
    const auto fit = fit_rank1(p.y, p.d, w, o);
    ASSERT_TRUE(fit.converged);
    ASSERT_FALSE(fit.empty());
    const Vector z = p.y * fit.a;
    const double lam = o.gamma * lambda_max(p.d, z, w);
    BcdOptions tight;
    tight.tol = 1e-13;
    tight.max_outer = 100000;
    const auto res = group_lasso_bcd(z, p.d, lam, w, tight);
    EXPECT_LT(aligned_change(res.b.normalized(), fit.b), 1e-6);
    EXPECT_LT(aligned_change(update_a(fit.b, p.d.x, p.y), fit.a), 1e-6);
}

TEST(FitRank1, EmptySelectionIsAFit) {
    const auto p = planted(4, 30, {3, 3}, 0, 2, 0.0);
    const auto fit = fit_rank1(Matrix::Zero(30, 2), p.d, sqrt_sizes(p.d));
    EXPECT_TRUE(fit.empty());
    EXPECT_TRUE(fit.converged);
    EXPECT_EQ(fit.b.squaredNorm(), 0.0);
}

TEST(FitRank1, SingleTraitResponse) {
    const auto p = planted(5, 60, {4, 4, 4}, 1, 1, 0.01);
    const auto fit = fit_rank1(p.y, p.d, sqrt_sizes(p.d));
    EXPECT_EQ(fit.selected, std::vector<Index>{1});
    EXPECT_NEAR(std::abs(fit.a[0]), 1.0, 1e-12);
}

TEST(FitRank1, RejectsBadOptions) {
    const auto p = planted(6, 20, {2, 2}, 0, 2, 0.1);
    const Vector w = sqrt_sizes(p.d);
    FitOptions o;
    o.gamma = 1.0;
    EXPECT_THROW(fit_rank1(p.y, p.d, w, o), ConfigError);
    o.gamma = 0.5;
    o.tol = 0.0;
    EXPECT_THROW(fit_rank1(p.y, p.d, w, o), ConfigError);
    o.tol = 1e-4;
    o.max_alt = 0;
    EXPECT_THROW(fit_rank1(p.y, p.d, w, o), ConfigError);
    EXPECT_THROW(fit_rank1(p.y.topRows(10), p.d, w, {}), ConfigError);
    EXPECT_THROW(fit_rank1(p.y, p.d, Vector::Ones(3), {}), ConfigError);
}

TEST(SingleSelection, PicksTheLeadingGroup) {
    for (std::uint64_t seed = 10; seed < 30; ++seed) {
        std::mt19937_64 rng(seed);
        const auto d = oracle::random_design(rng, 40, {3, 8, 5, 2, 6});
        const Vector z = oracle::random_vector(rng, 40);
        const Vector w = sqrt_sizes(d);
        const Vector norms = group_correlation_norms(d, z);
        const auto s = select_single_group(z, d, w, norms);
        ASSERT_EQ(s.selected.size(), 1u) << "seed " << seed;
        Index lead;
        norms.cwiseQuotient(w).maxCoeff(&lead);
        EXPECT_EQ(s.selected[0], lead);
        EXPECT_GT(s.gamma, 0.0);
        EXPECT_LT(s.gamma, 1.0);
    }
}

TEST(WeightUpdate, FactorAndClamp) {
    Vector w(3), d(3);
    w << 1.0, 2.0, 4.0;
    d << 0.1, -0.05, 0.0;  // L = 3
    const Vector u = weight_update(w, d, 0.5);
    EXPECT_DOUBLE_EQ(u[0], 1.0 * (1.0 + 0.5 * 9.0 * 0.01));
    EXPECT_DOUBLE_EQ(u[1], 2.0 * (1.0 - 0.5 * 9.0 * 0.0025));
    EXPECT_DOUBLE_EQ(u[2], 4.0);
    d << 0.9, -0.9, 0.0;
    const Vector c = weight_update(w, d, 0.5, true);
    EXPECT_DOUBLE_EQ(c[0], 1.5);
    EXPECT_DOUBLE_EQ(c[1], 1.0);
    const Vector raw = weight_update(w, d, 0.5, false);
    EXPECT_DOUBLE_EQ(raw[0], 1.0 * (1.0 + 0.5 * 9.0 * 0.81));
}

TEST(NullFrequencies, DeterministicAndWorkerInvariant) {
    std::mt19937_64 rng(7);
    const auto d = oracle::random_design(rng, 50, {2, 5, 12, 20});
    const Vector ya = oracle::random_vector(rng, 50);
    const Vector w = sqrt_sizes(d);
    Index empty1 = -1, empty4 = -1;
    const Vector f1 = null_selection_frequencies(ya, d, w, 300, 42, 1, 20, {}, &empty1);
    const Vector f4 = null_selection_frequencies(ya, d, w, 300, 42, 4, 20, {}, &empty4);
    EXPECT_EQ(f1, f4);
    EXPECT_EQ(empty1, empty4);
    EXPECT_NEAR(f1.sum(), 1.0 - double(empty1) / 300.0, 0.05);
    EXPECT_NE(f1, null_selection_frequencies(ya, d, w, 300, 43, 1, 20, {}));
}

TEST(TuneWeights, ReducesImbalanceAndIsReproducible) {
    std::mt19937_64 rng(8);
    const auto d = oracle::random_design(rng, 60, {2, 6, 15, 40});
    Matrix y(60, 3);
    for (Index k = 0; k < 3; ++k) y.col(k) = oracle::random_vector(rng, 60);
    y.rowwise() -= y.colwise().mean();
    TuneOptions o;
    o.fits_per_iter = 800;
    o.max_iter = 12;
    o.eps = 0.08;
    o.seed = 5;
    const auto st = tune_weights(y, d, sqrt_sizes(d), o);
    ASSERT_FALSE(st.history.empty());
    EXPECT_LT(st.sum_abs_d(), st.history.front().sum_abs_d);
    EXPECT_TRUE(st.converged);
    EXPECT_EQ(st.fits_per_iter, 800);
    o.workers = 3;
    const auto again = tune_weights(y, d, sqrt_sizes(d), o);
    EXPECT_EQ(again.weights, st.weights);
    EXPECT_EQ(again.iteration, st.iteration);

    TuneOptions bad = o;
    bad.eta = 1.0;
    EXPECT_THROW(tune_weights(y, d, sqrt_sizes(d), bad), ConfigError);
    EXPECT_THROW(tune_weights(y, d, Vector::Ones(3), o), ConfigError);
}

TEST(TuneWeights, ResumeContinuesIterationCount) {
    std::mt19937_64 rng(9);
    const auto d = oracle::random_design(rng, 40, {3, 9, 25});
    Matrix y(40, 2);
    for (Index k = 0; k < 2; ++k) y.col(k) = oracle::random_vector(rng, 40);
    TuneOptions o;
    o.fits_per_iter = 100;
    o.max_iter = 2;
    o.eps = 1e-6;
    o.seed = 1;
    const auto first = tune_weights(y, d, sqrt_sizes(d), o);
    EXPECT_FALSE(first.converged);
    EXPECT_EQ(first.iteration, 2);
    const auto second = tune_weights(y, d, sqrt_sizes(d), o, &first);
    EXPECT_EQ(second.iteration, 4);
    EXPECT_EQ(second.history.front().iteration, 0);
    EXPECT_EQ(second.history.back().iteration, 3);
}

TEST(WeightState, TsvRoundTripAndSidecar) {
    PathwayAnnotation ann;
    ann.snp_ids = {"rs1", "rs2", "rs3"};
    ann.pathways = {{"P1", {0, 1}, {}, 1.0}, {"P2", {2}, {}, 1.0}};
    WeightState st;
    st.weights = Vector::LinSpaced(2, 0.5, 1.25);
    st.pi = Vector::LinSpaced(2, 0.3, 0.7);
    st.d = st.pi.array() - 0.5;
    st.iteration = 7;
    std::stringstream s;
    write_weight_state(s, st, ann);
    const auto back = read_weight_state(s, ann);
    EXPECT_EQ(back.weights, st.weights);
    EXPECT_EQ(back.pi, st.pi);
    EXPECT_EQ(back.iteration, 7);

    const auto j = weight_state_sidecar(st);
    EXPECT_EQ(j.at("iteration"), 7);
    EXPECT_NEAR(j.at("sum_abs_d").get<double>(), 0.4, 1e-12);

    std::istringstream unknown("#h\nP9\t1\t1\t0\t0\t1\n");
    EXPECT_THROW(read_weight_state(unknown, ann), DataError);
    std::istringstream incomplete("#h\nP1\t2\t1\tNA\tNA\t0\n");
    EXPECT_THROW(read_weight_state(incomplete, ann), DataError);
}
