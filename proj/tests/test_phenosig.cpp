#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include <psrrr/phenosig.hpp>

#include "oracles.hpp"

using namespace psrrr;

namespace {

/// Subjects S0..S{n-1} with alternating sex, ages spread over [60, 85) and groups from `groups`.
CovariateTable covariates_for(const std::vector<std::string>& groups, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> age(60.0, 85.0);
    CovariateTable t;
    for (std::size_t i = 0; i < groups.size(); ++i)
        t.records.push_back({"S" + std::to_string(i), age(rng), static_cast<int>(i % 2), groups[i]});
    return t;
}

SlopeMatrix slopes_from(const Matrix& values) {
    SlopeMatrix s;
    for (Index i = 0; i < values.rows(); ++i) s.subject_ids.push_back("S" + std::to_string(i));
    for (Index k = 0; k < values.cols(); ++k) s.trait_names.push_back("T" + std::to_string(k));
    s.slopes = values;
    return s;
}

Matrix gaussian(Index n, Index q, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Matrix m(n, q);
    for (Index k = 0; k < q; ++k)
        for (Index i = 0; i < n; ++i) m(i, k) = nd(rng);
    return m;
}

} // namespace

TEST(Slopes, NoiselessLinesRecoveredExactly) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    const std::vector<double> visits{24.0, 6.0, 12.0};  // stored out of order
    const Index n = 30, q = 7;
    Matrix truth(n, q), intercept(n, q);
    LongitudinalTable t;
    for (Index k = 0; k < q; ++k) t.trait_names.push_back("T" + std::to_string(k));
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < q; ++k) {
            truth(i, k) = nd(rng);
            intercept(i, k) = 100.0 * nd(rng);
        }
    t.values.resize(n * 3, q);
    Index row = 0;
    for (double v : visits)
        for (Index i = 0; i < n; ++i) {
            t.subject_ids.push_back("S" + std::to_string(i));
            t.visit_months.push_back(v);
            t.values.row(row++) = intercept.row(i) + v * truth.row(i);
        }
    const auto s = fit_slopes(t);
    ASSERT_EQ(s.subject_ids.front(), "S0");
    EXPECT_LT((s.slopes - truth).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Slopes, MatchesLeastSquaresOracleWithNoise) {
    std::mt19937_64 rng(2);
    const std::vector<double> visits{0.0, 6.0, 12.0, 24.0};
    LongitudinalTable t;
    t.trait_names = {"a", "b"};
    t.values = gaussian(4 * 5, 2, rng);
    for (int i = 0; i < 5; ++i)
        for (double v : visits) {
            t.subject_ids.push_back("P" + std::to_string(i));
            t.visit_months.push_back(v);
        }
    const auto s = fit_slopes(t);
    Matrix d(4, 2);
    for (int k = 0; k < 4; ++k) d.row(k) << 1.0, visits[static_cast<std::size_t>(k)];
    for (int i = 0; i < 5; ++i) {
        const Matrix coef = d.colPivHouseholderQr().solve(t.values.middleRows(4 * i, 4));
        EXPECT_NEAR(s.slopes(i, 0), coef(1, 0), 1e-12);
        EXPECT_NEAR(s.slopes(i, 1), coef(1, 1), 1e-12);
    }
}

TEST(Slopes, RejectsInconsistentVisits) {
    LongitudinalTable t;
    t.trait_names = {"a"};
    t.subject_ids = {"A", "A", "B", "B"};
    t.visit_months = {6, 12, 6, 24};
    t.values = Matrix::Ones(4, 1);
    EXPECT_THROW(fit_slopes(t), DataError);
    t.visit_months = {6, 6, 6, 6};
    EXPECT_THROW(fit_slopes(t), DataError);
}

TEST(Longitudinal, ReadsBothEncodings) {
    LongitudinalTable t;
    t.trait_names = {"x", "y"};
    t.subject_ids = {"A", "A"};
    t.visit_months = {6, 12};
    t.values.resize(2, 2);
    t.values << 1, 2, 3, 4;
    for (bool binary : {false, true}) {
        std::stringstream s;
        if (binary) write_dense_binary(s, to_dense(t));
        else write_dense_tsv(s, to_dense(t));
        s.seekg(0);
        const auto back = read_longitudinal(s);
        EXPECT_EQ(back.trait_names, t.trait_names);
        EXPECT_EQ(back.visit_months, t.visit_months);
        EXPECT_EQ(back.values, t.values);
    }
    std::istringstream wrong("#subject_id\tmonth\tx\nA\t6\t1\n");
    EXPECT_THROW(read_longitudinal(wrong), DataError);
}

TEST(Ancova, PValuesMatchNestedFTestOracle) {
    std::mt19937_64 rng(3);
    std::vector<std::string> groups;
    for (int i = 0; i < 60; ++i) groups.push_back(i % 3 == 0 ? "AD" : (i % 3 == 1 ? "CN" : "MCI"));
    const auto cov = covariates_for(groups, 4);
    Matrix y = gaussian(60, 6, rng);
    for (Index i = 0; i < 60; ++i)
        if (groups[static_cast<std::size_t>(i)] == "AD") y.row(i).array() += 0.3 * static_cast<double>(i % 5);
    const auto res = ancova_filter(slopes_from(y), cov, "AD", "CN");
    EXPECT_EQ(res.n_a, 20);
    EXPECT_EQ(res.n_b, 20);

    std::vector<Index> rows;
    for (Index i = 0; i < 60; ++i)
        if (groups[static_cast<std::size_t>(i)] != "MCI") rows.push_back(i);
    Eigen::MatrixXd d(static_cast<Index>(rows.size()), 4);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& r = cov.records[static_cast<std::size_t>(rows[k])];
        d.row(static_cast<Index>(k)) << 1.0, r.group == "AD" ? 1.0 : 0.0, double(r.sex), r.age;
    }
    for (Index q = 0; q < 6; ++q) {
        Eigen::VectorXd yq(static_cast<Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) yq[static_cast<Index>(k)] = y(rows[k], q);
        EXPECT_NEAR(res.p_values[static_cast<std::size_t>(q)], oracle::nested_f_pvalue(d, yq, 1), 1e-10);
    }
    EXPECT_DOUBLE_EQ(res.threshold, 0.05 / 6.0);
}

TEST(Ancova, SelectsWellSeparatedTraitOnly) {
    std::mt19937_64 rng(5);
    std::vector<std::string> groups;
    for (int i = 0; i < 200; ++i) groups.push_back(i < 100 ? "AD" : "CN");
    Matrix y = gaussian(200, 3, rng);
    y.col(1).head(100).array() += 10.0;
    const auto res = ancova_filter(slopes_from(y), covariates_for(groups, 6), "AD", "CN");
    EXPECT_EQ(res.selected, std::vector<Index>{1});
    EXPECT_GT(res.t_statistics[1], 0.0);
}

TEST(Ancova, FalsePositivesUnderPermutedLabelsStayNearAlpha) {
    std::mt19937_64 rng(7);
    const Index n = 80, q = 20;
    int selections = 0, runs_with_any = 0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
        std::vector<std::string> groups;
        for (Index i = 0; i < n; ++i) groups.push_back(i % 2 ? "AD" : "CN");
        std::shuffle(groups.begin(), groups.end(), rng);
        const auto res = ancova_filter(slopes_from(gaussian(n, q, rng)), covariates_for(groups, 100 + r), "AD", "CN");
        selections += static_cast<int>(res.selected.size());
        runs_with_any += res.selected.empty() ? 0 : 1;
    }
    // Bonferroni: expected false positives per run <= alpha = 0.05.
    EXPECT_LE(selections, 25);
    EXPECT_LE(runs_with_any, 25);
}

TEST(Ancova, RejectsDegenerateDesigns) {
    Matrix y = Matrix::Random(6, 2);
    auto cov = covariates_for({"AD", "CN", "CN", "CN", "CN", "CN"}, 1);
    EXPECT_THROW(ancova_filter(slopes_from(y), cov, "AD", "CN"), DataError);
    cov = covariates_for({"AD", "AD", "AD", "CN", "CN", "CN"}, 1);
    for (auto& r : cov.records) r.age = 70.0;
    cov.records[0].age = 71.0;
    for (std::size_t i = 0; i < 6; ++i) cov.records[i].sex = i < 3 ? 1 : 0;  // sex == group
    EXPECT_THROW(ancova_filter(slopes_from(y), cov, "AD", "CN"), DataError);
    EXPECT_THROW(ancova_filter(slopes_from(y), cov, "AD", "CN", 1.5), ConfigError);
}

TEST(Residualize, OrthogonalToCovariatesAndCentred) {
    std::mt19937_64 rng(8);
    std::vector<std::string> groups(40, "CN");
    const auto cov = covariates_for(groups, 9);
    Matrix y = gaussian(40, 5, rng);
    for (Index i = 0; i < 40; ++i) y.row(i).array() += 0.1 * cov.records[static_cast<std::size_t>(i)].age;
    const auto p = residualize(slopes_from(y), {0, 3}, cov);
    ASSERT_EQ(p.values.cols(), 2);
    EXPECT_EQ(p.trait_names, (std::vector<std::string>{"T0", "T3"}));
    Matrix d(40, 3);
    for (Index i = 0; i < 40; ++i)
        d.row(i) << 1.0, double(cov.records[static_cast<std::size_t>(i)].sex), cov.records[static_cast<std::size_t>(i)].age;
    EXPECT_LT((d.transpose() * p.values).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(p.values.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);

    auto constant_sex = cov;
    for (auto& r : constant_sex.records) r.sex = 0;
    EXPECT_THROW(residualize(slopes_from(y), {0}, constant_sex), DataError);
    EXPECT_THROW(residualize(slopes_from(y), {9}, cov), ConfigError);
}

TEST(Phenotype, DenseRoundTripAndAlignment) {
    PhenotypeMatrix p;
    p.subject_ids = {"a", "b", "c"};
    p.trait_names = {"t"};
    p.values = Vector::LinSpaced(3, 1.0, 3.0);
    const auto back = phenotype_from_dense(to_dense(p));
    EXPECT_EQ(back.values, p.values);
    const std::vector<std::string> order{"c", "a"};
    const Matrix m = align_rows(p, order);
    EXPECT_EQ(m(0, 0), 3.0);
    EXPECT_EQ(m(1, 0), 1.0);
    const std::vector<std::string> missing{"z"};
    EXPECT_THROW(align_rows(p, missing), DataError);
}

TEST(Validation, SeparatedClustersAndPermutedLabels) {
    std::mt19937_64 rng(10);
    const Index n = 200, q = 5;
    Matrix y = gaussian(n, q, rng);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        labels[static_cast<std::size_t>(i)] = i < n / 2 ? 1 : 0;
        if (i < n / 2) y(i, 0) += 10.0;
    }
    const auto sep = validate_signature(y, labels, 10, 1);
    EXPECT_GE(sep.accuracy, 0.99);
    EXPECT_EQ(sep.folds.size(), 10u);
    for (const auto& f : sep.folds) EXPECT_EQ(f.n_test, 20);

    double total = 0.0;
    for (int r = 0; r < 20; ++r) {
        auto perm = labels;
        std::shuffle(perm.begin(), perm.end(), rng);
        total += validate_signature(y, perm, 10, static_cast<std::uint64_t>(r)).accuracy;
    }
    EXPECT_NEAR(total / 20.0, 0.5, 0.1);

    std::ostringstream out;
    write_validation_report(out, sep);
    EXPECT_NE(out.str().find("# summary\taccuracy="), std::string::npos);
}

TEST(Validation, RejectsBadInput) {
    Matrix y = Matrix::Zero(6, 2);
    EXPECT_THROW(validate_signature(y, {0, 1, 0, 1, 0, 1}, 1, 0), ConfigError);
    EXPECT_THROW(validate_signature(y, {0, 1, 0, 1, 0, 2}, 2, 0), ConfigError);
    EXPECT_THROW(validate_signature(y, {0, 1, 0, 1, 0}, 2, 0), ConfigError);
    EXPECT_THROW(validate_signature(y, {0, 0, 0, 0, 0, 1}, 2, 0), DataError);
    EXPECT_NO_THROW(validate_signature(y, {0, 1, 0, 1, 0, 1}, 3, 0));
}
