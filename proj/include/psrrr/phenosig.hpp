#pragma once

// Multivariate phenotype construction from longitudinal trait measurements:
// per-trait slopes, covariate-adjusted two-group screening with Bonferroni control,
// covariate residualisation, and a diagonal Gaussian classifier for validation.

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include <psrrr/common.hpp>
#include <psrrr/dense_io.hpp>
#include <psrrr/ingest.hpp>

namespace psrrr {

/// Long-format trait table: one row per (subject, visit).
struct LongitudinalTable {
    std::vector<std::string> subject_ids;  ///< per row
    std::vector<double> visit_months;      ///< per row
    std::vector<std::string> trait_names;
    Matrix values;                         ///< rows x Q*
};

/// Reads TSV (`#subject_id\tvisit_months\ttrait...`) or the dense binary encoding whose
/// first column is visit_months.
inline LongitudinalTable read_longitudinal(std::istream& in) {
    auto dense = read_dense(in, "longitudinal table");
    if (dense.col_labels.size() < 2 || dense.col_labels[0] != "visit_months")
        throw DataError("longitudinal table: first column after subject_id must be visit_months");
    LongitudinalTable t;
    t.subject_ids = std::move(dense.row_labels);
    t.trait_names.assign(dense.col_labels.begin() + 1, dense.col_labels.end());
    t.visit_months.resize(static_cast<std::size_t>(dense.values.rows()));
    for (Index i = 0; i < dense.values.rows(); ++i) t.visit_months[static_cast<std::size_t>(i)] = dense.values(i, 0);
    t.values = dense.values.rightCols(dense.values.cols() - 1);
    return t;
}

inline DenseTable to_dense(const LongitudinalTable& t) {
    DenseTable d;
    d.corner = "subject_id";
    d.row_labels = t.subject_ids;
    d.col_labels.push_back("visit_months");
    d.col_labels.insert(d.col_labels.end(), t.trait_names.begin(), t.trait_names.end());
    d.values.resize(t.values.rows(), t.values.cols() + 1);
    for (Index i = 0; i < t.values.rows(); ++i) d.values(i, 0) = t.visit_months[static_cast<std::size_t>(i)];
    d.values.rightCols(t.values.cols()) = t.values;
    return d;
}

struct SlopeMatrix {
    std::vector<std::string> subject_ids;
    std::vector<std::string> trait_names;
    Matrix slopes;  ///< N x Q*
};

/// Per subject and trait, the least-squares slope of value on visit time (with intercept).
inline SlopeMatrix fit_slopes(const LongitudinalTable& t) {
    if (t.values.rows() != static_cast<Index>(t.subject_ids.size()) || t.visit_months.size() != t.subject_ids.size())
        throw DataError("fit_slopes: inconsistent table dimensions");
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<Index>> rows_of;
    for (std::size_t i = 0; i < t.subject_ids.size(); ++i) {
        auto [it, inserted] = rows_of.try_emplace(t.subject_ids[i]);
        if (inserted) order.push_back(t.subject_ids[i]);
        it->second.push_back(static_cast<Index>(i));
    }
    SlopeMatrix out;
    out.subject_ids = order;
    out.trait_names = t.trait_names;
    out.slopes.resize(static_cast<Index>(order.size()), t.values.cols());

    std::vector<double> reference;
    for (std::size_t s = 0; s < order.size(); ++s) {
        const auto& rows = rows_of[order[s]];
        std::vector<double> times;
        for (auto r : rows) times.push_back(t.visit_months[static_cast<std::size_t>(r)]);
        std::vector<double> sorted = times;
        std::sort(sorted.begin(), sorted.end());
        if (s == 0) {
            reference = sorted;
            if (std::unique(sorted.begin(), sorted.end()) - sorted.begin() < 2)
                throw DataError("fit_slopes: at least two distinct visit times are required");
        } else if (sorted != reference) {
            throw DataError("fit_slopes: subject '" + order[s] + "' has a different visit-time set");
        }
        double mean = 0.0;
        for (double v : times) mean += v;
        mean /= static_cast<double>(times.size());
        Vector c(static_cast<Index>(times.size()));
        double sxx = 0.0;
        for (std::size_t k = 0; k < times.size(); ++k) {
            c[static_cast<Index>(k)] = times[k] - mean;
            sxx += (times[k] - mean) * (times[k] - mean);
        }
        c /= sxx;
        RowVector slope = RowVector::Zero(t.values.cols());
        for (std::size_t k = 0; k < rows.size(); ++k) slope += c[static_cast<Index>(k)] * t.values.row(rows[k]);
        out.slopes.row(static_cast<Index>(s)) = slope;
    }
    return out;
}

struct AncovaResult {
    std::vector<double> t_statistics;
    std::vector<double> p_values;
    std::vector<Index> selected;  ///< traits with p < alpha / Q*
    double threshold = 0.0;
    Index n_a = 0;
    Index n_b = 0;
};

/// Two-group comparison of every trait adjusted for sex and age: OLS of
/// slope ~ 1 + [group == a] + sex + age over subjects in groups a and b, with a t test
/// on the group coefficient.
inline AncovaResult ancova_filter(const SlopeMatrix& slopes, const CovariateTable& covariates, const std::string& group_a,
                                  const std::string& group_b, double alpha = 0.05) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("ancova_filter: alpha must lie in (0, 1)");
    std::vector<Index> rows;
    std::vector<const CovariateRecord*> recs;
    AncovaResult res;
    for (std::size_t i = 0; i < slopes.subject_ids.size(); ++i) {
        const auto* r = covariates.find(slopes.subject_ids[i]);
        if (!r) continue;
        if (r->group == group_a) ++res.n_a;
        else if (r->group == group_b) ++res.n_b;
        else continue;
        rows.push_back(static_cast<Index>(i));
        recs.push_back(r);
    }
    if (res.n_a < 2 || res.n_b < 2)
        throw DataError("ancova_filter: each compared group needs at least 2 subjects with covariates");
    const Index n = static_cast<Index>(rows.size());
    if (n <= 4) throw DataError("ancova_filter: not enough subjects for the covariate model");

    Matrix d(n, 4);
    Matrix y(n, slopes.slopes.cols());
    for (Index i = 0; i < n; ++i) {
        const auto* r = recs[static_cast<std::size_t>(i)];
        d(i, 0) = 1.0;
        d(i, 1) = r->group == group_a ? 1.0 : 0.0;
        d(i, 2) = r->sex;
        d(i, 3) = r->age;
        y.row(i) = slopes.slopes.row(rows[static_cast<std::size_t>(i)]);
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(d);
    if (qr.rank() < 4) throw DataError("ancova_filter: group, sex and age covariates are collinear");
    const Matrix beta = qr.solve(y);
    const Vector rss = (y - d * beta).colwise().squaredNorm().transpose();
    const double xtx_inv_group = (d.transpose() * d).inverse()(1, 1);
    const double df = static_cast<double>(n - 4);
    const boost::math::students_t tdist(df);

    const Index q = slopes.slopes.cols();
    res.threshold = alpha / static_cast<double>(q);
    res.t_statistics.resize(static_cast<std::size_t>(q));
    res.p_values.resize(static_cast<std::size_t>(q));
    for (Index k = 0; k < q; ++k) {
        const double se = std::sqrt(rss[k] / df * xtx_inv_group);
        double t, p;
        if (se > 0.0) {
            t = beta(1, k) / se;
            p = 2.0 * boost::math::cdf(boost::math::complement(tdist, std::abs(t)));
        } else {
            t = beta(1, k) == 0.0 ? 0.0 : std::copysign(INFINITY, beta(1, k));
            p = beta(1, k) == 0.0 ? 1.0 : 0.0;
        }
        res.t_statistics[static_cast<std::size_t>(k)] = t;
        res.p_values[static_cast<std::size_t>(k)] = p;
        if (p < res.threshold) res.selected.push_back(k);
    }
    return res;
}

inline void write_selected_traits(std::ostream& out, const SlopeMatrix& slopes, const AncovaResult& r) {
    out << "#trait_index\ttrait\tt_statistic\tp_value\n";
    for (auto k : r.selected)
        out << k << '\t' << slopes.trait_names[static_cast<std::size_t>(k)] << '\t'
            << tsv::fmt(r.t_statistics[static_cast<std::size_t>(k)]) << '\t'
            << tsv::fmt(r.p_values[static_cast<std::size_t>(k)]) << '\n';
    out << "# summary\tn_traits=" << slopes.slopes.cols() << "\tselected=" << r.selected.size()
        << "\tthreshold=" << tsv::fmt(r.threshold) << "\tn_a=" << r.n_a << "\tn_b=" << r.n_b << '\n';
}

/// N x Q response: selected traits, covariate-corrected and mean-centred.
struct PhenotypeMatrix {
    std::vector<std::string> subject_ids;
    std::vector<std::string> trait_names;
    std::vector<Index> selected;
    Matrix values;
};

/// Residuals of each selected trait on (1, sex, age) over all subjects.
inline PhenotypeMatrix residualize(const SlopeMatrix& slopes, const std::vector<Index>& selected,
                                   const CovariateTable& covariates) {
    const Index n = slopes.slopes.rows();
    for (auto k : selected)
        if (k < 0 || k >= slopes.slopes.cols()) throw ConfigError("residualize: selected trait index out of range");
    const auto aligned = covariates.aligned_to(slopes.subject_ids);
    Matrix d(n, 3);
    for (Index i = 0; i < n; ++i) {
        const auto& r = aligned.records[static_cast<std::size_t>(i)];
        d(i, 0) = 1.0;
        d(i, 1) = r.sex;
        d(i, 2) = r.age;
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(d);
    if (qr.rank() < 3) throw DataError("residualize: sex or age is constant (rank-deficient covariate design)");

    PhenotypeMatrix out;
    out.subject_ids = slopes.subject_ids;
    out.selected = selected;
    out.values.resize(n, static_cast<Index>(selected.size()));
    for (std::size_t k = 0; k < selected.size(); ++k) {
        out.values.col(static_cast<Index>(k)) = slopes.slopes.col(selected[k]);
        out.trait_names.push_back(slopes.trait_names[static_cast<std::size_t>(selected[k])]);
    }
    if (!selected.empty()) {
        out.values -= d * qr.solve(out.values);
        out.values.rowwise() -= out.values.colwise().mean();
    }
    return out;
}

inline DenseTable to_dense(const PhenotypeMatrix& p) {
    return DenseTable{"subject_id", p.subject_ids, p.trait_names, p.values};
}

inline PhenotypeMatrix phenotype_from_dense(DenseTable t) {
    PhenotypeMatrix p;
    p.subject_ids = std::move(t.row_labels);
    p.trait_names = std::move(t.col_labels);
    p.values = std::move(t.values);
    for (Index k = 0; k < p.values.cols(); ++k) p.selected.push_back(k);
    return p;
}

/// Rows reordered to `subjects`; throws if any subject is missing.
inline Matrix align_rows(const PhenotypeMatrix& p, std::span<const std::string> subjects) {
    std::unordered_map<std::string, Index> row_of;
    for (std::size_t i = 0; i < p.subject_ids.size(); ++i) row_of.emplace(p.subject_ids[i], static_cast<Index>(i));
    Matrix out(static_cast<Index>(subjects.size()), p.values.cols());
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        auto it = row_of.find(subjects[i]);
        if (it == row_of.end()) throw DataError("phenotype matrix has no row for subject '" + subjects[i] + "'");
        out.row(static_cast<Index>(i)) = p.values.row(it->second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Classifier validation
// ---------------------------------------------------------------------------

struct FoldResult {
    Index n_test = 0;
    Index tp = 0, tn = 0, fp = 0, fn = 0;
    double accuracy() const { return n_test ? double(tp + tn) / double(n_test) : 0.0; }
};

struct ValidationReport {
    std::vector<FoldResult> folds;
    double accuracy = 0.0;
    double sensitivity = 0.0;  ///< label 1 is the positive class
    double specificity = 0.0;
};

/// Stratified k-fold cross-validation of a linear classifier with Gaussian class
/// densities, class-specific means and a shared diagonal covariance; equal priors.
inline ValidationReport validate_signature(const Matrix& y, const std::vector<int>& labels, int folds,
                                           std::uint64_t seed) {
    if (folds < 2) throw ConfigError("validate_signature: need at least 2 folds");
    if (static_cast<Index>(labels.size()) != y.rows()) throw ConfigError("validate_signature: one label per row");
    std::array<std::vector<Index>, 2> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ConfigError("validate_signature: labels must be 0 or 1");
        members[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
    }
    for (const auto& m : members)
        if (static_cast<int>(m.size()) < folds)
            throw DataError("validate_signature: each class needs at least as many members as folds");

    std::vector<int> fold_of(labels.size());
    std::mt19937_64 rng(seed);
    for (auto& m : members) {
        std::shuffle(m.begin(), m.end(), rng);
        for (std::size_t k = 0; k < m.size(); ++k) fold_of[static_cast<std::size_t>(m[k])] = static_cast<int>(k % folds);
    }

    const Index q = y.cols();
    ValidationReport rep;
    Index tp = 0, tn = 0, fp = 0, fn = 0;
    for (int f = 0; f < folds; ++f) {
        std::array<RowVector, 2> mean{RowVector::Zero(q), RowVector::Zero(q)};
        std::array<Index, 2> count{0, 0};
        for (Index i = 0; i < y.rows(); ++i) {
            if (fold_of[static_cast<std::size_t>(i)] == f) continue;
            const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
            mean[c] += y.row(i);
            ++count[c];
        }
        for (std::size_t c = 0; c < 2; ++c) mean[c] /= static_cast<double>(count[c]);
        RowVector var = RowVector::Zero(q);
        for (Index i = 0; i < y.rows(); ++i) {
            if (fold_of[static_cast<std::size_t>(i)] == f) continue;
            const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
            var += (y.row(i) - mean[c]).array().square().matrix();
        }
        var /= static_cast<double>(std::max<Index>(1, count[0] + count[1] - 2));
        const double floor = std::max(1e-9 * var.mean(), std::numeric_limits<double>::min());
        var = var.cwiseMax(floor);

        FoldResult fr;
        for (Index i = 0; i < y.rows(); ++i) {
            if (fold_of[static_cast<std::size_t>(i)] != f) continue;
            const double d0 = ((y.row(i) - mean[0]).array().square() / var.array()).sum();
            const double d1 = ((y.row(i) - mean[1]).array().square() / var.array()).sum();
            const int predicted = d1 < d0 ? 1 : 0;
            const int truth = labels[static_cast<std::size_t>(i)];
            ++fr.n_test;
            if (predicted == 1 && truth == 1) ++fr.tp;
            else if (predicted == 0 && truth == 0) ++fr.tn;
            else if (predicted == 1) ++fr.fp;
            else ++fr.fn;
        }
        tp += fr.tp; tn += fr.tn; fp += fr.fp; fn += fr.fn;
        rep.folds.push_back(fr);
    }
    rep.accuracy = double(tp + tn) / double(y.rows());
    rep.sensitivity = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    rep.specificity = tn + fp ? double(tn) / double(tn + fp) : 0.0;
    return rep;
}

inline void write_validation_report(std::ostream& out, const ValidationReport& r) {
    out << "#fold\tn_test\taccuracy\ttp\ttn\tfp\tfn\n";
    for (std::size_t f = 0; f < r.folds.size(); ++f) {
        const auto& x = r.folds[f];
        out << f + 1 << '\t' << x.n_test << '\t' << tsv::fmt(x.accuracy()) << '\t' << x.tp << '\t' << x.tn << '\t'
            << x.fp << '\t' << x.fn << '\n';
    }
    out << "# summary\taccuracy=" << tsv::fmt(r.accuracy) << "\tsensitivity=" << tsv::fmt(r.sensitivity)
        << "\tspecificity=" << tsv::fmt(r.specificity) << '\n';
}

} // namespace psrrr
