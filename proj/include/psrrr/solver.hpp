#pragma once

// Penalised least-squares engines for a univariate working response z:
//
//   group lasso:  1/2 ||z - X b||^2 + lambda * sum_l w_l ||b_l||_2
//   lasso:        1/2 ||z - X beta||^2 + lambda * ||beta||_1
//
// The group lasso is solved by block coordinate descent. Inside a selected block each
// coefficient follows the fixed-point update
//
//   b_j <- (X_j' r + |X_j|^2 b_j) / (|X_j|^2 + lambda w_l / ||b_l||)
//
// with ||b_l|| taken at the current iterate (for unit-norm columns this is the familiar
// (X_j' r + b_j) / (1 + lambda w_l / ||b_l||)). A block is zeroed whenever its partial
// residual correlation satisfies ||X_l' r_l|| <= lambda w_l.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <psrrr/common.hpp>
#include <psrrr/design.hpp>

namespace psrrr {

struct BcdOptions {
    double tol = 1e-6;         ///< max |coefficient change| over a sweep
    int max_outer = 1000;
    int max_inner = 10000;
    int recompute_every = 50;  ///< full residual refresh period (sweeps)
    bool record_trace = false; ///< keep the objective after every outer sweep
};

struct SolverResult {
    Vector b;
    std::vector<Index> selected;   ///< groups with a nonzero block
    int iterations = 0;            ///< outer sweeps
    double kkt_residual = 0.0;
    double objective = 0.0;
    bool converged = false;
    std::vector<double> objective_trace;
    std::vector<Index> readmitted; ///< groups added by the active-set KKT recheck
    int rounds = 0;                ///< active-set solve rounds
};

inline void check_group_problem(const GroupedDesign& d, const Vector& z, double lambda, const Vector& w) {
    if (z.size() != d.n_rows()) throw ConfigError("solver: response length does not match design rows");
    if (w.size() != d.n_groups()) throw ConfigError("solver: expected one weight per group");
    if (!(lambda >= 0.0)) throw ConfigError("solver: lambda must be non-negative");
    if ((w.array() <= 0.0).any()) throw ConfigError("solver: group weights must be strictly positive");
}

/// ||X_l' z||_2 for every group.
inline Vector group_correlation_norms(const GroupedDesign& d, const Vector& z) {
    const Vector xtz = d.x.transpose() * z;
    Vector out(d.n_groups());
    for (Index l = 0; l < d.n_groups(); ++l) out[l] = xtz.segment(d.group_start(l), d.group_size(l)).norm();
    return out;
}

/// Smallest lambda at which b = 0 is optimal: max_l ||X_l' z|| / w_l. Zero for z = 0.
inline double lambda_max(const GroupedDesign& d, const Vector& z, const Vector& w) {
    if (w.size() != d.n_groups()) throw ConfigError("lambda_max: expected one weight per group");
    if (d.n_groups() == 0) return 0.0;
    return group_correlation_norms(d, z).cwiseQuotient(w).maxCoeff();
}

inline double group_penalty(const GroupedDesign& d, const Vector& b, const Vector& w) {
    double pen = 0.0;
    for (Index l = 0; l < d.n_groups(); ++l) pen += w[l] * b.segment(d.group_start(l), d.group_size(l)).norm();
    return pen;
}

inline double group_lasso_objective(const GroupedDesign& d, const Vector& z, const Vector& b, double lambda,
                                    const Vector& w) {
    return 0.5 * (z - d.x * b).squaredNorm() + lambda * group_penalty(d, b, w);
}

inline std::vector<Index> nonzero_groups(const GroupedDesign& d, const Vector& b) {
    std::vector<Index> out;
    for (Index l = 0; l < d.n_groups(); ++l)
        if (!b.segment(d.group_start(l), d.group_size(l)).isZero(0.0)) out.push_back(l);
    return out;
}

/// Largest violation of the group-lasso optimality conditions at b.
/// Zero block: max(0, ||X_l'r|| - lambda w_l). Nonzero block: ||X_l'r - lambda w_l b_l/||b_l||||.
inline double kkt_check(const Vector& b, const Vector& z, const GroupedDesign& d, double lambda, const Vector& w) {
    check_group_problem(d, z, lambda, w);
    const Vector r = z - d.x * b;
    const Vector g = d.x.transpose() * r;
    double worst = 0.0;
    for (Index l = 0; l < d.n_groups(); ++l) {
        const auto gl = g.segment(d.group_start(l), d.group_size(l));
        const auto bl = b.segment(d.group_start(l), d.group_size(l));
        const double bn = bl.norm();
        const double v = bn == 0.0 ? std::max(0.0, gl.norm() - lambda * w[l])
                                   : (gl - (lambda * w[l] / bn) * bl).norm();
        worst = std::max(worst, v);
    }
    return worst;
}

namespace detail {

inline constexpr double kBlockZeroNorm = 1e-12;

/// Squared column norms, filled block by block on first use (NaN = not yet computed).
struct ColumnNorms {
    Vector sq;
    explicit ColumnNorms(Index p) : sq(Vector::Constant(p, std::numeric_limits<double>::quiet_NaN())) {}
    auto block(const GroupedDesign& d, Index l) {
        const Index o = d.group_start(l), s = d.group_size(l);
        if (s > 0 && std::isnan(sq[o])) sq.segment(o, s) = d.block(l).colwise().squaredNorm().transpose();
        return sq.segment(o, s);
    }
};

/// One block update. r is the full residual z - Xb on entry and exit. Returns the largest
/// absolute coefficient change in the block.
inline double update_block(const GroupedDesign& d, Index l, double lw, Vector& b, Vector& r, ColumnNorms& norms,
                           const BcdOptions& o) {
    const Index off = d.group_start(l), size = d.group_size(l);
    const auto X = d.block(l);
    auto bl = b.segment(off, size);
    const Vector old = bl;
    const bool was_zero = bl.isZero(0.0);

    if (!was_zero) r.noalias() += X * bl;  // r now holds the partial residual r_l
    const Vector g = X.transpose() * r;
    const double gnorm = g.norm();
    if (gnorm <= lw) {
        bl.setZero();
        return old.cwiseAbs().maxCoeff();
    }

    if (was_zero) {
        // Enter along X_l' r_l with an exact line search so the objective cannot rise.
        const Vector u = g / gnorm;
        const Vector xu = X * u;
        const double step = (gnorm - lw) / xu.squaredNorm();
        bl = step * u;
        r.noalias() -= step * xu;
    } else {
        r.noalias() -= X * bl;
    }

    const auto csq = norms.block(d, l);
    for (int inner = 0; inner < o.max_inner; ++inner) {
        double nsq = bl.squaredNorm();
        double delta = 0.0;
        for (Index j = 0; j < size; ++j) {
            const double n = std::sqrt(nsq);
            if (n < kBlockZeroNorm) {
                r.noalias() += X * bl;
                bl.setZero();
                return (bl - old).cwiseAbs().maxCoeff();
            }
            const double c = X.col(j).dot(r) + csq[j] * bl[j];
            const double nb = c / (csq[j] + lw / n);
            const double dj = nb - bl[j];
            if (dj == 0.0) continue;
            r.noalias() -= dj * X.col(j);
            nsq += nb * nb - bl[j] * bl[j];
            bl[j] = nb;
            delta = std::max(delta, std::abs(dj));
        }
        if (delta < o.tol) break;
    }
    return (bl - old).cwiseAbs().maxCoeff();
}

inline void refresh_residual(const GroupedDesign& d, const Vector& z, const Vector& b, Vector& r) {
    r = z;
    for (Index l = 0; l < d.n_groups(); ++l) {
        const auto bl = b.segment(d.group_start(l), d.group_size(l));
        if (!bl.isZero(0.0)) r.noalias() -= d.block(l) * bl;
    }
}

/// Block coordinate descent restricted to `groups`; other blocks of b stay fixed.
inline void bcd(const GroupedDesign& d, const Vector& z, double lambda, const Vector& w,
                std::span<const Index> groups, Vector& b, Vector& r, ColumnNorms& norms, const BcdOptions& o,
                SolverResult& res) {
    res.converged = false;
    for (int sweep = 1; sweep <= o.max_outer; ++sweep) {
        double change = 0.0;
        for (auto l : groups) change = std::max(change, update_block(d, l, lambda * w[l], b, r, norms, o));
        ++res.iterations;
        if (o.recompute_every > 0 && sweep % o.recompute_every == 0) refresh_residual(d, z, b, r);
        if (o.record_trace) res.objective_trace.push_back(0.5 * r.squaredNorm() + lambda * group_penalty(d, b, w));
        if (change < o.tol) {
            res.converged = true;
            break;
        }
    }
}

inline void finish(const GroupedDesign& d, const Vector& z, double lambda, const Vector& w, SolverResult& res) {
    res.selected = nonzero_groups(d, res.b);
    res.objective = group_lasso_objective(d, z, res.b, lambda, w);
    res.kkt_residual = kkt_check(res.b, z, d, lambda, w);
}

} // namespace detail

/// Group lasso by block coordinate descent over all groups, starting from b = 0
/// (or from `warm_start`).
inline SolverResult group_lasso_bcd(const Vector& z, const GroupedDesign& d, double lambda, const Vector& w,
                                    const BcdOptions& o = {}, const Vector* warm_start = nullptr) {
    check_group_problem(d, z, lambda, w);
    SolverResult res;
    res.b = warm_start ? *warm_start : Vector::Zero(d.n_cols());
    if (res.b.size() != d.n_cols()) throw ConfigError("group_lasso_bcd: warm start has the wrong length");
    Vector r;
    detail::refresh_residual(d, z, res.b, r);
    std::vector<Index> all(static_cast<std::size_t>(d.n_groups()));
    for (Index l = 0; l < d.n_groups(); ++l) all[static_cast<std::size_t>(l)] = l;
    detail::ColumnNorms norms(d.n_cols());
    detail::bcd(d, z, lambda, w, all, res.b, r, norms, o, res);
    res.rounds = 1;
    detail::finish(d, z, lambda, w, res);
    return res;
}

struct ActiveSetOptions {
    double screen_multiple = 1.0;  ///< initial set: ||X_l'z|| / w_l >= screen_multiple * lambda
    BcdOptions bcd;
    int max_rounds = 0;            ///< 0 = up to L + 1 rounds
};

/// Group lasso restricted to a screened active set, followed by KKT rechecks over the
/// excluded groups; violators are admitted and the restricted problem re-solved until no
/// excluded group violates its zero condition. `correlation_norms`, if given, must be
/// ||X_l' z|| per group.
inline SolverResult active_set_solve(const Vector& z, const GroupedDesign& d, double lambda, const Vector& w,
                                     const ActiveSetOptions& o = {}, const Vector* warm_start = nullptr,
                                     const Vector* correlation_norms = nullptr) {
    check_group_problem(d, z, lambda, w);
    const Index L = d.n_groups();
    const Vector scores = correlation_norms ? *correlation_norms : group_correlation_norms(d, z);

    SolverResult res;
    res.b = Vector::Zero(d.n_cols());
    std::vector<char> active(static_cast<std::size_t>(L), 0);
    std::vector<Index> groups;
    for (Index l = 0; l < L; ++l) {
        const bool warm = warm_start && !warm_start->segment(d.group_start(l), d.group_size(l)).isZero(0.0);
        if (scores[l] >= o.screen_multiple * lambda * w[l] || warm) {
            active[static_cast<std::size_t>(l)] = 1;
            groups.push_back(l);
            if (warm) res.b.segment(d.group_start(l), d.group_size(l)) = warm_start->segment(d.group_start(l), d.group_size(l));
        }
    }

    Vector r;
    detail::refresh_residual(d, z, res.b, r);
    detail::ColumnNorms norms(d.n_cols());
    const int max_rounds = o.max_rounds > 0 ? o.max_rounds : static_cast<int>(L) + 1;
    bool all_converged = true;
    for (int round = 1; round <= max_rounds; ++round) {
        res.rounds = round;
        std::sort(groups.begin(), groups.end());
        if (!groups.empty()) detail::bcd(d, z, lambda, w, groups, res.b, r, norms, o.bcd, res);
        all_converged = groups.empty() || res.converged;
        detail::refresh_residual(d, z, res.b, r);
        std::vector<Index> violators;
        for (Index l = 0; l < L; ++l) {
            if (active[static_cast<std::size_t>(l)]) continue;
            if ((d.block(l).transpose() * r).norm() > lambda * w[l]) violators.push_back(l);
        }
        if (violators.empty()) break;
        for (auto l : violators) {
            active[static_cast<std::size_t>(l)] = 1;
            groups.push_back(l);
            res.readmitted.push_back(l);
        }
    }
    res.converged = all_converged;
    detail::finish(d, z, lambda, w, res);
    return res;
}

// ---------------------------------------------------------------------------
// Lasso
// ---------------------------------------------------------------------------

struct LassoOptions {
    double tol = 1e-6;
    int max_iter = 10000;
};

struct LassoResult {
    Vector beta;
    int iterations = 0;
    bool converged = false;
    double objective = 0.0;
};

inline double soft_threshold(double x, double t) {
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

inline double lasso_lambda_max(const Eigen::Ref<const Matrix>& x, const Vector& z) {
    if (x.cols() == 0) return 0.0;
    return (x.transpose() * z).cwiseAbs().maxCoeff();
}

inline double lasso_objective(const Eigen::Ref<const Matrix>& x, const Vector& z, const Vector& beta, double lambda) {
    return 0.5 * (z - x * beta).squaredNorm() + lambda * beta.lpNorm<1>();
}

/// Cyclic coordinate descent with soft-threshold updates. After each full sweep the
/// nonzero coordinates are iterated to convergence; the run stops when a full sweep
/// changes no coefficient by more than tol.
inline LassoResult lasso_cd(const Vector& z, const Eigen::Ref<const Matrix>& x, double lambda,
                            const LassoOptions& o = {}, const Vector* warm_start = nullptr) {
    if (z.size() != x.rows()) throw ConfigError("lasso_cd: response length does not match design rows");
    if (!(lambda >= 0.0)) throw ConfigError("lasso_cd: lambda must be non-negative");
    const Index p = x.cols();
    LassoResult res;
    res.beta = warm_start ? *warm_start : Vector::Zero(p);
    const Vector csq = x.colwise().squaredNorm().transpose();
    Vector r = z - x * res.beta;

    auto update = [&](Index j) {
        if (csq[j] == 0.0) return 0.0;
        const double c = x.col(j).dot(r) + csq[j] * res.beta[j];
        const double nb = soft_threshold(c, lambda) / csq[j];
        const double dj = nb - res.beta[j];
        if (dj != 0.0) {
            r.noalias() -= dj * x.col(j);
            res.beta[j] = nb;
        }
        return std::abs(dj);
    };

    while (res.iterations < o.max_iter) {
        double change = 0.0;
        for (Index j = 0; j < p; ++j) change = std::max(change, update(j));
        ++res.iterations;
        if (change < o.tol) {
            res.converged = true;
            break;
        }
        std::vector<Index> nz;
        for (Index j = 0; j < p; ++j)
            if (res.beta[j] != 0.0) nz.push_back(j);
        while (res.iterations < o.max_iter) {
            double c2 = 0.0;
            for (auto j : nz) c2 = std::max(c2, update(j));
            ++res.iterations;
            if (c2 < o.tol) break;
        }
    }
    res.objective = lasso_objective(x, z, res.beta, lambda);
    return res;
}

} // namespace psrrr
