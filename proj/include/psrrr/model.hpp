#pragma once

// Rank-1 sparse reduced-rank regression with a group penalty: alternating group-lasso
// estimation of the genotype loading b and closed-form update of the phenotype loading a,
// plus the null-calibration procedure that tunes the per-pathway penalty weights.

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include <psrrr/common.hpp>
#include <psrrr/design.hpp>
#include <psrrr/parallel.hpp>
#include <psrrr/pathmap.hpp>
#include <psrrr/solver.hpp>
#include <psrrr/tsv.hpp>

namespace psrrr {

/// a = b'X'Y / (b'X'Xb), scaled to unit norm.
inline Vector update_a(const Vector& b, const Eigen::Ref<const Matrix>& x, const Matrix& y) {
    if (b.size() != x.cols()) throw ConfigError("update_a: b length does not match design width");
    if (y.rows() != x.rows()) throw ConfigError("update_a: phenotype rows do not match design rows");
    const Vector xb = x * b;
    const double denom = xb.squaredNorm();
    if (!(denom > 0.0)) throw DegenerateFactorError("update_a: latent genotype factor Xb is zero");
    Vector a = (y.transpose() * xb) / denom;
    const double n = a.norm();
    if (!(n > 0.0)) throw DegenerateFactorError("update_a: phenotypes are orthogonal to the latent factor Xb");
    return a / n;
}

/// Relative change between successive unit vectors after resolving the sign ambiguity.
inline double aligned_change(const Vector& now, const Vector& before) {
    if (before.size() != now.size() || before.isZero(0.0)) return INFINITY;
    const double s = now.dot(before) < 0.0 ? -1.0 : 1.0;
    const double n = now.norm();
    return n > 0.0 ? (now - s * before).norm() / n : INFINITY;
}

struct FitOptions {
    double gamma = 0.8;      ///< lambda = gamma * lambda_max at each alternation
    double tol = 1e-4;       ///< sign-aligned relative change of b and a
    int max_alt = 100;
    ActiveSetOptions solver;
};

struct PsrrrFit {
    Vector b;                      ///< unit norm, or zero when nothing was selected
    Vector a;                      ///< unit norm
    std::vector<Index> selected;   ///< groups with a nonzero block in b
    double gamma = 0.0;
    double lambda = 0.0;
    double lambda_max = 0.0;
    int iterations = 0;            ///< alternations performed
    bool converged = false;
    bool solver_converged = true;  ///< every inner solve reached its tolerance

    bool empty() const { return selected.empty(); }
};

inline void check_fit_options(const FitOptions& o) {
    if (!(o.gamma > 0.0 && o.gamma < 1.0)) throw ConfigError("fit: gamma must lie in (0, 1)");
    if (!(o.tol > 0.0)) throw ConfigError("fit: tol must be positive");
    if (o.max_alt < 1) throw ConfigError("fit: max_alt must be at least 1");
}

/// Alternating estimation of the rank-1 pair. Y is N x Q and mean-centred; the design has
/// unit-norm columns. An empty selection (b = 0) is returned as a fit, not an error.
inline PsrrrFit fit_rank1(const Matrix& y, const GroupedDesign& d, const Vector& w, const FitOptions& o = {}) {
    check_fit_options(o);
    if (y.rows() != d.n_rows()) throw ConfigError("fit_rank1: phenotype rows do not match design rows");
    if (y.cols() < 1) throw ConfigError("fit_rank1: phenotype matrix has no columns");
    if (w.size() != d.n_groups()) throw ConfigError("fit_rank1: expected one weight per group");

    PsrrrFit fit;
    fit.gamma = o.gamma;
    fit.a = Vector::Constant(y.cols(), 1.0 / std::sqrt(static_cast<double>(y.cols())));
    fit.b = Vector::Zero(d.n_cols());
    Vector raw_b;  // unnormalised solution, reused as a warm start
    for (int it = 1; it <= o.max_alt; ++it) {
        fit.iterations = it;
        const Vector z = y * fit.a;
        const Vector norms = group_correlation_norms(d, z);
        fit.lambda_max = norms.cwiseQuotient(w).maxCoeff();
        if (!(fit.lambda_max > 0.0)) {
            fit.b.setZero();
            fit.selected.clear();
            fit.lambda = 0.0;
            break;
        }
        fit.lambda = o.gamma * fit.lambda_max;
        auto res = active_set_solve(z, d, fit.lambda, w, o.solver, raw_b.size() ? &raw_b : nullptr, &norms);
        fit.solver_converged = fit.solver_converged && res.converged;
        fit.selected = res.selected;
        if (fit.selected.empty()) {
            fit.b.setZero();
            break;
        }
        raw_b = res.b;
        const Vector b = res.b / res.b.norm();
        const Vector a = update_a(b, d.x, y);
        const double db = aligned_change(b, fit.b), da = aligned_change(a, fit.a);
        fit.b = b;
        fit.a = a;
        if (db < o.tol && da < o.tol) {
            fit.converged = true;
            break;
        }
    }
    if (fit.selected.empty()) fit.converged = true;
    return fit;
}

// ---------------------------------------------------------------------------
// Weight tuning
// ---------------------------------------------------------------------------

struct SingleSelection {
    std::vector<Index> selected;
    double gamma = 0.0;
    int steps = 0;
};

/// Solves at lambda = gamma * lambda_max with gamma chosen by bisection so that exactly one
/// group is selected. The search starts from the bracket [s2, 1], s2 being the runner-up
/// normalised group score, since any lambda above it screens every group but the leader.
/// After `max_steps` bisections a selection of one or two groups is accepted.
inline SingleSelection select_single_group(const Vector& z, const GroupedDesign& d, const Vector& w,
                                           const Vector& norms, int max_steps = 20, const BcdOptions& bcd = {}) {
    SingleSelection out;
    const Vector score = norms.cwiseQuotient(w);
    const Index L = score.size();
    if (L == 0) return out;
    const double lmax = score.maxCoeff();
    if (!(lmax > 0.0)) return out;
    double second = 0.0;
    if (L > 1) {
        std::vector<double> s(score.data(), score.data() + L);
        std::nth_element(s.begin(), s.begin() + 1, s.end(), std::greater<>());
        second = s[1];
    }
    double lo = second / lmax, hi = 1.0;
    ActiveSetOptions as;
    as.bcd = bcd;
    std::vector<Index> best;
    double best_gamma = 0.0;
    for (int step = 1; step <= max_steps; ++step) {
        const double gamma = 0.5 * (lo + hi);
        out.steps = step;
        const auto res = active_set_solve(z, d, gamma * lmax, w, as, nullptr, &norms);
        const auto n = res.selected.size();
        if (n == 1) {
            out.selected = res.selected;
            out.gamma = gamma;
            return out;
        }
        if (n == 0) {
            hi = gamma;
        } else {
            lo = gamma;
            if (n == 2 || best.empty() || n < best.size()) {
                best = res.selected;
                best_gamma = gamma;
            }
        }
    }
    if (best.size() <= 2) {
        out.selected = best;
        out.gamma = best_gamma;
    }
    return out;
}

struct TuneOptions {
    double eta = 0.5;         ///< maximum per-iteration reduction factor
    double eps = 0.05;        ///< stop when sum |d_l| < eps
    int fits_per_iter = 0;    ///< 0 = 50 * L
    int max_iter = 100;
    int max_bisect = 20;
    bool clamp_factor = true; ///< limit each update factor to [eta, 2 - eta]
    /// Back off the effective eta toward 1 (halving 1 - eta) whenever sum |d_l| fails to
    /// improve on the best weights seen, and restart the step from those weights.
    bool backtrack = true;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    BcdOptions bcd;
};

struct TuneIteration {
    int iteration = 0;
    double sum_abs_d = 0.0;
    double max_abs_d = 0.0;
    Index empty_fits = 0;
    Vector weights;  ///< weights the frequencies were estimated under
    Vector pi;
};

struct WeightState {
    Vector weights;
    int iteration = 0;      ///< number of completed frequency estimates
    Vector pi;              ///< last selection frequencies
    Vector d;               ///< pi - 1/L
    double eta = 0.5;
    double step_eta = 0.5;  ///< effective eta of the next update (>= eta)
    double eps = 0.05;
    int fits_per_iter = 0;
    std::uint64_t seed = 0;
    bool converged = false;
    bool coarse = false;    ///< fits_per_iter < L
    std::vector<TuneIteration> history;

    double sum_abs_d() const { return d.size() ? d.cwiseAbs().sum() : INFINITY; }
};

/// w_l * [1 - sign(d_l)(eta - 1) L^2 d_l^2]. With `clamp` the factor is limited to
/// [eta, 2 - eta], the range it spans for |d_l| <= 1/L; larger over-selection would
/// otherwise multiply a weight by up to 1 + (1 - eta)(L - 1)^2.
inline Vector weight_update(const Vector& w, const Vector& d, double eta, bool clamp = true) {
    const double L = static_cast<double>(w.size());
    Vector out(w.size());
    for (Index l = 0; l < w.size(); ++l) {
        const double s = d[l] > 0.0 ? 1.0 : (d[l] < 0.0 ? -1.0 : 0.0);
        double factor = 1.0 - s * (eta - 1.0) * L * L * d[l] * d[l];
        if (clamp) factor = std::clamp(factor, eta, 2.0 - eta);
        out[l] = w[l] * factor;
    }
    return out;
}

/// Per-group frequency of single-group selections over null fits. Fit f uses the response
/// y_a = Y a0 (a0 uniform) with its rows permuted by a generator seeded from (seed, f).
inline Vector null_selection_frequencies(const Vector& ya, const GroupedDesign& d, const Vector& w, int fits,
                                         std::uint64_t seed, unsigned workers, int max_bisect, const BcdOptions& bcd,
                                         Index* empty_fits = nullptr) {
    const Index L = d.n_groups(), n = d.n_rows();
    // Correlations are computed in batches as one matrix product per batch.
    constexpr int kBatch = 64;
    const int n_batches = (fits + kBatch - 1) / kBatch;
    auto per_batch = parallel_map<std::vector<std::vector<Index>>>(
        static_cast<std::size_t>(n_batches), workers, [&](std::size_t bi) {
            const int first = static_cast<int>(bi) * kBatch;
            const int count = std::min(kBatch, fits - first);
            Matrix z(n, count);
            for (int k = 0; k < count; ++k) {
                std::vector<Index> perm(static_cast<std::size_t>(n));
                std::iota(perm.begin(), perm.end(), Index{0});
                std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(first + k)));
                std::shuffle(perm.begin(), perm.end(), rng);
                for (Index i = 0; i < n; ++i) z(i, k) = ya[perm[static_cast<std::size_t>(i)]];
            }
            const Matrix c = d.x.transpose() * z;
            std::vector<std::vector<Index>> sel(static_cast<std::size_t>(count));
            Vector norms(L);
            for (int k = 0; k < count; ++k) {
                for (Index l = 0; l < L; ++l) norms[l] = c.col(k).segment(d.group_start(l), d.group_size(l)).norm();
                sel[static_cast<std::size_t>(k)] = select_single_group(z.col(k), d, w, norms, max_bisect, bcd).selected;
            }
            return sel;
        });
    Vector counts = Vector::Zero(L);
    Index empty = 0;
    for (const auto& batch : per_batch)
        for (const auto& s : batch) {
            if (s.empty()) ++empty;
            for (auto l : s) counts[l] += 1.0;
        }
    if (empty_fits) *empty_fits = empty;
    return counts / static_cast<double>(fits);
}

/// Iteratively rescales the group weights until null single-selection frequencies are
/// close to uniform. Resumes from `resume` when given (weights, step and iteration count).
/// Without convergence the returned state holds the best weights seen.
inline WeightState tune_weights(const Matrix& y, const GroupedDesign& d, const Vector& initial_weights,
                                const TuneOptions& o, const WeightState* resume = nullptr) {
    const Index L = d.n_groups();
    if (!(o.eta > 0.0 && o.eta < 1.0)) throw ConfigError("tune_weights: eta must lie in (0, 1)");
    if (!(o.eps > 0.0)) throw ConfigError("tune_weights: eps must be positive");
    if (o.max_iter < 1) throw ConfigError("tune_weights: max_iter must be at least 1");
    if (o.fits_per_iter < 0) throw ConfigError("tune_weights: fits_per_iter must be non-negative");
    if (initial_weights.size() != L) throw ConfigError("tune_weights: expected one weight per group");
    if ((initial_weights.array() <= 0.0).any()) throw ConfigError("tune_weights: weights must be positive");
    if (y.rows() != d.n_rows()) throw ConfigError("tune_weights: phenotype rows do not match design rows");

    WeightState st;
    if (resume) {
        st = *resume;
        if (st.weights.size() != L) throw ConfigError("tune_weights: resumed state has the wrong number of weights");
        st.step_eta = std::clamp(st.step_eta, o.eta, 1.0);
    } else {
        st.weights = initial_weights;
        st.step_eta = o.eta;
    }
    st.eta = o.eta;
    st.eps = o.eps;
    st.seed = o.seed;
    st.fits_per_iter = o.fits_per_iter > 0 ? o.fits_per_iter : static_cast<int>(50 * L);
    st.coarse = st.fits_per_iter < L;
    st.converged = false;

    const Vector ya = y * Vector::Constant(y.cols(), 1.0 / std::sqrt(static_cast<double>(y.cols())));
    const double target = 1.0 / static_cast<double>(L);
    Vector best_w, best_pi, best_d;
    double best_sum = INFINITY;
    const int first = st.iteration;
    for (int tau = first; tau < first + o.max_iter; ++tau) {
        TuneIteration rec;
        rec.iteration = tau;
        rec.weights = st.weights;
        st.pi = null_selection_frequencies(ya, d, st.weights, st.fits_per_iter, derive_seed(o.seed, 0x7475u, tau),
                                           o.workers, o.max_bisect, o.bcd, &rec.empty_fits);
        st.d = st.pi.array() - target;
        st.iteration = tau + 1;
        rec.pi = st.pi;
        rec.sum_abs_d = st.sum_abs_d();
        rec.max_abs_d = st.d.cwiseAbs().maxCoeff();
        st.history.push_back(rec);
        if (rec.sum_abs_d < o.eps) {
            st.converged = true;
            return st;
        }
        if (!o.backtrack) {
            st.weights = weight_update(st.weights, st.d, o.eta, o.clamp_factor);
            continue;
        }
        if (rec.sum_abs_d < best_sum) {
            best_sum = rec.sum_abs_d;
            best_w = st.weights;
            best_pi = st.pi;
            best_d = st.d;
        } else {
            st.step_eta = 1.0 - 0.5 * (1.0 - st.step_eta);
        }
        st.weights = weight_update(best_w, best_d, st.step_eta, o.clamp_factor);
    }
    if (o.backtrack && best_w.size()) {
        st.weights = best_w;
        st.pi = best_pi;
        st.d = best_d;
    }
    return st;
}

inline void write_weight_state(std::ostream& out, const WeightState& st, const PathwayAnnotation& ann) {
    out << "#pathway\tsize\tweight\tpi\td\titeration\n";
    for (Index l = 0; l < ann.n_pathways(); ++l) {
        const auto& p = ann.pathways[static_cast<std::size_t>(l)];
        out << p.name << '\t' << p.size() << '\t' << tsv::fmt(st.weights[l]) << '\t'
            << (st.pi.size() ? tsv::fmt(st.pi[l]) : "NA") << '\t' << (st.d.size() ? tsv::fmt(st.d[l]) : "NA") << '\t'
            << st.iteration << '\n';
    }
}

inline nlohmann::json weight_state_sidecar(const WeightState& st) {
    nlohmann::json j;
    j["eta"] = st.eta;
    j["step_eta"] = st.step_eta;
    j["eps"] = st.eps;
    j["fits_per_iter"] = st.fits_per_iter;
    j["seed"] = st.seed;
    j["iteration"] = st.iteration;
    j["converged"] = st.converged;
    j["coarse_estimate"] = st.coarse;
    j["sum_abs_d"] = st.d.size() ? st.sum_abs_d() : -1.0;
    auto& h = j["history"] = nlohmann::json::array();
    for (const auto& r : st.history)
        h.push_back({{"iteration", r.iteration}, {"sum_abs_d", r.sum_abs_d}, {"max_abs_d", r.max_abs_d},
                     {"empty_fits", r.empty_fits}});
    return j;
}

/// Weights (and iteration counter) from a weight-state TSV, matched to the annotation by
/// pathway name.
inline WeightState read_weight_state(std::istream& in, const PathwayAnnotation& ann) {
    const auto table = tsv::read_table(in, "weight state");
    WeightState st;
    st.weights = Vector::Constant(ann.n_pathways(), NAN);
    st.pi = Vector::Constant(ann.n_pathways(), NAN);
    st.d = Vector::Constant(ann.n_pathways(), NAN);
    bool have_pi = true;
    for (const auto& row : table.rows) {
        if (row.fields.size() != 6) throw DataError(tsv::where("weight state", row.line) + ": expected 6 fields");
        const Index l = ann.pathway_index(row.fields[0]);
        if (l < 0) throw DataError(tsv::where("weight state", row.line) + ": unknown pathway '" + row.fields[0] + "'");
        st.weights[l] = tsv::parse_double(row.fields[2], "weight state", row.line);
        if (row.fields[3] == "NA") have_pi = false;
        else {
            st.pi[l] = tsv::parse_double(row.fields[3], "weight state", row.line);
            st.d[l] = tsv::parse_double(row.fields[4], "weight state", row.line);
        }
        st.iteration = static_cast<int>(tsv::parse_int(row.fields[5], "weight state", row.line));
    }
    if (st.weights.hasNaN()) throw DataError("weight state: not every pathway has a weight");
    if ((st.weights.array() <= 0.0).any()) throw DataError("weight state: weights must be positive");
    if (!have_pi || st.pi.hasNaN()) {
        st.pi.resize(0);
        st.d.resize(0);
    }
    return st;
}

} // namespace psrrr
