#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "hifgo/models.hpp"
#include "hifgo/tasks.hpp"

namespace hifgo {

/// N x N score matrix: at(t, j) is the score on task j after completing
/// task t (0-indexed here; the conventional description is 1-indexed).
/// Entries with j > t are zero-shot-forward scores; they are stored for
/// inspection but never enter Last/Avg/BWT. NaN marks absent rows
/// (multi-task runs populate only the final row).
struct PerfMatrix {
    int n = 0;
    std::vector<double> scores;

    PerfMatrix() = default;
    explicit PerfMatrix(int tasks)
        : n(tasks),
          scores(static_cast<std::size_t>(tasks) * static_cast<std::size_t>(tasks),
                 std::numeric_limits<double>::quiet_NaN()) {}

    double at(int t, int j) const {
        return scores[static_cast<std::size_t>(t) * n + static_cast<std::size_t>(j)];
    }
    double& at(int t, int j) {
        return scores[static_cast<std::size_t>(t) * n + static_cast<std::size_t>(j)];
    }
};

namespace detail {

inline void require_populated(const PerfMatrix& pm, int t, int j, const char* op) {
    if (std::isnan(pm.at(t, j))) {
        throw InputError(std::string(op) + ": score for task " + std::to_string(j + 1) +
                         " after task " + std::to_string(t + 1) + " is not populated");
    }
}

}  // namespace detail

/// Mean score over all tasks after the final task.
inline double last(const PerfMatrix& pm) {
    if (pm.n < 1) throw InputError("last: empty performance matrix");
    double sum = 0.0;
    for (int j = 0; j < pm.n; ++j) {
        detail::require_populated(pm, pm.n - 1, j, "last");
        sum += pm.at(pm.n - 1, j);
    }
    return sum / pm.n;
}

/// Mean over checkpoints of the seen-task mean: after each task t, average
/// the scores of tasks 1..t, then average those checkpoint means.
inline double avg(const PerfMatrix& pm) {
    if (pm.n < 1) throw InputError("avg: empty performance matrix");
    double sum = 0.0;
    for (int t = 0; t < pm.n; ++t) {
        double row = 0.0;
        for (int j = 0; j <= t; ++j) {
            detail::require_populated(pm, t, j, "avg");
            row += pm.at(t, j);
        }
        sum += row / (t + 1);
    }
    return sum / pm.n;
}

/// Alternative reading: every checkpoint averages over all n tasks,
/// including not-yet-seen ones.
inline double avg_all(const PerfMatrix& pm) {
    if (pm.n < 1) throw InputError("avg: empty performance matrix");
    double sum = 0.0;
    for (int t = 0; t < pm.n; ++t) {
        double row = 0.0;
        for (int j = 0; j < pm.n; ++j) {
            detail::require_populated(pm, t, j, "avg");
            row += pm.at(t, j);
        }
        sum += row / pm.n;
    }
    return sum / pm.n;
}

/// Score of each task immediately after its own training: the diagonal.
inline std::vector<double> imd(const PerfMatrix& pm) {
    std::vector<double> out;
    out.reserve(pm.n);
    for (int j = 0; j < pm.n; ++j) {
        detail::require_populated(pm, j, j, "imd");
        out.push_back(pm.at(j, j));
    }
    return out;
}

/// Backward transfer: mean over previous tasks of (final score - score
/// immediately after training). Negative values mean forgetting.
inline double bwt(const PerfMatrix& pm) {
    if (pm.n < 2) {
        throw InputError("bwt is undefined for a single-task stream");
    }
    double sum = 0.0;
    for (int j = 0; j < pm.n - 1; ++j) {
        detail::require_populated(pm, pm.n - 1, j, "bwt");
        detail::require_populated(pm, j, j, "bwt");
        sum += pm.at(pm.n - 1, j) - pm.at(j, j);
    }
    return sum / (pm.n - 1);
}

/// Absolute second-order remainder of the loss around weights1:
/// |L(w1 + delta) - L(w1) - <grad L(w1), delta>|. Scales quadratically in
/// |delta| when the first-order term is removed.
inline double lossless_residual(const ModelSpec& spec, const LayerMats& weights1,
                                const LayerMats& delta2, const Batch& batch) {
    if (delta2.size() != weights1.size()) {
        throw DimError("lossless_residual: delta layer count mismatch");
    }
    const double base = forward_loss(spec, weights1, batch);
    const GradReport rep = grad_wrt_merged(spec, weights1, batch);
    LayerMats shifted = weights1;
    double first_order = 0.0;
    for (std::size_t l = 0; l < weights1.size(); ++l) {
        check_same_shape(weights1[l], delta2[l], "lossless_residual delta");
        shifted[l] += delta2[l];
        first_order += frobenius_inner(rep.weight_grads[l], delta2[l]);
    }
    const double moved = forward_loss(spec, shifted, batch);
    return std::abs(moved - base - first_order);
}

/// Quadratic interference of a flattened parameter increment against an
/// explicit source-task Hessian: delta^T H delta.
inline double quad_interference(const Matrix& hessian, const std::vector<double>& delta) {
    if (hessian.rows() != hessian.cols() || hessian.rows() != delta.size()) {
        throw DimError("quad_interference: hessian " + shape_str(hessian) +
                       " vs delta length " + std::to_string(delta.size()));
    }
    double norm_sq = 0.0;
    for (double v : delta) norm_sq += v * v;
    if (norm_sq == 0.0) throw InputError("quad_interference: zero delta");
    const std::vector<double> hd = matvec(hessian, delta);
    double acc = 0.0;
    for (std::size_t i = 0; i < delta.size(); ++i) acc += delta[i] * hd[i];
    return acc;
}

/// Hessian-vector-product form for models without an explicit Hessian.
inline double quad_interference(
    const std::function<LayerMats(const LayerMats&)>& hvp, const LayerMats& delta) {
    double norm_sq = 0.0;
    for (const auto& d : delta) norm_sq += frobenius_inner(d, d);
    if (norm_sq == 0.0) throw InputError("quad_interference: zero delta");
    const LayerMats hd = hvp(delta);
    if (hd.size() != delta.size()) {
        throw DimError("quad_interference: hvp returned wrong layer count");
    }
    double acc = 0.0;
    for (std::size_t l = 0; l < delta.size(); ++l) {
        acc += frobenius_inner(delta[l], hd[l]);
    }
    return acc;
}

enum class GpwcForm { population, empirical };

namespace detail {

/// Minimizer of the interpolated objective
/// (1-lambda) * 0.5 (theta-ta)^T Ha (theta-ta) + lambda * 0.5 (theta-tb)^T Hb (theta-tb).
inline std::vector<double> interp_argmin(const Matrix& ha, const Matrix& hb,
                                         const std::vector<double>& ta,
                                         const std::vector<double>& tb,
                                         double lambda) {
    const std::size_t d = ta.size();
    Matrix m(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            m(i, j) = (1.0 - lambda) * ha(i, j) + lambda * hb(i, j);
    const std::vector<double> ra = matvec(ha, ta);
    const std::vector<double> rb = matvec(hb, tb);
    std::vector<double> rhs(d);
    for (std::size_t i = 0; i < d; ++i) rhs[i] = (1.0 - lambda) * ra[i] + lambda * rb[i];
    return spd_solve(m, rhs);
}

inline std::vector<double> row_of(const Matrix& m) {
    std::vector<double> v(m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) v[j] = m(0, j);
    return v;
}

}  // namespace detail

/// Checks the identity g = H_A v on a quadratic task pair, where g is the
/// gradient of task B's loss at task A's optimum and v is the tangent of
/// the interpolated-optimum curve at task A, computed independently by
/// central differences of the argmin family. Population form uses the
/// stored exact matrices; empirical form compares the sampled gradient at
/// the sampled task-A optimum against the population right-hand side.
/// Returns the relative error, or 0 in the degenerate case where both
/// optima coincide.
inline double gpwc_identity_check(const TaskStream& pair,
                                  GpwcForm form = GpwcForm::population) {
    if (pair.size() != 2) {
        throw InputError("gpwc_identity_check expects a two-task stream");
    }
    const TaskSpec& a = pair.tasks[0];
    const TaskSpec& b = pair.tasks[1];
    if (!a.theta_star || !a.hessian || !b.theta_star || !b.hessian) {
        throw InputError("gpwc_identity_check needs ground-truth optima and Hessians");
    }
    const std::vector<double> ta = detail::row_of(*a.theta_star);
    const std::vector<double> tb = detail::row_of(*b.theta_star);
    const std::size_t dim = ta.size();
    if (!cholesky(*a.hessian)) {
        throw NumericError("gpwc_identity_check: H_A is singular or not SPD");
    }

    // v = -d theta*(lambda)/d lambda at 0, via central differences.
    const double h = 1e-5;
    const auto plus = detail::interp_argmin(*a.hessian, *b.hessian, ta, tb, h);
    const auto minus = detail::interp_argmin(*a.hessian, *b.hessian, ta, tb, -h);
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < dim; ++i) v[i] = -(plus[i] - minus[i]) / (2.0 * h);
    const std::vector<double> hav = matvec(*a.hessian, v);

    std::vector<double> g(dim);
    if (form == GpwcForm::population) {
        // g = H_B (theta_A* - theta_B*)
        std::vector<double> diff(dim);
        for (std::size_t i = 0; i < dim; ++i) diff[i] = ta[i] - tb[i];
        g = matvec(*b.hessian, diff);
    } else {
        // Sampled optimum of task A from its train set, then the sampled
        // gradient of task B's train loss at that point.
        const Batch& xa = a.train;
        const std::size_t na = xa.size();
        Matrix gram = matmul(transpose(xa.inputs), xa.inputs);
        gram *= 1.0 / static_cast<double>(na);
        std::vector<double> xty(dim, 0.0);
        for (std::size_t i = 0; i < na; ++i)
            for (std::size_t j = 0; j < dim; ++j)
                xty[j] += xa.inputs(i, j) * xa.targets(i, 0);
        for (double& vv : xty) vv /= static_cast<double>(na);
        const std::vector<double> theta_hat = spd_solve(gram, xty);

        ModelSpec spec = ModelSpec::linear_regression(dim, 1);
        Matrix w(1, dim);
        for (std::size_t j = 0; j < dim; ++j) w(0, j) = theta_hat[j];
        const GradReport rep = grad_wrt_merged(spec, {w}, b.train);
        g = detail::row_of(rep.weight_grads[0]);
    }

    double g_norm = 0.0, hav_norm = 0.0, diff_norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        g_norm += g[i] * g[i];
        hav_norm += hav[i] * hav[i];
        const double d = g[i] - hav[i];
        diff_norm += d * d;
    }
    g_norm = std::sqrt(g_norm);
    hav_norm = std::sqrt(hav_norm);
    diff_norm = std::sqrt(diff_norm);
    if (g_norm <= 1e-12 && hav_norm <= 1e-12) return 0.0;  // coinciding optima
    if (hav_norm <= 1e-12) {
        throw NumericError("gpwc_identity_check: H_A v vanished but g did not");
    }
    return diff_norm / hav_norm;
}

}  // namespace hifgo
