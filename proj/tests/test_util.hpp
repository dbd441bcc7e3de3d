#pragma once

// Test-only oracles, kept independent of the library implementation paths
// they are used to check.

#include <cmath>
#include <cstddef>
#include <vector>

#include "hifgo/matrix.hpp"

namespace testutil {

// Triple-loop product, the reference for hifgo::matmul.
inline hifgo::Matrix ref_matmul(const hifgo::Matrix& a, const hifgo::Matrix& b) {
    hifgo::Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    return out;
}

// Elementwise multiply-and-sum, the reference for frobenius_inner.
inline double ref_inner(const hifgo::Matrix& a, const hifgo::Matrix& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * b(i, j);
    return acc;
}

inline std::vector<double> flatten(const std::vector<hifgo::Matrix>& mats) {
    std::vector<double> out;
    for (const auto& m : mats)
        out.insert(out.end(), m.data().begin(), m.data().end());
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

// Relative error between an analytic and a reference gradient, using the
// flattened global norm.
inline double rel_error(const std::vector<double>& got, const std::vector<double>& want) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double d = got[i] - want[i];
        diff += d * d;
        ref += want[i] * want[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-300);
}

inline double rel_error(const hifgo::Matrix& got, const hifgo::Matrix& want) {
    return rel_error(std::vector<double>(got.data()), std::vector<double>(want.data()));
}

// Eigenvalues of a symmetric matrix via cyclic Jacobi sweeps; used to count
// numerically nonzero singular values of small matrices.
inline std::vector<double> jacobi_eigenvalues(hifgo::Matrix a, int sweeps = 50) {
    const std::size_t n = a.rows();
    for (int s = 0; s < sweeps; ++s) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-18) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
    return eig;
}

// Count of singular directions of m above tol, via column-pivoted modified
// Gram-Schmidt (no Gram matrix, so tiny values are not lost to squaring).
inline int numeric_rank(const hifgo::Matrix& m, double tol = 1e-10) {
    const std::size_t rows = m.rows(), cols = m.cols();
    std::vector<std::vector<double>> col(cols, std::vector<double>(rows));
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i) col[j][i] = m(i, j);

    int rank = 0;
    for (std::size_t step = 0; step < std::min(rows, cols); ++step) {
        std::size_t pivot = step;
        double best = 0.0;
        for (std::size_t j = step; j < cols; ++j) {
            const double nj = norm(col[j]);
            if (nj > best) {
                best = nj;
                pivot = j;
            }
        }
        if (best <= tol) break;
        std::swap(col[step], col[pivot]);
        ++rank;
        for (double& v : col[step]) v /= best;
        for (std::size_t j = step + 1; j < cols; ++j) {
            const double proj = dot(col[step], col[j]);
            for (std::size_t i = 0; i < rows; ++i) col[j][i] -= proj * col[step][i];
        }
    }
    return rank;
}

// Well-conditioned random SPD matrix: G G^T + ridge I.
inline hifgo::Matrix random_spd(hifgo::RngStream& rng, std::size_t n, double ridge = 0.5) {
    const hifgo::Matrix g = hifgo::gaussian_matrix(rng, n, n, 1.0);
    hifgo::Matrix h = ref_matmul(g, hifgo::transpose(g));
    for (std::size_t i = 0; i < n; ++i) h(i, i) += ridge * static_cast<double>(n);
    return h;
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace testutil
