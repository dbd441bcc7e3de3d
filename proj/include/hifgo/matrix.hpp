#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "hifgo/errors.hpp"
#include "hifgo/rng.hpp"

namespace hifgo {

/// Dense row-major matrix of doubles. Everything in this project is desk
/// scale, so no blocking, no BLAS, no sparsity — plain loops with a fixed
/// summation order (row-major) so results replay byte-for-byte.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        if (rows == 0 || cols == 0) {
            throw DimError("matrix dimensions must be positive, got " +
                           std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Matrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) {
                throw DimError("ragged initializer: row " + std::to_string(i) +
                               " has " + std::to_string(row.size()) +
                               " entries, expected " + std::to_string(c));
            }
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    Matrix& operator+=(const Matrix& o);
    Matrix& operator-=(const Matrix& o);
    Matrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

using LayerMats = std::vector<Matrix>;

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimError(std::string(what) + ": shape mismatch " + shape_str(a) +
                       " vs " + shape_str(b));
    }
}

inline Matrix& Matrix::operator+=(const Matrix& o) {
    check_same_shape(*this, o, "matrix add");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

inline Matrix& Matrix::operator-=(const Matrix& o) {
    check_same_shape(*this, o, "matrix sub");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(double s, Matrix m) { return m *= s; }

/// Frobenius inner product: sum over entries of a[p][q] * b[p][q].
inline double frobenius_inner(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "frobenius_inner");
    double acc = 0.0;
    const auto& da = a.data();
    const auto& db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) acc += da[i] * db[i];
    return acc;
}

inline double frobenius_norm(const Matrix& a) {
    return std::sqrt(frobenius_inner(a, a));
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimError("matmul: inner dimensions differ, " + shape_str(a) +
                       " * " + shape_str(b));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

inline bool all_finite(const Matrix& m) {
    for (double v : m.data())
        if (!std::isfinite(v)) return false;
    return true;
}

/// i.i.d. Gaussian entries, mean 0, standard deviation `std`.
inline Matrix gaussian_matrix(RngStream& rng, std::size_t rows, std::size_t cols,
                              double std) {
    if (std < 0.0) throw ConfigError("gaussian_matrix: std must be >= 0");
    Matrix m(rows, cols);
    if (std == 0.0) return m;
    for (double& v : m.data()) v = std * rng.next_gaussian();
    return m;
}

/// Central-difference gradient of a scalar function of a matrix:
/// (f(x + eps*E_pq) - f(x - eps*E_pq)) / (2 eps) per entry. This is the
/// reference oracle every analytic gradient in the project is checked
/// against.
inline Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f,
                               const Matrix& x, double eps = 1e-5) {
    if (!(eps > 0.0)) throw ConfigError("finite_diff_grad: eps must be positive");
    Matrix g(x.rows(), x.cols());
    Matrix probe = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double orig = probe(i, j);
            probe(i, j) = orig + eps;
            const double hi = f(probe);
            probe(i, j) = orig - eps;
            const double lo = f(probe);
            probe(i, j) = orig;
            if (!std::isfinite(hi) || !std::isfinite(lo)) {
                throw NumericError("finite_diff_grad: non-finite evaluation at entry (" +
                                   std::to_string(i) + "," + std::to_string(j) + ")");
            }
            g(i, j) = (hi - lo) / (2.0 * eps);
        }
    }
    return g;
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix; nullopt when the matrix is not SPD.
inline std::optional<Matrix> cholesky(const Matrix& a) {
    if (a.rows() != a.cols()) return std::nullopt;
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) return std::nullopt;
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

/// Solves A x = b given the Cholesky factor L of A (forward then back
/// substitution).
inline std::vector<double> cholesky_solve(const Matrix& l, const std::vector<double>& b) {
    const std::size_t n = l.rows();
    if (b.size() != n) {
        throw DimError("cholesky_solve: rhs length " + std::to_string(b.size()) +
                       " vs system size " + std::to_string(n));
    }
    std::vector<double> y(n), x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

/// Solves A x = b for SPD A; throws NumericError when A is not SPD.
inline std::vector<double> spd_solve(const Matrix& a, const std::vector<double>& b) {
    auto l = cholesky(a);
    if (!l) throw NumericError("spd_solve: matrix is not symmetric positive definite");
    return cholesky_solve(*l, b);
}

inline std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
    if (a.cols() != x.size()) {
        throw DimError("matvec: " + shape_str(a) + " times vector of length " +
                       std::to_string(x.size()));
    }
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) y[i] += a(i, j) * x[j];
    return y;
}

}  // namespace hifgo
