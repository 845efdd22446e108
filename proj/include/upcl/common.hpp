#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "upcl/errors.hpp"

namespace upcl {

/// Dense row-major matrix of doubles. Just enough surface for this project;
/// rows are the unit of work everywhere (samples, prototypes, weights).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }
};

inline double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const double* a, std::size_t n) { return std::sqrt(dot(a, a, n)); }

inline double squared_distance(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

/// Scales each row to unit norm; rows with norm below eps are divided by eps
/// instead, so degenerate rows stay finite (norm <= 1) rather than NaN.
inline void normalize_rows(Matrix& m, double eps = 1e-12) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        double* p = m.row(r);
        const double len = norm(p, m.cols);
        const double inv = 1.0 / std::max(len, eps);
        for (std::size_t c = 0; c < m.cols; ++c) p[c] *= inv;
    }
}

/// A batch of encoded samples: unit-norm feature rows plus class labels.
struct FeatureBatch {
    Matrix feats;
    std::vector<int> labels;

    std::size_t size() const { return feats.rows; }
    std::size_t dim() const { return feats.cols; }
};

} // namespace upcl
