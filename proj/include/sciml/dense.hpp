#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sciml/tensor.hpp"

namespace sciml {

/// Solves A x = b by Gaussian elimination with partial pivoting.
/// Intended for the small systems assembled by the solvers here.
inline Tensor solve_dense(Tensor a, Tensor b) {
    a.require_rank(2);
    if (a.rows() != a.cols()) throw DimensionError("solve_dense needs a square matrix");
    const std::size_t n = a.rows();
    Tensor x = b.reshape({b.size()});
    if (x.size() != n) throw DimensionError("solve_dense rhs length mismatch");

    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
        if (std::abs(a(piv, col)) < 1e-300)
            throw std::runtime_error("solve_dense: singular matrix");
        if (piv != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
            std::swap(x[col], x[piv]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a(r, col) / a(col, col);
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
            x[r] -= f * x[col];
        }
    }
    for (std::size_t r = n; r-- > 0;) {
        double s = x[r];
        for (std::size_t c = r + 1; c < n; ++c) s -= a(r, c) * x[c];
        x[r] = s / a(r, r);
    }
    return x;
}

}  // namespace sciml
