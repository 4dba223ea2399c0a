#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sciml {

/// Thrown when tensor shapes do not conform for an operation.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string shape_to_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ")";
    return os.str();
}

/// Dense row-major tensor of 64-bit floats with an explicit shape.
/// The shape is fixed at construction; reshape returns a new tensor
/// with identical data length.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)),
          data_(count(shape_), fill) {}

    static Tensor from(std::vector<std::size_t> shape, std::vector<double> data) {
        if (count(shape) != data.size())
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_to_string(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    static Tensor vec(std::vector<double> v) {
        std::size_t n = v.size();
        return from({n}, std::move(v));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return from({rows, cols}, std::move(data));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::size_t r = rows.size();
        std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged matrix initializer");
            data.insert(data.end(), row.begin(), row.end());
        }
        return from({r, c}, std::move(data));
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
        return t;
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t d) const { return shape_.at(d); }

    std::size_t rows() const { require_rank(2); return shape_[0]; }
    std::size_t cols() const { require_rank(2); return shape_[1]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    Tensor reshape(std::vector<std::size_t> new_shape) const {
        if (count(new_shape) != data_.size())
            throw DimensionError("reshape " + shape_to_string(shape_) + " -> " +
                                 shape_to_string(new_shape) + " changes element count");
        Tensor t;
        t.shape_ = std::move(new_shape);
        t.data_ = data_;
        return t;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    void require_rank(std::size_t r) const {
        if (shape_.size() != r)
            throw DimensionError("expected rank-" + std::to_string(r) + " tensor, got shape " +
                                 shape_to_string(shape_));
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) {
            if (e == 0) throw DimensionError("zero extent in shape " + shape_to_string(shape));
            n *= e;
        }
        return shape.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Standard matrix product of two rank-2 tensors.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    a.require_rank(2);
    b.require_rank(2);
    if (a.cols() != b.rows())
        throw DimensionError("matmul shape mismatch: " + shape_to_string(a.shape()) + " * " +
                             shape_to_string(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out(i, j) += av * b(p, j);
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    a.require_rank(2);
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

/// out[i,j] = u[i] * v[j]
inline Tensor outer(const Tensor& u, const Tensor& v) {
    u.require_rank(1);
    v.require_rank(1);
    Tensor out({u.size(), v.size()});
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) out(i, j) = u[i] * v[j];
    return out;
}

/// Pointwise application of a unary scalar function.
inline Tensor ewise(const std::function<double(double)>& f, const Tensor& t) {
    Tensor out = t;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i]);
    return out;
}

/// Pointwise application of a binary scalar function to equal-shape tensors.
inline Tensor ewise(const std::function<double(double, double)>& f, const Tensor& a,
                    const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("elementwise shape mismatch: " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i], b[i]);
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("add shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("sub shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("mul shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return out;
}

inline Tensor max0(const Tensor& a) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size())
        throw DimensionError("dot length mismatch: " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

inline double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double max_abs(const Tensor& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
    return m;
}

/// Deterministic seeded random stream (splitmix64 core). Identical seeds
/// produce identical streams on any platform. Normal deviates come from the
/// Marsaglia polar method, fixed as the permanent sampling scheme so that
/// seeded runs are reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform on [0,1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via the polar (Marsaglia) transform of uniform pairs.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double v1, v2, s;
        do {
            v1 = 2.0 * uniform() - 1.0;
            v2 = 2.0 * uniform() - 1.0;
            s = v1 * v1 + v2 * v2;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        cached_ = v2 * f;
        has_cached_ = true;
        return v1 * f;
    }

    /// Uniform integer in [0,n).
    std::size_t below(std::size_t n) {
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::uint64_t state_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace sciml
