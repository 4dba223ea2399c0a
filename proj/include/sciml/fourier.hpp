#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "sciml/tensor.hpp"

namespace sciml {

using Complex = std::complex<double>;

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace detail {

/// Iterative radix-2 Cooley-Tukey, unnormalized, sign -1 for the forward
/// transform and +1 for the (unnormalized) inverse.
inline void fft_radix2(std::vector<Complex>& a, int sign) {
    const std::size_t n = a.size();
    if (!is_power_of_two(n))
        throw std::invalid_argument("fft length must be a power of two, got " +
                                    std::to_string(n));
    // bit reversal
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * M_PI / static_cast<double>(len);
        const Complex wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            Complex w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const Complex even = a[i + j];
                const Complex odd = a[i + j + len / 2] * w;
                a[i + j] = even + odd;
                a[i + j + len / 2] = even - odd;
                w *= wlen;
            }
        }
    }
}

}  // namespace detail

/// Unnormalized forward DFT of a power-of-two-length sequence,
/// X[k] = sum_n x[n] exp(-2 pi i k n / N), via radix-2 Cooley-Tukey.
inline std::vector<Complex> fft(std::vector<Complex> x) {
    detail::fft_radix2(x, -1);
    return x;
}

/// Inverse of fft (includes the 1/N factor).
inline std::vector<Complex> ifft(std::vector<Complex> x) {
    detail::fft_radix2(x, +1);
    const double inv = 1.0 / static_cast<double>(x.size());
    for (Complex& v : x) v *= inv;
    return x;
}

/// A real function on an N1 x N2 uniform periodic grid over
/// [0,L1) x [0,L2), h_i = L_i / N_i with the endpoint excluded. Extents must
/// be powers of two (FFT constraint). One-dimensional data is the N2 = 1
/// special case.
struct GridFunction2D {
    Tensor values;  // (N1, N2)
    double l1 = 1.0, l2 = 1.0;

    GridFunction2D() = default;
    GridFunction2D(Tensor v, double len1, double len2) : values(std::move(v)), l1(len1), l2(len2) {
        validate();
    }

    std::size_t n1() const { return values.extent(0); }
    std::size_t n2() const { return values.extent(1); }
    double h1() const { return l1 / static_cast<double>(n1()); }
    double h2() const { return l2 / static_cast<double>(n2()); }

    void validate() const {
        values.require_rank(2);
        if (!is_power_of_two(n1()) || !is_power_of_two(n2()))
            throw std::invalid_argument("grid extents must be powers of two");
        if (l1 <= 0.0 || l2 <= 0.0) throw std::invalid_argument("grid lengths must be positive");
    }
};

/// Complex Fourier coefficients on the full N1 x N2 mode lattice; the mode
/// (m, n) lives at the wrapped indices (m mod N1, n mod N2).
struct Spectrum2D {
    std::vector<Complex> modes;  // row-major N1 x N2
    std::size_t n1 = 0, n2 = 0;

    Complex& at(long m, long n) { return modes[wrap(m, n1) * n2 + wrap(n, n2)]; }
    Complex at(long m, long n) const { return modes[wrap(m, n1) * n2 + wrap(n, n2)]; }

    static std::size_t wrap(long m, std::size_t n) {
        long r = m % static_cast<long>(n);
        if (r < 0) r += static_cast<long>(n);
        return static_cast<std::size_t>(r);
    }
};

namespace detail {

inline void fft2_inplace(std::vector<Complex>& a, std::size_t n1, std::size_t n2, int sign) {
    std::vector<Complex> row(n2), col(n1);
    for (std::size_t i = 0; i < n1; ++i) {
        for (std::size_t j = 0; j < n2; ++j) row[j] = a[i * n2 + j];
        fft_radix2(row, sign);
        for (std::size_t j = 0; j < n2; ++j) a[i * n2 + j] = row[j];
    }
    for (std::size_t j = 0; j < n2; ++j) {
        for (std::size_t i = 0; i < n1; ++i) col[i] = a[i * n2 + j];
        fft_radix2(col, sign);
        for (std::size_t i = 0; i < n1; ++i) a[i * n2 + j] = col[i];
    }
}

}  // namespace detail

/// u_hat[r,s] = (h1 h2 / L1 L2) sum u[m,n] exp(-2 pi i (r x1m/L1 + s x2n/L2)),
/// i.e. the unnormalized 2D FFT divided by N1 N2.
inline Spectrum2D dft2(const GridFunction2D& g) {
    g.validate();
    Spectrum2D s;
    s.n1 = g.n1();
    s.n2 = g.n2();
    s.modes.assign(s.n1 * s.n2, Complex(0, 0));
    for (std::size_t i = 0; i < s.n1; ++i)
        for (std::size_t j = 0; j < s.n2; ++j) s.modes[i * s.n2 + j] = g.values(i, j);
    detail::fft2_inplace(s.modes, s.n1, s.n2, -1);
    const double norm = 1.0 / static_cast<double>(s.n1 * s.n2);
    for (Complex& v : s.modes) v *= norm;
    return s;
}

/// u[m,n] = sum_{r,s} u_hat[r,s] exp(+2 pi i (...)); returns the real part
/// (the coefficients of a real field are conjugate-symmetric).
inline Tensor idft2(const Spectrum2D& s) {
    std::vector<Complex> a = s.modes;
    detail::fft2_inplace(a, s.n1, s.n2, +1);
    Tensor out({s.n1, s.n2});
    for (std::size_t i = 0; i < s.n1; ++i)
        for (std::size_t j = 0; j < s.n2; ++j) out(i, j) = a[i * s.n2 + j].real();
    return out;
}

// ---------------------------------------------------------------------------
// Spectral convolution kernels
// ---------------------------------------------------------------------------

/// H x H convolution kernels parameterized directly by their Fourier
/// coefficients on the truncated mode set |m| <= kmax1, |n| <= kmax2, with
/// kappa_hat[-m,-n] = conj(kappa_hat[m,n]) enforced so outputs stay real.
class SpectralKernel {
public:
    SpectralKernel() = default;

    SpectralKernel(std::size_t channels, int kmax1, int kmax2)
        : h_(channels), kmax1_(kmax1), kmax2_(kmax2),
          data_(channels * channels * span1() * span2(), Complex(0, 0)) {}

    std::size_t channels() const { return h_; }
    int kmax1() const { return kmax1_; }
    int kmax2() const { return kmax2_; }

    Complex at(std::size_t i, std::size_t j, long m, long n) const {
        return data_[index(i, j, m, n)];
    }

    /// Sets the pair (m,n) and (-m,-n) together, keeping conjugate symmetry.
    void set(std::size_t i, std::size_t j, long m, long n, Complex v) {
        if (m == 0 && n == 0 && std::abs(v.imag()) > 0.0)
            throw std::invalid_argument("mode (0,0) must be real");
        data_[index(i, j, m, n)] = v;
        data_[index(i, j, -m, -n)] = std::conj(v);
    }

    void check_symmetry() const {
        for (std::size_t i = 0; i < h_; ++i)
            for (std::size_t j = 0; j < h_; ++j)
                for (long m = -kmax1_; m <= kmax1_; ++m)
                    for (long n = -kmax2_; n <= kmax2_; ++n) {
                        const Complex a = at(i, j, m, n);
                        const Complex b = std::conj(at(i, j, -m, -n));
                        if (std::abs(a - b) > 1e-12)
                            throw std::invalid_argument(
                                "spectral kernel violates conjugate symmetry");
                    }
    }

    /// Identity kernel: kappa_hat_ij[m,n] = delta_ij / (L1 L2), which makes
    /// the convolution the identity on band-limited fields.
    static SpectralKernel identity(std::size_t channels, int kmax1, int kmax2, double l1,
                                   double l2) {
        SpectralKernel k(channels, kmax1, kmax2);
        const double v = 1.0 / (l1 * l2);
        for (std::size_t i = 0; i < channels; ++i)
            for (long m = -kmax1; m <= kmax1; ++m)
                for (long n = -kmax2; n <= kmax2; ++n) k.set(i, i, m, n, Complex(v, 0));
        return k;
    }

    /// Free real parameters: for each (i,j), Re/Im of the half-space modes
    /// (n > 0, or n == 0 and m > 0) plus the real part of (0,0).
    std::size_t free_param_count() const {
        const std::size_t pair_modes = (span1() * span2() - 1) / 2;
        return h_ * h_ * (2 * pair_modes + 1);
    }

    void pack(std::vector<double>& out) const {
        for (std::size_t i = 0; i < h_; ++i)
            for (std::size_t j = 0; j < h_; ++j) {
                out.push_back(at(i, j, 0, 0).real());
                for_half_modes([&](long m, long n) {
                    const Complex v = at(i, j, m, n);
                    out.push_back(v.real());
                    out.push_back(v.imag());
                });
            }
    }

    void unpack(const double*& it) {
        for (std::size_t i = 0; i < h_; ++i)
            for (std::size_t j = 0; j < h_; ++j) {
                set(i, j, 0, 0, Complex(*it++, 0));
                for_half_modes([&](long m, long n) {
                    const double re = *it++;
                    const double im = *it++;
                    set(i, j, m, n, Complex(re, im));
                });
            }
    }

    template <typename Fn>
    void for_half_modes(Fn&& fn) const {
        for (long n = -kmax2_; n <= kmax2_; ++n)
            for (long m = -kmax1_; m <= kmax1_; ++m) {
                if (n > 0 || (n == 0 && m > 0)) fn(m, n);
            }
    }

private:
    std::size_t span1() const { return 2 * static_cast<std::size_t>(kmax1_) + 1; }
    std::size_t span2() const { return 2 * static_cast<std::size_t>(kmax2_) + 1; }

    std::size_t index(std::size_t i, std::size_t j, long m, long n) const {
        if (std::abs(m) > kmax1_ || std::abs(n) > kmax2_)
            throw std::out_of_range("spectral kernel mode out of range");
        const std::size_t mi = static_cast<std::size_t>(m + kmax1_);
        const std::size_t ni = static_cast<std::size_t>(n + kmax2_);
        return ((i * h_ + j) * span1() + mi) * span2() + ni;
    }

    std::size_t h_ = 0;
    int kmax1_ = 0, kmax2_ = 0;
    std::vector<Complex> data_;
};

/// Multi-channel field on a shared grid.
struct ChannelGrid {
    std::vector<Tensor> channels;  // each (N1, N2)
    double l1 = 1.0, l2 = 1.0;

    std::size_t n1() const { return channels.at(0).extent(0); }
    std::size_t n2() const { return channels.at(0).extent(1); }
};

/// v_i = L1 L2 sum_{|m|<=k1,|n|<=k2} u_hat_j[m,n] kappa_hat_ij[-m,-n] e^{+...},
/// evaluated with the FFT pair. `transpose_channels` applies the adjoint
/// channel mixing with the +(m,n) kernel lookup instead, which is the exact
/// gradient map with respect to the convolution input.
inline ChannelGrid spectral_conv(const ChannelGrid& u, const SpectralKernel& kernel,
                                 bool transpose_channels = false) {
    const std::size_t h = kernel.channels();
    if (u.channels.size() != h)
        throw DimensionError("spectral_conv channel count mismatch");
    const std::size_t n1 = u.n1(), n2 = u.n2();
    const double area = u.l1 * u.l2;
    const long k1 = std::min<long>(kernel.kmax1(), static_cast<long>(n1) / 2 - (n1 > 1 ? 1 : 0));
    const long k2 = std::min<long>(kernel.kmax2(), static_cast<long>(n2) / 2 - (n2 > 1 ? 1 : 0));

    std::vector<Spectrum2D> uhat(h);
    for (std::size_t j = 0; j < h; ++j)
        uhat[j] = dft2(GridFunction2D(u.channels[j], u.l1, u.l2));

    ChannelGrid out;
    out.l1 = u.l1;
    out.l2 = u.l2;
    for (std::size_t i = 0; i < h; ++i) {
        Spectrum2D w;
        w.n1 = n1;
        w.n2 = n2;
        w.modes.assign(n1 * n2, Complex(0, 0));
        for (long m = -k1; m <= k1; ++m)
            for (long n = -k2; n <= k2; ++n) {
                Complex acc(0, 0);
                for (std::size_t j = 0; j < h; ++j) {
                    const Complex kc = transpose_channels ? kernel.at(j, i, m, n)
                                                          : kernel.at(i, j, -m, -n);
                    acc += uhat[j].at(m, n) * kc;
                }
                w.at(m, n) = area * acc;
            }
        out.channels.push_back(idft2(w));
    }
    return out;
}

/// Discrete L2 norm of the grid function: sqrt(h1 h2 sum u^2). Equals the
/// spectral norm sqrt(L1 L2 sum |u_hat|^2) exactly (Parseval).
inline double grid_l2_norm(const GridFunction2D& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.values.size(); ++i) s += g.values[i] * g.values[i];
    return std::sqrt(g.h1() * g.h2() * s);
}

inline double spectral_l2_norm(const Spectrum2D& s, double l1, double l2) {
    double acc = 0.0;
    for (const Complex& v : s.modes) acc += std::norm(v);
    return std::sqrt(l1 * l2 * acc);
}

}  // namespace sciml
