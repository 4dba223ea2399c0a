#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sciml/autodiff.hpp"
#include "sciml/nn.hpp"
#include "sciml/optim.hpp"
#include "sciml/tensor.hpp"

namespace sciml {

enum class PadMode { None, Zero };

/// A bank of P convolution kernels of shape (k1, k2, C) with one bias per
/// output channel. Kernel extents must be odd: index 0..k-1 maps to the
/// centered offsets -Nbar..+Nbar.
struct ConvKernelSet {
    Tensor weights;  // (k1, k2, C, P)
    Tensor biases;   // (P)
    int stride = 1;
    PadMode pad = PadMode::None;
    int pad_width = 0;

    void validate() const {
        weights.require_rank(4);
        if (weights.extent(0) % 2 == 0 || weights.extent(1) % 2 == 0)
            throw DimensionError("kernel extents must be odd for centered stencils");
        if (biases.size() != weights.extent(3))
            throw DimensionError("bias length must equal the kernel count");
        if (stride < 1) throw std::invalid_argument("stride must be >= 1");
        if (pad == PadMode::Zero && pad_width < 0)
            throw std::invalid_argument("pad width must be >= 0");
    }
};

/// Multi-channel discrete convolution (correlation form):
/// out[i,j,p] = sum_{m,n,c} w[m,n,c,p] in[i S+m, j S+n, c] + b[p] over the
/// zero-padded image.
inline Tensor conv2d(const Tensor& image, const ConvKernelSet& k) {
    k.validate();
    const int pad = k.pad == PadMode::Zero ? k.pad_width : 0;
    return detail::conv2d_value(image, k.weights, k.biases, k.stride, pad);
}

/// 1D convolution via an (n x 1) image; zero padding applies along the
/// single data dimension only.
inline std::vector<double> conv1d(const std::vector<double>& u, const std::vector<double>& kernel,
                                  int stride = 1, int zero_pad = 0) {
    const std::size_t n_pad = u.size() + 2 * static_cast<std::size_t>(zero_pad);
    std::vector<double> padded(n_pad, 0.0);
    for (std::size_t i = 0; i < u.size(); ++i) padded[i + zero_pad] = u[i];
    Tensor img = Tensor::from({n_pad, 1, 1}, std::move(padded));
    Tensor w = Tensor::from({kernel.size(), 1, 1, 1}, std::vector<double>(kernel));
    Tensor out = detail::conv2d_value(img, w, Tensor({1}), stride, 0);
    std::vector<double> res(out.extent(0));
    for (std::size_t i = 0; i < res.size(); ++i) res[i] = out(i, 0, 0);
    return res;
}

// ---------------------------------------------------------------------------
// Stencils
// ---------------------------------------------------------------------------

enum class StencilKind { Smooth, Ddx, Ddy, D2dx2, D2dy2, Laplacian };

/// 3x3 stencil kernels. Convention: the column index advances along x1 and
/// the row index advances along decreasing x2 (image rows grow downward), so
/// Ddx is the centered d/dx1 and Ddy the centered d/dx2 difference. The
/// Laplacian kernel (center 4, cross -1) approximates -(u_x1x1 + u_x2x2).
inline Tensor stencil_kernel(StencilKind kind, double h = 1.0) {
    if (kind != StencilKind::Smooth && h <= 0.0)
        throw std::invalid_argument("derivative stencils need h > 0");
    switch (kind) {
        case StencilKind::Smooth:
            return scale(Tensor::matrix({{0.25, 1, 0.25}, {1, 3, 1}, {0.25, 1, 0.25}}), 1.0 / 8.0);
        case StencilKind::Ddx:
            return scale(Tensor::matrix({{0, 0, 0}, {-1, 0, 1}, {0, 0, 0}}), 1.0 / (2.0 * h));
        case StencilKind::Ddy:
            return scale(Tensor::matrix({{0, 1, 0}, {0, 0, 0}, {0, -1, 0}}), 1.0 / (2.0 * h));
        case StencilKind::D2dx2:
            return scale(Tensor::matrix({{0, 0, 0}, {1, -2, 1}, {0, 0, 0}}), 1.0 / (h * h));
        case StencilKind::D2dy2:
            return scale(Tensor::matrix({{0, 1, 0}, {0, -2, 0}, {0, 1, 0}}), 1.0 / (h * h));
        case StencilKind::Laplacian:
            return scale(Tensor::matrix({{0, -1, 0}, {-1, 4, -1}, {0, -1, 0}}), 1.0 / (h * h));
    }
    throw std::logic_error("unhandled stencil kind");
}

/// Gaussian rho(r) sampled on the (2 nbar + 1)^2 stencil and renormalized to
/// unit sum (the continuous kernel integrates to 1).
inline Tensor gaussian_kernel(double sigma, int nbar, double h = 1.0) {
    if (sigma <= 0.0) throw std::invalid_argument("sigma must be positive");
    const std::size_t k = 2 * static_cast<std::size_t>(nbar) + 1;
    Tensor out({k, k});
    double total = 0.0;
    for (int m = -nbar; m <= nbar; ++m)
        for (int n = -nbar; n <= nbar; ++n) {
            const double r2 = (m * m + n * n) * h * h;
            const double v = std::exp(-r2 / (2.0 * sigma * sigma));
            out(m + nbar, n + nbar) = v;
            total += v;
        }
    return scale(out, 1.0 / total);
}

/// Applies a 3x3 stencil to a smooth field sampled with x1 along columns and
/// x2 decreasing along rows, and reports the max deviation from the analytic
/// target on the interior of an n x n grid.
inline double fd_equivalence_check(const std::function<double(double, double)>& field,
                                   const std::function<double(double, double)>& target,
                                   StencilKind kind, double h, std::size_t n = 16) {
    Tensor img({n, n, 1});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            img(i, j, 0) = field(j * h, (n - 1 - i) * h);
    ConvKernelSet ks;
    Tensor st = stencil_kernel(kind, h);
    ks.weights = st.reshape({3, 3, 1, 1});
    ks.biases = Tensor({1});
    Tensor out = conv2d(img, ks);
    double dev = 0.0;
    for (std::size_t i = 0; i < out.extent(0); ++i)
        for (std::size_t j = 0; j < out.extent(1); ++j) {
            const double x1 = (j + 1) * h, x2 = (n - 2 - i) * h;
            dev = std::max(dev, std::abs(out(i, j, 0) - target(x1, x2)));
        }
    return dev;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

enum class PoolKind { Max, Avg };

/// Per-patch max or mean per channel; the patch defaults to stride x stride.
inline Tensor pool(const Tensor& image, PoolKind kind, int stride, int patch = 0) {
    if (patch == 0) patch = stride;
    return detail::pool_value(image, kind == PoolKind::Max, patch, stride);
}

// ---------------------------------------------------------------------------
// Transpose convolution
// ---------------------------------------------------------------------------

/// 1D transpose convolution: each input element contributes its kernel copy
/// shifted by stride*i; overlaps add; trailing elements are cropped so the
/// output has stride * n entries.
inline std::vector<double> transpose_conv1d(const std::vector<double>& u,
                                            const std::vector<double>& kernel, int stride,
                                            bool crop = true) {
    const std::size_t n = u.size(), k = kernel.size();
    std::vector<double> full(stride * (n - 1) + k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < k; ++t) full[stride * i + t] += u[i] * kernel[t];
    if (!crop) return full;
    full.resize(std::min(full.size(), static_cast<std::size_t>(stride) * n));
    return full;
}

inline Tensor transpose_conv2d(const Tensor& input, const Tensor& kernel, int stride,
                               bool crop = true) {
    input.require_rank(2);
    kernel.require_rank(2);
    const std::size_t n1 = input.rows(), n2 = input.cols();
    const std::size_t k1 = kernel.rows(), k2 = kernel.cols();
    Tensor full({stride * (n1 - 1) + k1, stride * (n2 - 1) + k2});
    for (std::size_t i = 0; i < n1; ++i)
        for (std::size_t j = 0; j < n2; ++j)
            for (std::size_t t = 0; t < k1; ++t)
                for (std::size_t r = 0; r < k2; ++r)
                    full(stride * i + t, stride * j + r) += input(i, j) * kernel(t, r);
    if (!crop) return full;
    const std::size_t o1 = std::min(full.rows(), stride * n1), o2 = std::min(full.cols(), stride * n2);
    Tensor out({o1, o2});
    for (std::size_t i = 0; i < o1; ++i)
        for (std::size_t j = 0; j < o2; ++j) out(i, j) = full(i, j);
    return out;
}

/// How many input patches contribute to each (cropped) output cell.
inline std::vector<int> transpose_conv1d_counts(std::size_t n, std::size_t k, int stride) {
    std::vector<double> u(n, 1.0), ker(k, 1.0);
    std::vector<double> c = transpose_conv1d(u, ker, stride);
    return std::vector<int>(c.begin(), c.end());
}

/// Uniformity of the contribution counts away from the boundary: the window
/// [k, len-k) sees the periodic interior pattern only.
inline bool counts_uniform_interior(const std::vector<int>& counts, std::size_t k) {
    if (counts.size() <= 2 * k) throw std::invalid_argument("count vector too short");
    const int ref = counts[k];
    for (std::size_t i = k; i + k < counts.size(); ++i)
        if (counts[i] != ref) return false;
    return true;
}

/// Explicit matrix of the valid (unpadded) strided 1D convolution.
inline Tensor conv1d_matrix(std::size_t n_in, const std::vector<double>& kernel, int stride) {
    const std::size_t k = kernel.size();
    if (n_in < k) throw DimensionError("conv1d_matrix: input shorter than kernel");
    const std::size_t n_out = (n_in - k) / stride + 1;
    Tensor a({n_out, n_in});
    for (std::size_t i = 0; i < n_out; ++i)
        for (std::size_t t = 0; t < k; ++t) a(i, stride * i + t) = kernel[t];
    return a;
}

/// Explicit matrix of the uncropped 1D transpose convolution.
inline Tensor transpose_conv1d_matrix(std::size_t n_in, const std::vector<double>& kernel,
                                      int stride) {
    const std::size_t k = kernel.size();
    const std::size_t n_out = stride * (n_in - 1) + k;
    Tensor a({n_out, n_in});
    for (std::size_t i = 0; i < n_in; ++i)
        for (std::size_t t = 0; t < k; ++t) a(stride * i + t, i) = kernel[t];
    return a;
}

// ---------------------------------------------------------------------------
// CNN classifier
// ---------------------------------------------------------------------------

struct CnnConvBlock {
    std::size_t kernel = 3;
    std::size_t channels = 4;
    int stride = 1;
    int pad = 1;
    bool pool = false;
    PoolKind pool_kind = PoolKind::Max;
    int pool_stride = 2;
};

/// Conv(+activation)(+pool) blocks, flatten, dense layers, softmax output.
struct CnnSpec {
    std::vector<CnnConvBlock> blocks;
    std::vector<std::size_t> dense_hidden;  // widths between flatten and the class layer
    std::size_t classes = 2;
    Activation activation = Activation::Relu;
};

struct CnnParams {
    std::vector<Tensor> conv_w;  // (k, k, C_in, C_out) per block
    std::vector<Tensor> conv_b;  // (C_out) per block
    MlpConfig dense_cfg;
    MlpParams dense;

    std::vector<double> flatten() const {
        std::vector<double> out;
        for (std::size_t l = 0; l < conv_w.size(); ++l) {
            out.insert(out.end(), conv_w[l].raw().begin(), conv_w[l].raw().end());
            out.insert(out.end(), conv_b[l].raw().begin(), conv_b[l].raw().end());
        }
        auto d = dense.flatten();
        out.insert(out.end(), d.begin(), d.end());
        return out;
    }

    void unflatten(const std::vector<double>& flat) {
        std::size_t pos = 0;
        for (std::size_t l = 0; l < conv_w.size(); ++l) {
            std::copy_n(flat.begin() + pos, conv_w[l].size(), conv_w[l].raw().begin());
            pos += conv_w[l].size();
            std::copy_n(flat.begin() + pos, conv_b[l].size(), conv_b[l].raw().begin());
            pos += conv_b[l].size();
        }
        std::vector<double> rest(flat.begin() + pos, flat.end());
        dense.unflatten(rest);
    }
};

/// Trainable weights of the convolution stage; the lecture count omits the
/// biases, so both variants are reported.
inline std::size_t conv_param_count(const CnnParams& p, bool with_bias) {
    std::size_t n = 0;
    for (const Tensor& w : p.conv_w) n += w.size();
    if (with_bias)
        for (const Tensor& b : p.conv_b) n += b.size();
    return n;
}

/// Sets up parameters and checks the shape flow for the given input shape;
/// a mismatch names the offending block.
inline CnnParams cnn_init(const CnnSpec& spec, std::size_t h, std::size_t w, std::size_t c,
                          Rng& rng) {
    CnnParams p;
    std::size_t ch = c, hh = h, ww = w;
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        const CnnConvBlock& blk = spec.blocks[b];
        const double bound = std::sqrt(6.0 / static_cast<double>(blk.kernel * blk.kernel * ch +
                                                                 blk.channels));
        Tensor wgt({blk.kernel, blk.kernel, ch, blk.channels});
        for (std::size_t i = 0; i < wgt.size(); ++i) wgt[i] = rng.uniform(-bound, bound);
        p.conv_w.push_back(std::move(wgt));
        p.conv_b.push_back(Tensor({blk.channels}));
        const long hp = static_cast<long>(hh) + 2 * blk.pad - static_cast<long>(blk.kernel);
        const long wp = static_cast<long>(ww) + 2 * blk.pad - static_cast<long>(blk.kernel);
        if (hp < 0 || wp < 0)
            throw DimensionError("cnn block " + std::to_string(b) +
                                 ": kernel larger than its input");
        hh = static_cast<std::size_t>(hp) / blk.stride + 1;
        ww = static_cast<std::size_t>(wp) / blk.stride + 1;
        ch = blk.channels;
        if (blk.pool) {
            if (static_cast<std::size_t>(blk.pool_stride) > hh ||
                static_cast<std::size_t>(blk.pool_stride) > ww)
                throw DimensionError("cnn block " + std::to_string(b) +
                                     ": pool patch exceeds its input");
            hh = (hh - blk.pool_stride) / blk.pool_stride + 1;
            ww = (ww - blk.pool_stride) / blk.pool_stride + 1;
        }
    }
    p.dense_cfg.widths.push_back(hh * ww * ch);
    for (std::size_t wdt : spec.dense_hidden) p.dense_cfg.widths.push_back(wdt);
    p.dense_cfg.widths.push_back(spec.classes);
    p.dense_cfg.activation = spec.activation;
    p.dense = init_params(p.dense_cfg, rng);
    return p;
}

struct CnnTapeNodes {
    std::vector<NodeId> conv_w, conv_b;
    MlpNodes dense;
    NodeId probs;
};

inline CnnTapeNodes record_cnn(Tape& tape, const CnnSpec& spec, const CnnParams& params,
                               const Tensor& image) {
    CnnTapeNodes nodes;
    NodeId cur = tape.constant(image);
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        const CnnConvBlock& blk = spec.blocks[b];
        NodeId w = tape.input(params.conv_w[b]);
        NodeId bias = tape.input(params.conv_b[b]);
        nodes.conv_w.push_back(w);
        nodes.conv_b.push_back(bias);
        try {
            cur = tape.conv2d(cur, w, bias, blk.stride, blk.pad);
        } catch (const DimensionError& e) {
            throw DimensionError("cnn block " + std::to_string(b) + ": " + e.what());
        }
        cur = tape.act(spec.activation, cur, 0.01);
        if (blk.pool) cur = tape.pool(cur, blk.pool_kind == PoolKind::Max, blk.pool_stride,
                                      blk.pool_stride);
    }
    cur = tape.reshape(cur, {tape.value(cur).size(), 1});
    nodes.dense = make_param_nodes(tape, params.dense);
    MlpConfig head = params.dense_cfg;
    head.output_fn = OutputFn::None;
    MlpTrace trace = record_mlp(tape, head, nodes.dense, cur);
    nodes.probs = record_softmax(tape, trace.out);
    return nodes;
}

/// Class probability vector for one image.
inline Tensor cnn_forward(const CnnSpec& spec, const CnnParams& params, const Tensor& image) {
    Tape tape;
    CnnTapeNodes nodes = record_cnn(tape, spec, params, image);
    return tape.value(nodes.probs).reshape({spec.classes});
}

struct CnnDataset {
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
};

inline double cnn_accuracy(const CnnSpec& spec, const CnnParams& params, const CnnDataset& data) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        Tensor p = cnn_forward(spec, params, data.images[i]);
        std::size_t am = 0;
        for (std::size_t c = 1; c < p.size(); ++c)
            if (p[c] > p[am]) am = c;
        hits += (am == data.labels[i]);
    }
    return static_cast<double>(hits) / static_cast<double>(data.images.size());
}

struct CnnTrainReport {
    std::vector<double> loss_history;
    bool diverged = false;
};

/// Cross-entropy training with per-image graphs, batch-mean gradients and a
/// reshuffle per epoch.
inline CnnTrainReport cnn_train(const CnnSpec& spec, CnnParams& params, const CnnDataset& data,
                                Optimizer& opt, std::size_t epochs, std::size_t n_batches,
                                std::uint64_t seed) {
    if (data.images.empty()) throw std::invalid_argument("cnn_train: empty dataset");
    Rng rng(seed);
    CnnTrainReport report;
    std::vector<double> theta = params.flatten();
    std::vector<std::size_t> idx(data.images.size());
    std::iota(idx.begin(), idx.end(), 0);

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(idx);
        const std::size_t q = idx.size() / n_batches, r = idx.size() % n_batches;
        std::size_t pos = 0;
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t len = q + (b < r ? 1 : 0);
            std::vector<std::size_t> batch(idx.begin() + pos, idx.begin() + pos + len);
            pos += len;
            if (batch.empty()) continue;
            std::sort(batch.begin(), batch.end());
            params.unflatten(theta);
            std::vector<double> grad(theta.size(), 0.0);
            for (std::size_t s : batch) {
                Tape tape;
                CnnTapeNodes nodes = record_cnn(tape, spec, params, data.images[s]);
                Tensor onehot({spec.classes, 1});
                onehot(data.labels[s], 0) = 1.0;
                NodeId ce = tape.scale(
                    tape.sum(tape.mul(tape.constant(onehot), tape.log(nodes.probs))), -1.0);
                tape.set_tip(ce);
                epoch_loss += tape.value(ce)[0];
                GradMap grads = backward(tape, Tensor::from({1, 1}, {1.0}));
                std::size_t off = 0;
                for (std::size_t l = 0; l < nodes.conv_w.size(); ++l) {
                    for (NodeId id : {nodes.conv_w[l], nodes.conv_b[l]}) {
                        const std::size_t sz = tape.value(id).size();
                        if (grads.has(id)) {
                            const Tensor& g = grads.at(id);
                            for (std::size_t i = 0; i < sz; ++i) grad[off + i] += g[i];
                        }
                        off += sz;
                    }
                }
                std::vector<double> dg = collect_param_grads(grads, nodes.dense, tape);
                for (std::size_t i = 0; i < dg.size(); ++i) grad[off + i] += dg[i];
            }
            for (double& g : grad) g /= static_cast<double>(batch.size());
            opt.step(theta, grad);
        }
        epoch_loss /= static_cast<double>(data.images.size());
        report.loss_history.push_back(epoch_loss);
        if (!std::isfinite(epoch_loss)) {
            report.diverged = true;
            break;
        }
    }
    params.unflatten(theta);
    return report;
}

/// Procedural two-class dataset: filled squares vs hollow square outlines on
/// an 8x8 canvas, random position and size.
inline CnnDataset make_shapes_dataset(std::size_t n, Rng& rng) {
    CnnDataset data;
    for (std::size_t s = 0; s < n; ++s) {
        Tensor img({8, 8, 1});
        const std::size_t size = 4 + rng.below(3);           // 4..6
        const std::size_t i0 = rng.below(8 - size + 1);
        const std::size_t j0 = rng.below(8 - size + 1);
        const bool hollow = (s % 2 == 1);
        for (std::size_t i = 0; i < size; ++i)
            for (std::size_t j = 0; j < size; ++j) {
                const bool border = i == 0 || j == 0 || i + 1 == size || j + 1 == size;
                if (!hollow || border) img(i0 + i, j0 + j, 0) = 1.0;
            }
        data.images.push_back(std::move(img));
        data.labels.push_back(hollow ? 1 : 0);
    }
    return data;
}

}  // namespace sciml
