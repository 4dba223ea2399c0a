#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "sciml/autodiff.hpp"
#include "sciml/fourier.hpp"
#include "sciml/nn.hpp"
#include "sciml/optim.hpp"

namespace sciml {

// ---------------------------------------------------------------------------
// DeepONet
// ---------------------------------------------------------------------------

/// Fixed sensor locations where every input function is sampled; they cannot
/// change over a model's lifetime.
struct SensorSet {
    std::vector<double> points;

    static SensorSet uniform(std::size_t m, double lo = 0.0, double hi = 1.0) {
        SensorSet s;
        for (std::size_t i = 0; i < m; ++i)
            s.points.push_back(lo + (hi - lo) * static_cast<double>(i) /
                                        static_cast<double>(m - 1));
        return s;
    }

    void validate() const {
        for (std::size_t i = 0; i < points.size(); ++i)
            for (std::size_t j = i + 1; j < points.size(); ++j)
                if (points[i] == points[j])
                    throw std::invalid_argument("sensor points must be distinct");
    }
};

/// Branch net R^M -> R^p on sampled input functions, trunk net R^D -> R^p on
/// query points, combined by a dot product.
struct DeepOnet {
    MlpConfig branch_cfg, trunk_cfg;
    MlpParams branch, trunk;

    std::size_t sensors() const { return branch_cfg.widths.front(); }
    std::size_t query_dim() const { return trunk_cfg.widths.front(); }
    std::size_t latent() const { return branch_cfg.widths.back(); }

    void validate() const {
        branch_cfg.validate();
        trunk_cfg.validate();
        if (branch_cfg.widths.back() != trunk_cfg.widths.back())
            throw DimensionError("branch and trunk must share the latent dimension p");
    }

    static DeepOnet make(std::size_t sensors, std::size_t query_dim, std::size_t latent,
                         std::vector<std::size_t> branch_hidden,
                         std::vector<std::size_t> trunk_hidden, Activation act, Rng& rng) {
        DeepOnet m;
        m.branch_cfg.widths.push_back(sensors);
        for (std::size_t w : branch_hidden) m.branch_cfg.widths.push_back(w);
        m.branch_cfg.widths.push_back(latent);
        m.branch_cfg.activation = act;
        m.trunk_cfg.widths.push_back(query_dim);
        for (std::size_t w : trunk_hidden) m.trunk_cfg.widths.push_back(w);
        m.trunk_cfg.widths.push_back(latent);
        m.trunk_cfg.activation = act;
        m.branch = init_params(m.branch_cfg, rng);
        m.trunk = init_params(m.trunk_cfg, rng);
        return m;
    }

    std::vector<double> flatten() const {
        std::vector<double> out = branch.flatten();
        auto t = trunk.flatten();
        out.insert(out.end(), t.begin(), t.end());
        return out;
    }

    void unflatten(const std::vector<double>& flat) {
        const std::size_t nb = branch.flatten().size();
        branch.unflatten({flat.begin(), flat.begin() + nb});
        trunk.unflatten({flat.begin() + nb, flat.end()});
    }
};

/// u(x) ~ sum_k beta_k(a) tau_k(x).
inline double deeponet_forward(const DeepOnet& model, const Tensor& a_sample, const Tensor& x) {
    model.validate();
    if (a_sample.size() != model.sensors())
        throw DimensionError("input function sampled at " + std::to_string(a_sample.size()) +
                             " points, model expects " + std::to_string(model.sensors()));
    Tensor beta = mlp_forward(model.branch_cfg, model.branch, a_sample.reshape({a_sample.size()}));
    Tensor tau = mlp_forward(model.trunk_cfg, model.trunk, x.reshape({x.size()}));
    return dot(beta, tau);
}

/// Triples (a_vec, x, u(x)) stored column-wise.
struct DeepOnetDataset {
    Tensor A;  // M x N
    Tensor X;  // D x N
    Tensor U;  // 1 x N

    std::size_t count() const { return A.cols(); }
};

/// Random truncated Fourier series on [0,1] with 1/k-damped coefficients.
struct FourierFunction {
    double c0 = 0.0;
    std::vector<double> cosc, sinc;

    double operator()(double t) const {
        double s = c0;
        for (std::size_t k = 0; k < cosc.size(); ++k) {
            const double w = 2.0 * M_PI * static_cast<double>(k + 1);
            s += cosc[k] * std::cos(w * t) + sinc[k] * std::sin(w * t);
        }
        return s;
    }
};

inline FourierFunction random_fourier_function(Rng& rng, std::size_t modes = 4) {
    FourierFunction f;
    f.c0 = rng.uniform(-1, 1);
    for (std::size_t k = 1; k <= modes; ++k) {
        f.cosc.push_back(rng.uniform(-1, 1) / static_cast<double>(k));
        f.sinc.push_back(rng.uniform(-1, 1) / static_cast<double>(k));
    }
    return f;
}

/// int_0^x a(t) dt by the trapezoid rule on a fixed fine grid.
inline double antiderivative_oracle(const std::function<double(double)>& a, double x,
                                    std::size_t n = 1024) {
    if (x == 0.0) return 0.0;
    const double h = x / static_cast<double>(n);
    double s = 0.5 * (a(0.0) + a(x));
    for (std::size_t i = 1; i < n; ++i) s += a(i * h);
    return s * h;
}

/// Samples N1 functions from `sampler` at the sensor set, evaluates the
/// operator oracle at N2 output points per function (drawn fresh for each
/// function) and assembles the N1 x N2 training triples.
inline DeepOnetDataset build_deeponet_dataset(
    const std::function<std::function<double(double)>(Rng&)>& sampler,
    const std::function<double(const std::function<double(double)>&, double)>& oracle,
    const SensorSet& sensors, std::size_t n_functions, std::size_t n_points, Rng& rng) {
    sensors.validate();
    const std::size_t m = sensors.points.size();
    DeepOnetDataset d;
    d.A = Tensor({m, n_functions * n_points});
    d.X = Tensor({1, n_functions * n_points});
    d.U = Tensor({1, n_functions * n_points});
    for (std::size_t f = 0; f < n_functions; ++f) {
        const auto fn = sampler(rng);
        std::vector<double> avals(m);
        for (std::size_t s = 0; s < m; ++s) avals[s] = fn(sensors.points[s]);
        for (std::size_t k = 0; k < n_points; ++k) {
            const std::size_t col = f * n_points + k;
            const double x = rng.uniform();
            for (std::size_t s = 0; s < m; ++s) d.A(s, col) = avals[s];
            d.X(0, col) = x;
            d.U(0, col) = oracle(fn, x);
        }
    }
    return d;
}

namespace detail {

struct DeepOnetTape {
    Tape tape;
    MlpNodes branch_nodes, trunk_nodes;
    NodeId x_in, pred;
};

inline DeepOnetTape record_deeponet(const DeepOnet& model, const Tensor& A, const Tensor& X) {
    DeepOnetTape r;
    r.branch_nodes = make_param_nodes(r.tape, model.branch);
    r.trunk_nodes = make_param_nodes(r.tape, model.trunk);
    NodeId a_in = r.tape.constant(A);
    r.x_in = r.tape.input(X);
    MlpTrace btrace = record_mlp(r.tape, model.branch_cfg, r.branch_nodes, a_in);
    MlpTrace ttrace = record_mlp(r.tape, model.trunk_cfg, r.trunk_nodes, r.x_in);
    NodeId prod = r.tape.mul(btrace.out, ttrace.out);  // p x B
    NodeId ones = r.tape.constant(Tensor({1, model.latent()}, 1.0));
    r.pred = r.tape.matmul(ones, prod);  // 1 x B column-wise dot products
    return r;
}

}  // namespace detail

struct DeepOnetTrainReport {
    std::vector<double> loss_history;
    bool diverged = false;
};

/// Full-batch Adam/GD on the mean squared triple loss.
inline DeepOnetTrainReport deeponet_train(DeepOnet& model, const DeepOnetDataset& data,
                                          Optimizer& opt, std::size_t epochs,
                                          std::uint64_t seed, std::size_t n_batches = 1) {
    if (data.count() == 0) throw std::invalid_argument("deeponet_train: empty dataset");
    Rng rng(seed);
    DeepOnetTrainReport report;
    std::vector<double> theta = model.flatten();
    std::vector<std::size_t> idx(data.count());
    std::iota(idx.begin(), idx.end(), 0);

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(idx);
        const std::size_t q = idx.size() / n_batches, r = idx.size() % n_batches;
        std::size_t pos = 0;
        double last_loss = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t len = q + (b < r ? 1 : 0);
            std::vector<std::size_t> batch(idx.begin() + pos, idx.begin() + pos + len);
            pos += len;
            if (batch.empty()) continue;
            std::sort(batch.begin(), batch.end());
            Tensor A({data.A.rows(), batch.size()}), X({data.X.rows(), batch.size()}),
                U({1, batch.size()});
            for (std::size_t c = 0; c < batch.size(); ++c) {
                for (std::size_t i = 0; i < A.rows(); ++i) A(i, c) = data.A(i, batch[c]);
                for (std::size_t i = 0; i < X.rows(); ++i) X(i, c) = data.X(i, batch[c]);
                U(0, c) = data.U(0, batch[c]);
            }
            model.unflatten(theta);
            detail::DeepOnetTape t = detail::record_deeponet(model, A, X);
            NodeId err = t.tape.sub(t.tape.constant(U), t.pred);
            NodeId lossid = t.tape.scale(t.tape.sum(t.tape.square(err)),
                                         1.0 / static_cast<double>(batch.size()));
            t.tape.set_tip(lossid);
            last_loss = t.tape.value(lossid)[0];
            GradMap grads = backward(t.tape, Tensor::from({1, 1}, {1.0}));
            std::vector<double> grad = collect_param_grads(grads, t.branch_nodes, t.tape);
            std::vector<double> tgrad = collect_param_grads(grads, t.trunk_nodes, t.tape);
            grad.insert(grad.end(), tgrad.begin(), tgrad.end());
            opt.step(theta, grad);
        }
        report.loss_history.push_back(last_loss);
        if (!std::isfinite(last_loss)) {
            report.diverged = true;
            break;
        }
    }
    model.unflatten(theta);
    return report;
}

/// Held-out relative L2 error over a set of (function, query grid) pairs.
inline double deeponet_relative_l2(const DeepOnet& model,
                                   const std::vector<FourierFunction>& functions,
                                   const SensorSet& sensors, std::size_t n_check = 64) {
    double num = 0.0, den = 0.0;
    for (const auto& fn : functions) {
        Tensor a({sensors.points.size()});
        for (std::size_t s = 0; s < sensors.points.size(); ++s) a[s] = fn(sensors.points[s]);
        for (std::size_t k = 0; k < n_check; ++k) {
            const double x = static_cast<double>(k) / static_cast<double>(n_check - 1);
            const double truth = antiderivative_oracle(fn, x);
            const double pred = deeponet_forward(model, a, Tensor::vec({x}));
            num += (pred - truth) * (pred - truth);
            den += truth * truth;
        }
    }
    return std::sqrt(num / den);
}

struct PiDeepOnetLoss {
    double total = 0.0, data = 0.0, physics = 0.0;
};

/// Pi = Pi_d + lambda Pi_p for the antiderivative operator: the physics term
/// penalizes d/dx N(x, a) - a(x) over its own function set and points, which
/// may differ from the data sets.
inline PiDeepOnetLoss pideeponet_loss(const DeepOnet& model, const DeepOnetDataset& data,
                                      const std::vector<FourierFunction>& residual_functions,
                                      const SensorSet& sensors,
                                      const std::vector<double>& residual_points,
                                      double lambda) {
    PiDeepOnetLoss result;
    // data term
    for (std::size_t c = 0; c < data.count(); ++c) {
        Tensor a({data.A.rows()});
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = data.A(i, c);
        Tensor x({data.X.rows()});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = data.X(i, c);
        const double e = deeponet_forward(model, a, x) - data.U(0, c);
        result.data += e * e;
    }
    if (data.count() > 0) result.data /= static_cast<double>(data.count());

    // physics term via the derivative of the trunk input
    if (!residual_functions.empty() && !residual_points.empty()) {
        for (const auto& fn : residual_functions) {
            Tensor a({sensors.points.size()});
            for (std::size_t s = 0; s < sensors.points.size(); ++s)
                a[s] = fn(sensors.points[s]);
            Tensor arep({a.size(), residual_points.size()});
            Tensor xrow({1, residual_points.size()});
            for (std::size_t k = 0; k < residual_points.size(); ++k) {
                for (std::size_t i = 0; i < a.size(); ++i) arep(i, k) = a[i];
                xrow(0, k) = residual_points[k];
            }
            detail::DeepOnetTape t = detail::record_deeponet(model, arep, xrow);
            NodeId dudx = t.tape.adjoint_expression(t.tape.sum(t.pred), t.x_in);
            for (std::size_t k = 0; k < residual_points.size(); ++k) {
                const double r = t.tape.value(dudx)(0, k) - fn(residual_points[k]);
                result.physics += r * r;
            }
        }
        result.physics /= static_cast<double>(residual_functions.size() * residual_points.size());
    }
    result.total = result.data + lambda * result.physics;
    return result;
}

// ---------------------------------------------------------------------------
// Fourier Neural Operator
// ---------------------------------------------------------------------------

struct FnoLayer {
    Tensor w;  // H x H pointwise mixing
    Tensor b;  // H
    SpectralKernel kernel;
};

/// Lifting (pointwise affine R -> R^H), middle layers v = W u + b + K(u)
/// followed by the pointwise activation, and a pointwise projection back to
/// a scalar field.
struct FnoModel {
    std::size_t width = 8;
    Activation act = Activation::Tanh;
    double l1 = 1.0, l2 = 1.0;
    Tensor lift_w;  // H x 1
    Tensor lift_b;  // H
    std::vector<FnoLayer> layers;
    Tensor proj_w;  // 1 x H
    double proj_b = 0.0;

    static FnoModel make(std::size_t width, std::size_t n_middle, int kmax1, int kmax2,
                         Activation act, Rng& rng, double l1 = 1.0, double l2 = 1.0,
                         double spectral_scale = 0.1) {
        FnoModel m;
        m.width = width;
        m.act = act;
        m.l1 = l1;
        m.l2 = l2;
        const double bound = std::sqrt(6.0 / static_cast<double>(width + 1));
        m.lift_w = Tensor({width, 1});
        for (std::size_t i = 0; i < width; ++i) m.lift_w[i] = rng.uniform(-bound, bound);
        m.lift_b = Tensor({width});
        for (std::size_t l = 0; l < n_middle; ++l) {
            FnoLayer layer;
            layer.w = Tensor({width, width});
            const double wb = std::sqrt(6.0 / static_cast<double>(2 * width));
            for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w[i] = rng.uniform(-wb, wb);
            layer.b = Tensor({width});
            layer.kernel = SpectralKernel(width, kmax1, kmax2);
            for (std::size_t i = 0; i < width; ++i)
                for (std::size_t j = 0; j < width; ++j) {
                    layer.kernel.set(i, j, 0, 0,
                                     Complex(spectral_scale * rng.uniform(-1, 1), 0));
                    layer.kernel.for_half_modes([&](long mm, long nn) {
                        layer.kernel.set(i, j, mm, nn,
                                         Complex(spectral_scale * rng.uniform(-1, 1),
                                                 spectral_scale * rng.uniform(-1, 1)));
                    });
                }
            m.layers.push_back(std::move(layer));
        }
        m.proj_w = Tensor({1, width});
        for (std::size_t i = 0; i < width; ++i) m.proj_w[i] = rng.uniform(-bound, bound);
        return m;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.insert(out.end(), lift_w.raw().begin(), lift_w.raw().end());
        out.insert(out.end(), lift_b.raw().begin(), lift_b.raw().end());
        for (const FnoLayer& l : layers) {
            out.insert(out.end(), l.w.raw().begin(), l.w.raw().end());
            out.insert(out.end(), l.b.raw().begin(), l.b.raw().end());
            l.kernel.pack(out);
        }
        out.insert(out.end(), proj_w.raw().begin(), proj_w.raw().end());
        out.push_back(proj_b);
        return out;
    }

    void unflatten(const std::vector<double>& flat) {
        const double* it = flat.data();
        auto take = [&](Tensor& t) {
            std::copy_n(it, t.size(), t.raw().begin());
            it += t.size();
        };
        take(lift_w);
        take(lift_b);
        for (FnoLayer& l : layers) {
            take(l.w);
            take(l.b);
            l.kernel.unpack(it);
        }
        take(proj_w);
        proj_b = *it++;
        if (static_cast<std::size_t>(it - flat.data()) != flat.size())
            throw DimensionError("fno parameter vector length mismatch");
    }
};

struct FnoCache {
    Tensor input;                 // N1 x N2
    std::vector<ChannelGrid> u;   // activations: u^(1) .. u^(last)
    std::vector<ChannelGrid> v;   // pre-activations: v^(1) and one per middle layer
    Tensor out;
};

namespace detail {

inline Tensor act_grid(Activation act, const Tensor& t, int order) {
    return ewise([&](double x) { return act_eval(act, 0.01, order, x); }, t);
}

}  // namespace detail

inline Tensor fno_forward(const FnoModel& model, const GridFunction2D& a,
                          FnoCache* cache = nullptr) {
    a.validate();
    if (a.l1 != model.l1 || a.l2 != model.l2)
        throw DimensionError("grid lengths do not match the model domain");
    const std::size_t h = model.width;
    FnoCache local;
    FnoCache& c = cache ? *cache : local;
    c.input = a.values;
    c.u.clear();
    c.v.clear();

    ChannelGrid v1;
    v1.l1 = a.l1;
    v1.l2 = a.l2;
    for (std::size_t i = 0; i < h; ++i) {
        Tensor vi = scale(a.values, model.lift_w(i, 0));
        for (std::size_t p = 0; p < vi.size(); ++p) vi[p] += model.lift_b[i];
        v1.channels.push_back(std::move(vi));
    }
    c.v.push_back(v1);

    ChannelGrid u = v1;
    for (std::size_t i = 0; i < h; ++i)
        u.channels[i] = detail::act_grid(model.act, v1.channels[i], 0);
    c.u.push_back(u);

    for (const FnoLayer& layer : model.layers) {
        ChannelGrid conv = spectral_conv(u, layer.kernel);
        ChannelGrid vnext;
        vnext.l1 = u.l1;
        vnext.l2 = u.l2;
        for (std::size_t i = 0; i < h; ++i) {
            Tensor vi = conv.channels[i];
            for (std::size_t j = 0; j < h; ++j) {
                const double wij = layer.w(i, j);
                if (wij == 0.0) continue;
                const Tensor& uj = u.channels[j];
                for (std::size_t p = 0; p < vi.size(); ++p) vi[p] += wij * uj[p];
            }
            for (std::size_t p = 0; p < vi.size(); ++p) vi[p] += layer.b[i];
            vnext.channels.push_back(std::move(vi));
        }
        c.v.push_back(vnext);
        ChannelGrid unext = vnext;
        for (std::size_t i = 0; i < h; ++i)
            unext.channels[i] = detail::act_grid(model.act, vnext.channels[i], 0);
        c.u.push_back(unext);
        u = c.u.back();
    }

    Tensor out({a.n1(), a.n2()});
    for (std::size_t p = 0; p < out.size(); ++p) {
        double s = model.proj_b;
        for (std::size_t i = 0; i < h; ++i) s += model.proj_w(0, i) * u.channels[i][p];
        out[p] = s;
    }
    c.out = out;
    return out;
}

/// Hand-rolled reverse pass through the FNO pipeline; the spectral-kernel
/// gradient works on the truncated mode set only. Returns gradients laid out
/// like FnoModel::flatten().
inline std::vector<double> fno_backward(const FnoModel& model, const FnoCache& cache,
                                        const Tensor& dout) {
    const std::size_t h = model.width;
    const std::size_t n1 = cache.input.extent(0), n2 = cache.input.extent(1);
    const double area = model.l1 * model.l2;
    const double cell_count = static_cast<double>(n1 * n2);

    Tensor dlift_w = Tensor::zeros_like(model.lift_w);
    Tensor dlift_b = Tensor::zeros_like(model.lift_b);
    std::vector<Tensor> dws, dbs;
    std::vector<std::vector<double>> dkernels;
    Tensor dproj_w = Tensor::zeros_like(model.proj_w);
    double dproj_b = 0.0;

    // projection
    ChannelGrid du;
    du.l1 = model.l1;
    du.l2 = model.l2;
    const ChannelGrid& ulast = cache.u.back();
    for (std::size_t i = 0; i < h; ++i) {
        Tensor d = scale(dout, model.proj_w(0, i));
        du.channels.push_back(std::move(d));
        dproj_w(0, i) = dot(dout, ulast.channels[i]);
    }
    dproj_b = sum(dout);

    // middle layers, reversed
    for (std::size_t l = model.layers.size(); l-- > 0;) {
        const FnoLayer& layer = model.layers[l];
        const ChannelGrid& uin = cache.u[l];
        const ChannelGrid& vout = cache.v[l + 1];

        ChannelGrid dv;
        dv.l1 = du.l1;
        dv.l2 = du.l2;
        for (std::size_t i = 0; i < h; ++i)
            dv.channels.push_back(
                mul(du.channels[i], detail::act_grid(model.act, vout.channels[i], 1)));

        Tensor dw({h, h});
        Tensor db({h});
        for (std::size_t i = 0; i < h; ++i) {
            db[i] = sum(dv.channels[i]);
            for (std::size_t j = 0; j < h; ++j) dw(i, j) = dot(dv.channels[i], uin.channels[j]);
        }

        // d/d u_in: pointwise W^T dv plus the adjoint spectral convolution
        ChannelGrid dunext = spectral_conv(dv, layer.kernel, /*transpose_channels=*/true);
        for (std::size_t j = 0; j < h; ++j) {
            Tensor& dj = dunext.channels[j];
            for (std::size_t i = 0; i < h; ++i) {
                const double wij = layer.w(i, j);
                if (wij == 0.0) continue;
                const Tensor& dvi = dv.channels[i];
                for (std::size_t p = 0; p < dj.size(); ++p) dj[p] += wij * dvi[p];
            }
        }

        // kernel gradient: c_ij[m] = L1 L2 N1 N2 u_hat_j[-m] conj(g_hat_i[-m])
        std::vector<Spectrum2D> uhat(h), ghat(h);
        for (std::size_t ch = 0; ch < h; ++ch) {
            uhat[ch] = dft2(GridFunction2D(uin.channels[ch], model.l1, model.l2));
            ghat[ch] = dft2(GridFunction2D(dv.channels[ch], model.l1, model.l2));
        }
        const long kc1 = std::min<long>(layer.kernel.kmax1(),
                                        static_cast<long>(n1) / 2 - (n1 > 1 ? 1 : 0));
        const long kc2 = std::min<long>(layer.kernel.kmax2(),
                                        static_cast<long>(n2) / 2 - (n2 > 1 ? 1 : 0));
        auto cval = [&](std::size_t i, std::size_t j, long m, long n) -> Complex {
            if (std::abs(m) > kc1 || std::abs(n) > kc2) return Complex(0, 0);
            return area * cell_count * uhat[j].at(-m, -n) * std::conj(ghat[i].at(-m, -n));
        };
        std::vector<double> dk;
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < h; ++j) {
                dk.push_back(cval(i, j, 0, 0).real());
                layer.kernel.for_half_modes([&](long m, long n) {
                    const Complex c1 = cval(i, j, m, n);
                    const Complex c2 = cval(i, j, -m, -n);
                    dk.push_back((c1 + c2).real());
                    dk.push_back(-c1.imag() + c2.imag());
                });
            }

        dws.insert(dws.begin(), dw);
        dbs.insert(dbs.begin(), db);
        dkernels.insert(dkernels.begin(), dk);
        du = std::move(dunext);
    }

    // lifting
    {
        const ChannelGrid& v1 = cache.v.front();
        for (std::size_t i = 0; i < h; ++i) {
            Tensor dvi = mul(du.channels[i], detail::act_grid(model.act, v1.channels[i], 1));
            dlift_w(i, 0) = dot(dvi, cache.input);
            dlift_b[i] = sum(dvi);
        }
    }

    std::vector<double> grad;
    grad.insert(grad.end(), dlift_w.raw().begin(), dlift_w.raw().end());
    grad.insert(grad.end(), dlift_b.raw().begin(), dlift_b.raw().end());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        grad.insert(grad.end(), dws[l].raw().begin(), dws[l].raw().end());
        grad.insert(grad.end(), dbs[l].raw().begin(), dbs[l].raw().end());
        grad.insert(grad.end(), dkernels[l].begin(), dkernels[l].end());
    }
    grad.insert(grad.end(), dproj_w.raw().begin(), dproj_w.raw().end());
    grad.push_back(dproj_b);
    return grad;
}

struct FnoPair {
    GridFunction2D a, u;
};

struct FnoTrainReport {
    std::vector<double> loss_history;
    bool diverged = false;
};

/// Full-batch first-order training on the mean squared node error.
inline FnoTrainReport fno_train(FnoModel& model, const std::vector<FnoPair>& data,
                                Optimizer& opt, std::size_t epochs) {
    if (data.empty()) throw std::invalid_argument("fno_train: empty dataset");
    FnoTrainReport report;
    std::vector<double> theta = model.flatten();
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        model.unflatten(theta);
        std::vector<double> grad(theta.size(), 0.0);
        double loss = 0.0;
        for (const FnoPair& pair : data) {
            FnoCache cache;
            Tensor out = fno_forward(model, pair.a, &cache);
            Tensor err = sub(out, pair.u.values);
            const double n = static_cast<double>(err.size()) * static_cast<double>(data.size());
            loss += dot(err, err) / n;
            Tensor dout = scale(err, 2.0 / n);
            std::vector<double> g = fno_backward(model, cache, dout);
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
        }
        report.loss_history.push_back(loss);
        if (!std::isfinite(loss)) {
            report.diverged = true;
            break;
        }
        opt.step(theta, grad);
    }
    model.unflatten(theta);
    return report;
}

/// -u'' + u = a (and its 2D analog) on the periodic box, solved mode by mode:
/// u_hat = a_hat / (1 + |2 pi k / L|^2). Serves as the training-data oracle.
inline GridFunction2D solve_periodic_helmholtz(const GridFunction2D& a) {
    Spectrum2D s = dft2(a);
    for (std::size_t r = 0; r < s.n1; ++r)
        for (std::size_t c = 0; c < s.n2; ++c) {
            const long m = r <= s.n1 / 2 ? static_cast<long>(r)
                                         : static_cast<long>(r) - static_cast<long>(s.n1);
            const long n = c <= s.n2 / 2 ? static_cast<long>(c)
                                         : static_cast<long>(c) - static_cast<long>(s.n2);
            const double w1 = 2.0 * M_PI * static_cast<double>(m) / a.l1;
            const double w2 = 2.0 * M_PI * static_cast<double>(n) / a.l2;
            s.modes[r * s.n2 + c] /= 1.0 + w1 * w1 + w2 * w2;
        }
    return GridFunction2D(idft2(s), a.l1, a.l2);
}

/// Random band-limited real field with modes |m| <= k1, |n| <= k2 (clamped
/// below the grid Nyquist mode).
inline GridFunction2D random_band_limited(std::size_t n1, std::size_t n2, int k1, int k2,
                                          Rng& rng, double l1 = 1.0, double l2 = 1.0) {
    Spectrum2D s;
    s.n1 = n1;
    s.n2 = n2;
    s.modes.assign(n1 * n2, Complex(0, 0));
    const long c1 = n1 == 1 ? 0 : std::min<long>(k1, static_cast<long>(n1) / 2 - 1);
    const long c2 = n2 == 1 ? 0 : std::min<long>(k2, static_cast<long>(n2) / 2 - 1);
    s.at(0, 0) = Complex(rng.uniform(-1, 1), 0);
    for (long n = -c2; n <= c2; ++n)
        for (long m = -c1; m <= c1; ++m) {
            if (!(n > 0 || (n == 0 && m > 0))) continue;
            const Complex v(rng.uniform(-1, 1), rng.uniform(-1, 1));
            s.at(m, n) = v;
            s.at(-m, -n) = std::conj(v);
        }
    return GridFunction2D(idft2(s), l1, l2);
}

inline double fno_relative_l2(const FnoModel& model, const std::vector<FnoPair>& data) {
    double num = 0.0, den = 0.0;
    for (const FnoPair& pair : data) {
        Tensor out = fno_forward(model, pair.a);
        Tensor err = sub(out, pair.u.values);
        num += dot(err, err);
        den += dot(pair.u.values, pair.u.values);
    }
    return std::sqrt(num / den);
}

}  // namespace sciml
