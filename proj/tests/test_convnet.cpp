#include <catch2/catch_amalgamated.hpp>

#include "sciml/convnet.hpp"

using namespace sciml;

TEST_CASE("worked 1D convolution, stride 1, zero pad 1") {
    // input (u1..u4), kernel (x,y,z): [y u1 + z u2, x u1 + y u2 + z u3,
    //                                  x u2 + y u3 + z u4, x u3 + y u4]
    const double x = 2, y = 3, z = 5;
    const std::vector<double> u{7, 11, 13, 17};
    auto out = conv1d(u, {x, y, z}, 1, 1);
    REQUIRE(out.size() == 4);
    CHECK(out[0] == y * u[0] + z * u[1]);
    CHECK(out[1] == x * u[0] + y * u[1] + z * u[2]);
    CHECK(out[2] == x * u[1] + y * u[2] + z * u[3]);
    CHECK(out[3] == x * u[2] + y * u[3]);
}

TEST_CASE("numeric 1D convolution case") {
    auto out = conv1d({1, 2, 3, 4}, {1, 0, -1}, 1, 1);
    REQUIRE(out.size() == 4);
    CHECK(out[0] == -2.0);
    CHECK(out[1] == -2.0);
    CHECK(out[2] == -2.0);
    CHECK(out[3] == 3.0);
}

TEST_CASE("worked 1D convolution, stride 2") {
    const double x = 2, y = 3, z = 5;
    const std::vector<double> u{7, 11, 13, 17};
    auto out = conv1d(u, {x, y, z}, 2, 1);
    REQUIRE(out.size() == 2);
    CHECK(out[0] == y * u[0] + z * u[1]);
    CHECK(out[1] == x * u[1] + y * u[2] + z * u[3]);
}

TEST_CASE("conv2d with stride 1 and centered zero padding preserves extent") {
    Rng rng(3);
    Tensor img({6, 5, 2});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform(-1, 1);
    ConvKernelSet ks;
    ks.weights = Tensor({3, 3, 2, 4});
    for (std::size_t i = 0; i < ks.weights.size(); ++i) ks.weights[i] = rng.uniform(-1, 1);
    ks.biases = Tensor({4});
    ks.pad = PadMode::Zero;
    ks.pad_width = 1;
    Tensor out = conv2d(img, ks);
    CHECK(out.extent(0) == 6);
    CHECK(out.extent(1) == 5);
    CHECK(out.extent(2) == 4);
}

TEST_CASE("conv2d is linear in the input with the bias off") {
    Rng rng(5);
    Tensor u({5, 5, 1}), v({5, 5, 1});
    for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] = rng.uniform(-1, 1);
        v[i] = rng.uniform(-1, 1);
    }
    ConvKernelSet ks;
    ks.weights = Tensor({3, 3, 1, 2});
    for (std::size_t i = 0; i < ks.weights.size(); ++i) ks.weights[i] = rng.uniform(-1, 1);
    ks.biases = Tensor({2});
    const double a = 1.7, b = -0.6;
    Tensor mix = conv2d(add(scale(u, a), scale(v, b)), ks);
    Tensor split = add(scale(conv2d(u, ks), a), scale(conv2d(v, ks), b));
    for (std::size_t i = 0; i < mix.size(); ++i)
        CHECK(std::abs(mix[i] - split[i]) < 1e-12);
}

TEST_CASE("conv2d rejects kernels larger than the padded image") {
    ConvKernelSet ks;
    ks.weights = Tensor({5, 5, 1, 1});
    ks.biases = Tensor({1});
    CHECK_THROWS_AS(conv2d(Tensor({3, 3, 1}), ks), DimensionError);
}

TEST_CASE("stencil kernels") {
    Tensor ddx = stencil_kernel(StencilKind::Ddx, 0.5);
    CHECK(ddx(1, 0) == -1.0);
    CHECK(ddx(1, 2) == 1.0);
    CHECK(ddx(0, 1) == 0.0);

    Tensor lap = stencil_kernel(StencilKind::Laplacian, 1.0);
    CHECK(lap(1, 1) == 4.0);
    CHECK(lap(0, 1) == -1.0);
    CHECK(lap(1, 0) == -1.0);
    CHECK(lap(0, 0) == 0.0);

    CHECK(sum(stencil_kernel(StencilKind::Smooth)) == Catch::Approx(1.0).margin(1e-15));
    CHECK(sum(gaussian_kernel(0.8, 2)) == Catch::Approx(1.0).margin(1e-14));
}

TEST_CASE("fd equivalence: stencils are exact on low-degree fields") {
    const double h = 0.25;  // power of two keeps the grid arithmetic exact
    // u = x1: d/dx1 is exact
    CHECK(fd_equivalence_check([](double x1, double) { return x1; },
                               [](double, double) { return 1.0; }, StencilKind::Ddx,
                               h) == 0.0);
    // u = x1^2: second derivative is exactly 2
    CHECK(fd_equivalence_check([](double x1, double) { return x1 * x1; },
                               [](double, double) { return 2.0; }, StencilKind::D2dx2,
                               h) == 0.0);
    // u = x2: d/dx2 is exact
    CHECK(fd_equivalence_check([](double, double x2) { return x2; },
                               [](double, double) { return 1.0; }, StencilKind::Ddy,
                               h) == 0.0);
}

TEST_CASE("fd equivalence: O(h^2) on sin") {
    auto field = [](double x1, double) { return std::sin(x1); };
    auto target = [](double x1, double) { return std::cos(x1); };
    const double e1 = fd_equivalence_check(field, target, StencilKind::Ddx, 0.2);
    const double e2 = fd_equivalence_check(field, target, StencilKind::Ddx, 0.1);
    CHECK(e1 / e2 == Catch::Approx(4.0).epsilon(0.15));
}

TEST_CASE("pooling") {
    Tensor img = Tensor::from({2, 2, 1}, {1, 2, 3, 4});
    Tensor mx = pool(img, PoolKind::Max, 2);
    CHECK(mx.extent(0) == 1);
    CHECK(mx(0, 0, 0) == 4.0);
    Tensor av = pool(img, PoolKind::Avg, 2);
    CHECK(av(0, 0, 0) == 2.5);

    Tensor big({8, 8, 1}, 1.0);
    Tensor once = pool(big, PoolKind::Max, 2);
    CHECK(once.extent(0) == 4);
    Tensor twice = pool(once, PoolKind::Max, 2);
    CHECK(twice.extent(0) == 2);

    CHECK_THROWS_AS(pool(img, PoolKind::Max, 3), DimensionError);
}

TEST_CASE("worked transpose convolution, stride 2") {
    const double x = 2, y = 3, z = 5;
    auto out = transpose_conv1d({7, 11}, {x, y, z}, 2);
    REQUIRE(out.size() == 4);
    CHECK(out[0] == 7 * x);
    CHECK(out[1] == 7 * y);
    CHECK(out[2] == 7 * z + 11 * x);
    CHECK(out[3] == 11 * y);

    auto nums = transpose_conv1d({1, 2}, {1, 2, 3}, 2);
    CHECK(nums == std::vector<double>{1, 2, 5, 4});
}

TEST_CASE("2D transpose convolution checkerboarding examples") {
    Tensor ones2 = Tensor::from({2, 2}, {1, 1, 1, 1});

    // 3x3 kernel, stride 2: cropped 4x4 counts are unequal
    Tensor k3({3, 3}, 1.0);
    Tensor c3 = transpose_conv2d(ones2, k3, 2);
    REQUIRE(c3.rows() == 4);
    bool unequal = false;
    for (std::size_t i = 0; i < c3.size(); ++i) unequal |= (c3[i] != c3[0]);
    CHECK(unequal);

    // 2x2 kernel, stride 2: every output cell receives exactly one patch
    Tensor k2({2, 2}, 1.0);
    Tensor c2 = transpose_conv2d(ones2, k2, 2);
    REQUIRE(c2.rows() == 4);
    for (std::size_t i = 0; i < c2.size(); ++i) CHECK(c2[i] == 1.0);
}

TEST_CASE("contribution counts are uniform iff kernel size is a multiple of the stride") {
    for (std::size_t k = 1; k <= 4; ++k)
        for (int s = 1; s <= 3; ++s) {
            const auto counts = transpose_conv1d_counts(12, k, s);
            const bool uniform = counts_uniform_interior(counts, k);
            CHECK(uniform == (k % static_cast<std::size_t>(s) == 0));
        }
}

TEST_CASE("transpose convolution is the transposed linear map") {
    Rng rng(8);
    for (std::size_t k = 1; k <= 4; ++k)
        for (int s = 1; s <= 3; ++s)
            for (std::size_t n = 2; n <= 4; ++n) {
                std::vector<double> kernel(k);
                for (double& v : kernel) v = rng.uniform(-2, 2);
                Tensor up = transpose_conv1d_matrix(n, kernel, s);
                Tensor down = conv1d_matrix(s * (n - 1) + k, kernel, s);
                Tensor dt = transpose(down);
                REQUIRE(up.same_shape(dt));
                for (std::size_t i = 0; i < up.size(); ++i) CHECK(up[i] == dt[i]);
            }
}

TEST_CASE("cnn forward produces a probability vector") {
    CnnSpec spec;
    spec.blocks = {{3, 4, 1, 1, true, PoolKind::Max, 2}};
    spec.dense_hidden = {8};
    spec.classes = 3;
    Rng rng(11);
    CnnParams params = cnn_init(spec, 8, 8, 1, rng);
    Tensor img({8, 8, 1});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform(0, 1);
    Tensor p = cnn_forward(spec, params, img);
    CHECK(p.size() == 3);
    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(p[i] >= 0.0);
        total += p[i];
    }
    CHECK(total == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("cnn shape mismatch names the offending block") {
    CnnSpec spec;
    spec.blocks = {{3, 4, 1, 0, false, PoolKind::Max, 2},
                   {7, 4, 1, 0, false, PoolKind::Max, 2}};
    spec.dense_hidden = {};
    Rng rng(1);
    CHECK_THROWS_WITH(cnn_init(spec, 8, 8, 1, rng),
                      Catch::Matchers::ContainsSubstring("block 1"));
}

TEST_CASE("cnn gradient matches finite differences") {
    CnnSpec spec;
    spec.blocks = {{3, 2, 1, 1, true, PoolKind::Avg, 2}};
    spec.dense_hidden = {6};
    spec.classes = 2;
    spec.activation = Activation::Tanh;  // smooth, so the FD check is clean
    Rng rng(21);
    CnnParams params = cnn_init(spec, 6, 6, 1, rng);
    Tensor img({6, 6, 1});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform(0, 1);

    Tape tape;
    CnnTapeNodes nodes = record_cnn(tape, spec, params, img);
    Tensor onehot({2, 1});
    onehot(1, 0) = 1.0;
    NodeId ce =
        tape.scale(tape.sum(tape.mul(tape.constant(onehot), tape.log(nodes.probs))), -1.0);
    tape.set_tip(ce);
    GradCheckReport rep = grad_check(tape, 1e-6);
    CHECK(rep.max_rel_error < 1e-5);
}

TEST_CASE("cnn learns filled vs hollow squares") {
    Rng rng(17);
    CnnDataset data = make_shapes_dataset(64, rng);
    CnnSpec spec;
    spec.blocks = {{3, 4, 1, 1, true, PoolKind::Max, 2},
                   {3, 8, 1, 1, true, PoolKind::Max, 2}};
    spec.dense_hidden = {16};
    spec.classes = 2;
    Rng init_rng(3);
    CnnParams params = cnn_init(spec, 8, 8, 1, init_rng);
    Optimizer opt;
    opt.kind = OptimKind::Adam;
    opt.lr = 0.01;
    CnnTrainReport report = cnn_train(spec, params, data, opt, 60, 4, 23);
    CHECK_FALSE(report.diverged);
    CHECK(cnn_accuracy(spec, params, data) >= 0.95);
}

TEST_CASE("single-class dataset drives cross-entropy to zero and probabilities to one-hot") {
    Rng rng(29);
    CnnDataset data = make_shapes_dataset(16, rng);
    for (auto& l : data.labels) l = 0;  // collapse to one class
    CnnSpec spec;
    spec.blocks = {{3, 2, 1, 1, true, PoolKind::Max, 2}};
    spec.dense_hidden = {4};
    spec.classes = 2;
    Rng init_rng(5);
    CnnParams params = cnn_init(spec, 8, 8, 1, init_rng);
    Optimizer opt;
    opt.kind = OptimKind::Adam;
    opt.lr = 0.02;
    CnnTrainReport report = cnn_train(spec, params, data, opt, 80, 1, 31);
    CHECK(report.loss_history.back() < 1e-2);
    Tensor p = cnn_forward(spec, params, data.images[0]);
    CHECK(p[0] > 0.98);
}

TEST_CASE("conv parameter counts with and without bias") {
    CnnSpec spec;
    spec.blocks = {{3, 4, 1, 1, false, PoolKind::Max, 2}};
    spec.dense_hidden = {};
    Rng rng(1);
    CnnParams params = cnn_init(spec, 8, 8, 1, rng);
    CHECK(conv_param_count(params, false) == 3 * 3 * 1 * 4);
    CHECK(conv_param_count(params, true) == 3 * 3 * 1 * 4 + 4);
}
