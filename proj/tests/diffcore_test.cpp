#include "support/gradcheck.hpp"
#include "support/layer_checks.hpp"

#include "curio/checkpoint.hpp"
#include "curio/network.hpp"
#include "curio/ops.hpp"
#include "curio/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace curio;
using curio::testing::gradcheck;
using curio::testing::random_tensor;

namespace {

Tensor vec(std::initializer_list<Scalar> v, Shape shape) {
    Vector d(static_cast<Index>(v.size()));
    Index i = 0;
    for (auto x : v) d[i++] = x;
    return Tensor(std::move(shape), std::move(d));
}

}  // namespace

TEST(Tensor, RejectsMismatchedLengthAndNonFinite) {
    EXPECT_THROW(Tensor({2, 2}, Vector::Zero(3)), ShapeError);
    Vector bad = Vector::Zero(2);
    bad[1] = std::nan("");
    EXPECT_THROW(Tensor({2}, bad), NumericError);
}

TEST(Forward, IdentityDense) {
    Network net({3}, {LayerSpec::dense(3, 3)});
    net.parameters()[0].mutable_data() = Eigen::Map<const Vector>(Matrix::Identity(3, 3).eval().data(), 9);
    Tensor y = net.forward(vec({1, 2, 3}, {1, 3}));
    EXPECT_EQ(y.shape(), (Shape{1, 3}));
    EXPECT_EQ(y[0], 1.0);
    EXPECT_EQ(y[1], 2.0);
    EXPECT_EQ(y[2], 3.0);
}

TEST(Forward, Relu) {
    Tensor y = relu(vec({-1, 0, 2}, {3}));
    EXPECT_EQ(y[0], 0.0);
    EXPECT_EQ(y[1], 0.0);
    EXPECT_EQ(y[2], 2.0);
}

TEST(Forward, MlpMatchesStraightLineOracle) {
    Network net({5}, {LayerSpec::dense(5, 7), LayerSpec::relu(), LayerSpec::dense(7, 3)});
    net.initialize(42, std::sqrt(2.0), 1.0);
    std::mt19937_64 rng(7);
    for (auto& p : net.parameters()) {
        p.mutable_data() += random_tensor(p.shape(), rng, false, 0.1).data();
    }
    Tensor x = random_tensor({4, 5}, rng);
    Tensor y = net.forward(x);

    const auto& ps = net.parameters();
    Eigen::Map<const RowMatrix> w1(ps[0].data().data(), 7, 5), w2(ps[2].data().data(), 3, 7);
    RowMatrix expected(4, 3);
    for (Index s = 0; s < 4; ++s) {
        for (Index o = 0; o < 3; ++o) {
            Scalar acc = ps[3].data()[o];
            for (Index h = 0; h < 7; ++h) {
                Scalar pre = ps[1].data()[h];
                for (Index i = 0; i < 5; ++i) pre += w1(h, i) * x.data()[s * 5 + i];
                acc += w2(o, h) * std::max(pre, 0.0);
            }
            expected(s, o) = acc;
        }
    }
    EXPECT_LT((y.rows() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, ShapeMismatchNamesLayer) {
    Network net({4}, {LayerSpec::dense(4, 2)});
    try {
        net.forward(Tensor::zeros({1, 5}));
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
    }
    try {
        Network bad({4}, {LayerSpec::dense(4, 2), LayerSpec::dense(3, 1)});
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
    }
    EXPECT_THROW(Network({1, 3, 3}, {LayerSpec::conv2d(1, 2, 4, 1)}), ShapeError);
}

TEST(Forward, ConvMatchesNaiveLoops) {
    std::mt19937_64 rng(3);
    Tensor x = random_tensor({2, 3, 9, 9}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    Tensor y = conv2d(x, w, b, 2);
    EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
    EXPECT_LT((y.data() - curio::testing::naive_conv2d(x, w, b, 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, LinearCaseGradIsInput) {
    Tensor w = vec({0.5, -1, 2}, {3});
    Tensor w_param(w.shape(), w.data(), true);
    Tensor x = vec({3, 4, 5}, {3});
    sum(mul(w_param, x)).backward();
    EXPECT_EQ(w_param.grad(), x.data());
    EXPECT_FALSE(x.has_grad());
}

TEST(Backward, MseAtTargetIsZero) {
    Tensor t = vec({1, 2, 3}, {3});
    Tensor w(t.shape(), t.data(), true);
    mean(square(sub(w, t))).backward();
    EXPECT_EQ(w.grad().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, NonScalarLossThrows) {
    Tensor w = Tensor::zeros({2}, true);
    EXPECT_THROW(mul_scalar(w, 2.0).backward(), ShapeError);
}

TEST(Backward, ThreeLayerNetMatchesFiniteDifferences) {
    Network net({6}, {LayerSpec::dense(6, 5), LayerSpec::tanh(), LayerSpec::dense(5, 4), LayerSpec::tanh(),
                      LayerSpec::dense(4, 2)});
    net.initialize(11, 1.0, 1.0);
    std::mt19937_64 rng(5);
    Tensor x = random_tensor({3, 6}, rng);
    Tensor target = random_tensor({3, 2}, rng);
    auto& params = net.parameters();
    const Scalar err = gradcheck([&] { return mse(net.forward(x), target); }, params);
    EXPECT_LT(err, 1e-4);
}

TEST(Backward, ConvStackMatchesFiniteDifferences) {
    Network net3({2, 10, 10}, {LayerSpec::conv2d(2, 3, 3, 2), LayerSpec::tanh(), LayerSpec::spatial_mean_pool(2),
                               LayerSpec::instance_norm(), LayerSpec::flatten(), LayerSpec::dense(12, 2)});
    net3.initialize(9, 1.0, 1.0);
    std::mt19937_64 rng(13);
    Tensor x = random_tensor({2, 2, 10, 10}, rng);
    Tensor target = random_tensor({2, 2}, rng);
    EXPECT_LT(gradcheck([&] { return mse(net3.forward(x), target); }, net3.parameters()), 1e-4);
}

TEST(Backward, EveryLayerKindPassesFiniteDifferences) {
    for (const auto& [kind, err] : curio::testing::layer_gradchecks(10, 99)) {
        EXPECT_LT(err, 1e-4) << kind;
    }
}

TEST(NumericGuard, NanCarriesOpName) {
    Tensor x = vec({-1.0}, {1});
    try {
        curio::sqrt(x);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("sqrt"), std::string::npos);
    }
    try {
        curio::exp(vec({1000.0}, {1}));
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("exp"), std::string::npos);
    }
}

TEST(NoGrad, RecordsNoTape) {
    Tensor w = Tensor::zeros({2}, true);
    NoGradGuard guard;
    Tensor y = sum(w);
    EXPECT_FALSE(y.requires_grad());
}

namespace {

// Scalar Adam written out longhand.
struct ScalarAdam {
    double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8, m = 0, v = 0;
    int t = 0;
    double step(double param, double g) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        return param - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

void set_grad(Tensor& p, const Vector& g) {
    p.zero_grad();
    sum(mul(p, Tensor(p.shape(), g))).backward();
}

}  // namespace

TEST(Adam, ZeroGradsLeaveParamsUnchanged) {
    std::mt19937_64 rng(1);
    Tensor p = random_tensor({4}, rng, true);
    const Vector before = p.data();
    set_grad(p, Vector::Zero(4));
    AdamState state(1e-3);
    std::vector<Tensor> ps{p};
    adam_step(state, ps);
    EXPECT_EQ(p.data(), before);
    EXPECT_EQ(state.step_count, 1);
}

TEST(Adam, SingleStepMatchesScalarOracle) {
    Tensor p = vec({0.25}, {1});
    Tensor param(p.shape(), p.data(), true);
    set_grad(param, Vector::Ones(1));
    AdamState state(1e-3);
    std::vector<Tensor> ps{param};
    adam_step(state, ps);
    ScalarAdam oracle{1e-3};
    EXPECT_NEAR(param.data()[0], oracle.step(0.25, 1.0), 1e-15);
}

TEST(Adam, FiveRandomStepsMatchElementwiseOracle) {
    std::mt19937_64 rng(2);
    Tensor param = random_tensor({5}, rng, true);
    std::vector<ScalarAdam> oracles(5, ScalarAdam{3e-2});
    Vector expected = param.data();
    AdamState state(3e-2);
    std::vector<Tensor> ps{param};
    for (int step = 0; step < 5; ++step) {
        const Vector g = random_tensor({5}, rng).data();
        set_grad(param, g);
        adam_step(state, ps);
        for (Index i = 0; i < 5; ++i) expected[i] = oracles[i].step(expected[i], g[i]);
    }
    EXPECT_LT((param.data() - expected).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(state.step_count, 5);
}

TEST(Adam, RejectsFrozenAndMismatched) {
    Tensor p = Tensor::zeros({2}, true);
    AdamState state;
    std::vector<Tensor> ps{p};
    adam_step(state, ps);
    std::vector<Tensor> other{Tensor::zeros({3}, true)};
    EXPECT_THROW(adam_step(state, other), ShapeError);
    p.freeze();
    EXPECT_THROW(adam_step(state, ps), FrozenError);
}

TEST(OrthogonalInit, SquareIsOrthonormal) {
    Tensor w = orthogonal_init({4, 4}, 1.0, 17);
    Eigen::Map<const RowMatrix> m(w.data().data(), 4, 4);
    EXPECT_LT((m.transpose() * m - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(OrthogonalInit, TallWithGainTwo) {
    Tensor w = orthogonal_init({8, 4}, 2.0, 17);
    Eigen::Map<const RowMatrix> m(w.data().data(), 8, 4);
    EXPECT_LT((m.transpose() * m - 4.0 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(OrthogonalInit, WideConvKernelHasOrthonormalRows) {
    Tensor w = orthogonal_init({3, 2, 2, 2}, 1.0, 5);
    Eigen::Map<const RowMatrix> m(w.data().data(), 3, 8);
    EXPECT_LT((m * m.transpose() - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(OrthogonalInit, SeedDeterministic) {
    EXPECT_EQ(digest(orthogonal_init({6, 3}, 1.0, 9)), digest(orthogonal_init({6, 3}, 1.0, 9)));
    EXPECT_NE(digest(orthogonal_init({6, 3}, 1.0, 9)), digest(orthogonal_init({6, 3}, 1.0, 10)));
    EXPECT_THROW(orthogonal_init({6}, 1.0, 9), ShapeError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Network net({2, 10, 10}, {LayerSpec::conv2d(2, 3, 3, 2), LayerSpec::relu(), LayerSpec::flatten(),
                              LayerSpec::dense(48, 5)});
    net.initialize(3, 1.3, 0.7);
    const auto path = std::filesystem::temp_directory_path() / "curio_ckpt_roundtrip.bin";
    save_network(path, net);
    Network other({2, 10, 10}, net.layers());
    load_network(path, other);
    EXPECT_EQ(other.digest(), net.digest());

    // Re-serialising the loaded network reproduces the file byte for byte.
    const auto path2 = std::filesystem::temp_directory_path() / "curio_ckpt_roundtrip2.bin";
    save_network(path2, other);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    EXPECT_EQ(sa, sb);
    EXPECT_EQ(sa.substr(0, 8), "CURIOCKP");
}

TEST(Checkpoint, RejectsBadMagicAndMismatchedArchitecture) {
    const auto path = std::filesystem::temp_directory_path() / "curio_ckpt_bad.bin";
    std::ofstream(path, std::ios::binary) << "NOTACKPT";
    EXPECT_THROW(load_checkpoint(path), std::runtime_error);

    Network net({4}, {LayerSpec::dense(4, 2)});
    save_network(path, net);
    Network other({4}, {LayerSpec::dense(4, 3)});
    EXPECT_THROW(load_network(path, other), ShapeError);
}

TEST(Network, FrozenRejectsUpdates) {
    Network net({4}, {LayerSpec::dense(4, 2)});
    net.freeze();
    Network src = net.clone();
    EXPECT_THROW(net.copy_parameters_from(src), FrozenError);
    EXPECT_THROW(net.parameters()[0].mutable_data(), FrozenError);
}
