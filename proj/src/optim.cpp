#include "curio/optim.hpp"

#include <Eigen/QR>

#include <cmath>
#include <random>

namespace curio {

void adam_step(AdamState& state, std::span<Tensor> params) {
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.push_back(Vector::Zero(p.size()));
            state.second_moment.push_back(Vector::Zero(p.size()));
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw ShapeError("adam_step: optimizer tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].frozen()) {
            throw FrozenError("adam_step: parameter " + std::to_string(i) + " is frozen");
        }
        if (state.first_moment[i].size() != params[i].size()) {
            throw ShapeError("adam_step: moment buffer size mismatch for parameter " + std::to_string(i));
        }
    }
    state.step_count += 1;
    const auto t = static_cast<Scalar>(state.step_count);
    const Scalar bc1 = 1.0 - std::pow(state.beta1, t);
    const Scalar bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Vector& m = state.first_moment[i];
        Vector& v = state.second_moment[i];
        Vector g = params[i].has_grad() ? params[i].grad() : Vector::Zero(params[i].size());
        if (!g.allFinite()) {
            throw NumericError("adam_step: non-finite gradient for parameter " + std::to_string(i));
        }
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
        params[i].mutable_data().array() -=
            state.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps);
    }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Tensor orthogonal_init(const Shape& shape, Scalar gain, std::uint64_t seed) {
    if (shape.size() < 2) {
        throw ShapeError("orthogonal_init: need at least 2 dims, got " + to_string(shape));
    }
    const Index rows = shape[0];
    const Index cols = numel(shape) / rows;
    const Index big = std::max(rows, cols), small = std::min(rows, cols);
    std::mt19937_64 rng(seed);
    std::normal_distribution<Scalar> normal(0.0, 1.0);
    Matrix a(big, small);
    for (Index j = 0; j < small; ++j) {
        for (Index i = 0; i < big; ++i) {
            a(i, j) = normal(rng);
        }
    }
    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ() * Matrix::Identity(big, small);
    const Matrix r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
    for (Index j = 0; j < small; ++j) {
        if (r(j, j) < 0) {
            q.col(j) *= -1.0;
        }
    }
    RowMatrix w = rows >= cols ? RowMatrix(q) : RowMatrix(q.transpose());
    w *= gain;
    return Tensor(shape, Eigen::Map<const Vector>(w.data(), w.size()));
}

}  // namespace curio
