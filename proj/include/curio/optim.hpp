#pragma once

#include "curio/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace curio {

struct AdamState {
    Scalar lr = 1e-3;
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.999;
    Scalar eps = 1e-8;
    std::int64_t step_count = 0;
    std::vector<Vector> first_moment;
    std::vector<Vector> second_moment;

    explicit AdamState(Scalar learning_rate = 1e-3) : lr(learning_rate) {}
};

/// One bias-corrected Adam update of every tensor in `params` from its grad.
/// A tensor without a populated grad is treated as having a zero grad.
/// Throws FrozenError if any parameter is frozen, ShapeError if the moment
/// buffers do not match.
void adam_step(AdamState& state, std::span<Tensor> params);

/// Orthogonal matrix of `shape` flattened to (shape[0], prod(rest)), scaled by
/// gain. Deterministic per seed.
Tensor orthogonal_init(const Shape& shape, Scalar gain, std::uint64_t seed);

/// splitmix64 finaliser; used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace curio
