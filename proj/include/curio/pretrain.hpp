#pragma once

#include "curio/envs.hpp"
#include "curio/network.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace curio::pretrain {

/// Uniform-random-policy trajectories kept as single frames; observations are
/// rebuilt on demand by stacking, with the first frame of an episode repeated.
class RolloutStore {
public:
    struct Episode {
        std::vector<Vector> frames;  // newest frame of the observation at each step
    };

    RolloutStore() = default;
    explicit RolloutStore(envs::EnvConfig env) : env_(env) {}

    const envs::EnvConfig& env() const { return env_; }
    const std::vector<Episode>& episodes() const { return episodes_; }
    std::vector<Episode>& episodes() { return episodes_; }

    Index frame_count() const;
    envs::Observation observation(std::size_t episode, std::size_t t) const;
    /// Rows are the stacked observations at the given (episode, t) positions.
    RowMatrix observations(const std::vector<std::pair<std::size_t, std::size_t>>& at) const;
    std::uint64_t digest() const;

private:
    envs::EnvConfig env_;
    std::vector<Episode> episodes_;
};

struct TemporalConfig {
    int k_near = 1;
    int k_far = 20;
    Scalar margin = 1.0;
    int batch_size = 32;
    Scalar lr = 3e-4;
};

/// n_steps uniform-random actions in each of num_envs environments (one
/// stored frame per step, so frame_count() == n_steps * num_envs). Every
/// episode gets a fresh layout derived from the seed.
RolloutStore collect_pretrain_rollouts(const envs::EnvConfig& env, int num_envs, int n_steps, std::uint64_t seed,
                                       const TemporalConfig& temporal = {});

/// Conv stack plus a dense layer reshaped into a (C, h, w) feature map.
class Backbone {
public:
    Backbone() = default;
    Backbone(const Shape& obs_shape, Shape feature_shape = {64, 4, 4});

    void initialize(std::uint64_t seed);

    /// (N, S, H, W) -> (N, C, h, w)
    Tensor features(const Tensor& obs) const;
    /// (N, S, H, W) -> (N, C): spatial mean of the feature map.
    Tensor pooled(const Tensor& obs) const;
    /// Mean-pooled embeddings for observation rows, computed without a tape.
    RowMatrix embed(const Eigen::Ref<const RowMatrix>& obs_rows) const;

    const Shape& obs_shape() const { return net_.input_shape(); }
    const Shape& feature_shape() const { return feature_shape_; }
    Network& network() { return net_; }
    const Network& network() const { return net_; }
    std::vector<Tensor>& parameters() { return net_.parameters(); }

    void freeze() { net_.freeze(); }
    bool frozen() const { return net_.frozen(); }
    std::uint64_t digest() const { return net_.digest(); }

private:
    Network net_;
    Shape feature_shape_;
};

struct PretrainResult {
    Backbone backbone;
    std::vector<Scalar> loss_series;  // mean triplet loss per batch
};

/// Triplet margin training, L = max(0, d(a,p) - d(a,n) + margin) on mean-pooled
/// features with L2 distance, anchors paired with the frame k_near later and a
/// frame at least k_far away in the same episode. The result is frozen.
PretrainResult pretrain_backbone(const RolloutStore& store, int epochs, std::uint64_t seed,
                                 const TemporalConfig& temporal = {});

using Embedder = std::function<RowMatrix(const Eigen::Ref<const RowMatrix>&)>;

/// mean d(a, p) / mean d(a, n) over every anchor that has a k_near successor
/// and a partner k_far away (forward if possible, else backward). Throws on an
/// empty set or when the far distances are all zero.
Scalar temporal_coherence_ratio(const Embedder& embed, const RolloutStore& store, const TemporalConfig& temporal = {});
Scalar temporal_coherence_ratio(const Backbone& backbone, const RolloutStore& store,
                                const TemporalConfig& temporal = {});

/// Checkpoint plus a JSON sidecar at `<path>.json` describing the objective.
void save_backbone(const std::filesystem::path& path, const Backbone& backbone, const TemporalConfig& temporal,
                   int epochs, std::uint64_t seed, std::uint64_t data_digest, const std::vector<Scalar>& losses);
/// Loads and freezes.
Backbone load_backbone(const std::filesystem::path& path, const Shape& obs_shape);

}  // namespace curio::pretrain
