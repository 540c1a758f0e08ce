#pragma once

#include "curio/network.hpp"
#include "curio/optim.hpp"
#include "curio/pretrain.hpp"
#include "curio/running_stats.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>

namespace curio::intrinsic {

enum class Variant { rnd, rnd_lr, prend };

/// Accepts "rnd", "rnd_lr" (or "rnd-lr"), "prend".
Variant parse_variant(const std::string& name);
std::string to_string(Variant v);
/// 0.01 for rnd_lr, 1 for rnd and prend.
Scalar default_lr_multiplier(Variant v);

struct CuriosityConfig {
    Index embedding_dim = 64;
    Scalar base_lr = 2.5e-4;
    std::optional<Scalar> lr_multiplier;  // default per variant when unset
    Scalar obs_clip = 5.0;
    Index neck_hidden = 128;
};

/// Predictor inputs and (constant) target embeddings for a batch of
/// observations. Targets never change, so a batch can be prepared once and
/// reused across several predictor updates.
struct PreparedBatch {
    Tensor predictor_input;
    RowMatrix target_embedding;
    Index size() const { return target_embedding.rows(); }
};

struct IntrinsicRewards {
    Vector raw;         // mean squared target/predictor disagreement
    Vector normalized;  // raw / running std of intrinsic returns (raw until the normaliser has 2+ samples)
};

/// Target/predictor pair producing prediction-error rewards.
///  - rnd, rnd_lr: both nets are conv stacks over clipped, normalised
///    observations.
///  - prend: both share a frozen pre-trained backbone over raw observations;
///    the target neck is random and frozen, the predictor neck learns.
class CuriosityModule {
public:
    static CuriosityModule build(Variant variant, std::uint64_t seed, const Shape& obs_shape,
                                 const CuriosityConfig& config = {},
                                 std::shared_ptr<const pretrain::Backbone> backbone = nullptr);

    Variant variant() const { return variant_; }
    Scalar lr() const { return optimizer_.lr; }
    Index embedding_dim() const { return embedding_dim_; }

    PreparedBatch prepare(const Eigen::Ref<const RowMatrix>& obs) const;
    /// Per-row mean over embedding dims of (target - predictor)^2.
    Vector raw_reward(const PreparedBatch& batch) const;
    IntrinsicRewards intrinsic_reward(const Eigen::Ref<const RowMatrix>& obs) const;
    Vector normalize_rewards(const Vector& raw) const;

    /// One Adam step on MSE(predictor, target) over the selected rows (all rows
    /// when empty). Returns the loss before the step.
    Scalar fit(const PreparedBatch& batch, std::span<const Index> rows = {});
    Scalar update_predictor(const Eigen::Ref<const RowMatrix>& obs);

    void update_obs_normalizer(const Eigen::Ref<const RowMatrix>& obs);
    void update_return_normalizer(const Eigen::Ref<const Vector>& intrinsic_returns);
    void update_normalizers(const Eigen::Ref<const RowMatrix>& obs, const Eigen::Ref<const Vector>& intrinsic_returns);

    const RunningMeanStd& obs_normalizer() const { return obs_rms_; }
    const RunningMeanStd& return_normalizer() const { return ret_rms_; }

    /// The frozen target function: the RND target net, or the PreND target neck.
    const Network& target() const { return target_; }
    Network& predictor() { return predictor_; }
    const Network& predictor() const { return predictor_; }
    const AdamState& optimizer() const { return optimizer_; }
    const pretrain::Backbone* backbone() const { return backbone_.get(); }

    /// Digest of everything on the target side (backbone included for prend).
    std::uint64_t target_digest() const;

private:
    CuriosityModule() = default;
    Tensor obs_tensor(const Eigen::Ref<const RowMatrix>& obs) const;

    Variant variant_ = Variant::rnd;
    Shape obs_shape_;
    Index embedding_dim_ = 0;
    Scalar obs_clip_ = 5.0;
    std::shared_ptr<const pretrain::Backbone> backbone_;
    Network target_;
    Network predictor_;
    AdamState optimizer_;
    RunningMeanStd obs_rms_;
    RunningMeanStd ret_rms_;
};

/// Per-environment discounted intrinsic return, r_t + gamma * R_{t-1}. When
/// episodic, a done flag restarts the sum for that environment.
class RewardForwardFilter {
public:
    RewardForwardFilter(int num_envs, Scalar gamma, bool episodic);
    /// rewards and dones are length E; returns the updated returns.
    Vector update(const Eigen::Ref<const Vector>& rewards, std::span<const bool> dones);

private:
    Vector returns_;
    Scalar gamma_;
    bool episodic_;
};

}  // namespace curio::intrinsic
