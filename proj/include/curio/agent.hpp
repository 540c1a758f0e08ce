#pragma once

#include "curio/envs.hpp"
#include "curio/intrinsic.hpp"
#include "curio/network.hpp"
#include "curio/optim.hpp"

#include <functional>
#include <random>
#include <span>
#include <vector>

namespace curio::agent {

struct PpoConfig {
    Scalar gamma = 0.99;
    Scalar lambda = 0.95;
    Scalar clip = 0.2;
    int epochs = 4;
    int minibatches = 4;
    Scalar entropy_coef = 0.01;
    Scalar value_coef = 0.5;
    Scalar base_lr = 2.5e-4;
    Scalar beta = 1.0;  // intrinsic reward coefficient
    Scalar max_grad_norm = 0.5;

    void validate() const;
};

/// Shared conv + dense trunk with a policy head (logits) and a value head.
class PolicyNet {
public:
    PolicyNet(const Shape& obs_shape, std::uint64_t seed, Index hidden = 128, int num_actions = envs::kNumActions);

    struct Output {
        Tensor logits;  // (N, A)
        Tensor value;   // (N)
    };
    Output forward(const Tensor& obs) const;
    Output forward(const Eigen::Ref<const RowMatrix>& obs_rows) const;

    std::vector<Tensor>& parameters() { return params_; }
    std::vector<NamedTensor> named_parameters() const;
    void load_parameters(const std::vector<NamedTensor>& named);
    void zero_grad();
    std::uint64_t digest() const;
    const Shape& obs_shape() const { return trunk_.input_shape(); }

private:
    Network trunk_;
    Network policy_head_;
    Network value_head_;
    std::vector<Tensor> params_;
};

/// Row-wise softmax of logits.
RowMatrix action_probabilities(const Eigen::Ref<const RowMatrix>& logits);

/// T steps from E environments, rows indexed t * E + e.
struct RolloutBatch {
    int horizon = 0;     // T
    int num_envs = 0;    // E
    RowMatrix obs;       // observation each action was taken from
    RowMatrix next_obs;  // observation after the step (terminal one when done)
    std::vector<int> actions;
    Vector log_probs;
    Vector values;
    Vector extrinsic_rewards;
    Vector intrinsic_raw;
    Vector intrinsic_rewards;  // normalised, zero without curiosity
    std::vector<char> dones;
    Vector bootstrap_values;   // V(s_T), length E
    std::vector<envs::EpisodeInfo> finished;

    Index size() const { return static_cast<Index>(horizon) * num_envs; }
};

/// Steps the policy for T steps, sampling actions from `rng`. Intrinsic
/// fields are left at zero.
RolloutBatch collect_rollout(const PolicyNet& policy, envs::VecEnv& envs, int horizon, std::mt19937_64& rng);

/// Post-collection intrinsic rewards: updates the observation normaliser
/// (rnd family), scores next_obs, folds the raw rewards through the forward
/// filter into the return normaliser, then fills intrinsic_raw and
/// intrinsic_rewards. Returns the prepared batch for predictor updates.
intrinsic::PreparedBatch attach_intrinsic(RolloutBatch& batch, intrinsic::CuriosityModule& curiosity,
                                          intrinsic::RewardForwardFilter& filter);

/// Convenience: collect_rollout followed by attach_intrinsic when curiosity is
/// non-null.
RolloutBatch collect_rollout(const PolicyNet& policy, envs::VecEnv& envs, intrinsic::CuriosityModule* curiosity,
                             intrinsic::RewardForwardFilter* filter, int horizon, std::mt19937_64& rng,
                             intrinsic::PreparedBatch* prepared = nullptr);

struct GaeResult {
    RowMatrix advantages;  // (T, E)
    RowMatrix returns;     // advantages + values
};

/// Generalised advantage estimation over (T, E) arrays. dones(t, e) marks
/// that the step taken at t ended the episode.
GaeResult gae(const Eigen::Ref<const RowMatrix>& rewards, const Eigen::Ref<const RowMatrix>& values,
              const Eigen::Ref<const RowMatrix>& dones, const Eigen::Ref<const Vector>& bootstrap, Scalar gamma,
              Scalar lambda);

struct PpoLoss {
    Tensor total;
    Scalar policy_loss = 0;
    Scalar value_loss = 0;
    Scalar entropy = 0;
    Scalar clip_fraction = 0;
};

/// Clipped surrogate + value_coef * MSE(value, return) - entropy_coef * entropy.
PpoLoss ppo_loss(const PolicyNet::Output& out, std::span<const int> actions, const Vector& old_log_probs,
                 const Vector& advantages, const Vector& returns, const PpoConfig& config);

struct PpoStats {
    Scalar policy_loss = 0;
    Scalar value_loss = 0;
    Scalar entropy = 0;
    Scalar clip_fraction = 0;
    int updates = 0;
};

/// Called once per minibatch with the minibatch row indices, after the policy
/// step. Used to run predictor updates on the same schedule.
using MinibatchHook = std::function<void(std::span<const Index>)>;

/// epochs x minibatches Adam steps. Advantages are normalised over the whole
/// batch (std floor 1e-8); gradients are clipped to max_grad_norm.
PpoStats ppo_update(PolicyNet& policy, AdamState& optimizer, const RolloutBatch& batch, const GaeResult& targets,
                    const PpoConfig& config, std::mt19937_64& rng, const MinibatchHook& hook = {});

}  // namespace curio::agent
