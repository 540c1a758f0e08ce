#include "curio/agent.hpp"

#include "curio/models.hpp"
#include "curio/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace curio::agent {

void PpoConfig::validate() const {
    if (!(gamma >= 0 && gamma <= 1)) throw std::invalid_argument("gamma must be in [0, 1]");
    if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("lambda must be in [0, 1]");
    if (!(clip > 0)) throw std::invalid_argument("clip must be > 0");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (minibatches < 1) throw std::invalid_argument("minibatches must be >= 1");
    if (!(base_lr > 0)) throw std::invalid_argument("base_lr must be > 0");
    if (!(max_grad_norm > 0)) throw std::invalid_argument("max_grad_norm must be > 0");
    if (!std::isfinite(beta) || !std::isfinite(entropy_coef) || !std::isfinite(value_coef)) {
        throw std::invalid_argument("loss coefficients must be finite");
    }
}

namespace {

std::vector<LayerSpec> policy_trunk(const Shape& obs_shape, Index hidden) {
    auto layers = models::conv_trunk(obs_shape);
    layers.push_back(LayerSpec::dense(models::conv_trunk_features(obs_shape), hidden));
    layers.push_back(LayerSpec::relu());
    return layers;
}

Tensor rows_to_tensor(const Eigen::Ref<const RowMatrix>& rows, const Shape& sample_shape) {
    if (rows.cols() != numel(sample_shape)) {
        throw ShapeError("observation width " + std::to_string(rows.cols()) + " does not match " +
                         to_string(sample_shape));
    }
    Shape shape{rows.rows()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    Vector flat(rows.size());
    Eigen::Map<RowMatrix>(flat.data(), rows.rows(), rows.cols()) = rows;
    return Tensor(std::move(shape), std::move(flat));
}

RowMatrix gather_rows(const RowMatrix& src, std::span<const Index> rows) {
    RowMatrix out(static_cast<Index>(rows.size()), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Index>(i)) = src.row(rows[i]);
    }
    return out;
}

}  // namespace

PolicyNet::PolicyNet(const Shape& obs_shape, std::uint64_t seed, Index hidden, int num_actions)
    : trunk_(obs_shape, policy_trunk(obs_shape, hidden)),
      policy_head_({hidden}, {LayerSpec::dense(hidden, num_actions)}),
      value_head_({hidden}, {LayerSpec::dense(hidden, 1)}) {
    const Scalar gain = std::sqrt(2.0);
    trunk_.initialize(mix_seed(seed, 0), gain, gain);
    policy_head_.initialize(mix_seed(seed, 1), 0.01, 0.01);
    value_head_.initialize(mix_seed(seed, 2), 1.0, 1.0);
    for (Network* net : {&trunk_, &policy_head_, &value_head_}) {
        for (auto& p : net->parameters()) params_.push_back(p);
    }
}

PolicyNet::Output PolicyNet::forward(const Tensor& obs) const {
    Tensor h = trunk_.forward(obs);
    Tensor value = value_head_.forward(h);
    return Output{policy_head_.forward(h), reshape(value, {value.dim(0)})};
}

PolicyNet::Output PolicyNet::forward(const Eigen::Ref<const RowMatrix>& obs_rows) const {
    return forward(rows_to_tensor(obs_rows, trunk_.input_shape()));
}

std::vector<NamedTensor> PolicyNet::named_parameters() const {
    std::vector<NamedTensor> out;
    const std::pair<const char*, const Network*> parts[] = {
        {"trunk.", &trunk_}, {"policy.", &policy_head_}, {"value.", &value_head_}};
    for (const auto& [prefix, net] : parts) {
        for (auto& [name, t] : net->named_parameters()) out.emplace_back(prefix + name, t);
    }
    return out;
}

void PolicyNet::load_parameters(const std::vector<NamedTensor>& named) {
    const std::pair<std::string, Network*> parts[] = {
        {"trunk.", &trunk_}, {"policy.", &policy_head_}, {"value.", &value_head_}};
    for (const auto& [prefix, net] : parts) {
        std::vector<NamedTensor> mine;
        for (const auto& [name, t] : named) {
            if (name.starts_with(prefix)) mine.emplace_back(name.substr(prefix.size()), t);
        }
        net->load_parameters(mine);
    }
}

void PolicyNet::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

std::uint64_t PolicyNet::digest() const {
    std::uint64_t h = trunk_.digest();
    for (const Network* net : {&policy_head_, &value_head_}) {
        const std::uint64_t d = net->digest();
        h = digest_bytes(&d, sizeof d, h);
    }
    return h;
}

RowMatrix action_probabilities(const Eigen::Ref<const RowMatrix>& logits) {
    RowMatrix p(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
        const Scalar mx = logits.row(i).maxCoeff();
        p.row(i) = (logits.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

RolloutBatch collect_rollout(const PolicyNet& policy, envs::VecEnv& envs, int horizon, std::mt19937_64& rng) {
    if (horizon < 1) throw std::invalid_argument("collect_rollout: horizon must be >= 1");
    const int E = envs.size();
    const Index D = envs.config().obs_size();
    RolloutBatch b;
    b.horizon = horizon;
    b.num_envs = E;
    const Index N = b.size();
    b.obs.resize(N, D);
    b.next_obs.resize(N, D);
    b.actions.resize(static_cast<std::size_t>(N));
    b.log_probs.resize(N);
    b.values.resize(N);
    b.extrinsic_rewards.resize(N);
    b.intrinsic_raw = Vector::Zero(N);
    b.intrinsic_rewards = Vector::Zero(N);
    b.dones.assign(static_cast<std::size_t>(N), 0);

    NoGradGuard no_grad;
    std::uniform_real_distribution<Scalar> uniform(0.0, 1.0);
    std::vector<int> actions(static_cast<std::size_t>(E));
    for (int t = 0; t < horizon; ++t) {
        const Index base = static_cast<Index>(t) * E;
        b.obs.middleRows(base, E) = envs.observations();
        const auto out = policy.forward(b.obs.middleRows(base, E));
        const RowMatrix probs = action_probabilities(out.logits.rows());
        for (int e = 0; e < E; ++e) {
            const Scalar u = uniform(rng);
            int a = 0;
            Scalar acc = probs(e, 0);
            while (a + 1 < probs.cols() && u >= acc) {
                acc += probs(e, ++a);
            }
            actions[static_cast<std::size_t>(e)] = a;
            b.actions[static_cast<std::size_t>(base + e)] = a;
            b.log_probs[base + e] = std::log(probs(e, a));
            b.values[base + e] = out.value[e];
        }
        const auto results = envs.step(actions);
        for (int e = 0; e < E; ++e) {
            const auto& r = results[static_cast<std::size_t>(e)];
            b.next_obs.row(base + e) = r.obs.transpose();
            b.extrinsic_rewards[base + e] = r.extrinsic_reward;
            b.dones[static_cast<std::size_t>(base + e)] = r.done ? 1 : 0;
            if (r.done) b.finished.push_back(r.info);
        }
    }
    b.bootstrap_values = policy.forward(envs.observations()).value.data();
    return b;
}

intrinsic::PreparedBatch attach_intrinsic(RolloutBatch& batch, intrinsic::CuriosityModule& curiosity,
                                          intrinsic::RewardForwardFilter& filter) {
    curiosity.update_obs_normalizer(batch.next_obs);
    intrinsic::PreparedBatch prepared = curiosity.prepare(batch.next_obs);
    batch.intrinsic_raw = curiosity.raw_reward(prepared);

    const int E = batch.num_envs;
    Vector filtered(batch.size());
    auto flags = std::make_unique<bool[]>(static_cast<std::size_t>(E));
    for (int t = 0; t < batch.horizon; ++t) {
        const Index base = static_cast<Index>(t) * E;
        for (int e = 0; e < E; ++e) flags[static_cast<std::size_t>(e)] = batch.dones[static_cast<std::size_t>(base + e)];
        filtered.segment(base, E) =
            filter.update(batch.intrinsic_raw.segment(base, E), std::span<const bool>(flags.get(), E));
    }
    curiosity.update_return_normalizer(filtered);
    batch.intrinsic_rewards = curiosity.normalize_rewards(batch.intrinsic_raw);
    return prepared;
}

RolloutBatch collect_rollout(const PolicyNet& policy, envs::VecEnv& envs, intrinsic::CuriosityModule* curiosity,
                             intrinsic::RewardForwardFilter* filter, int horizon, std::mt19937_64& rng,
                             intrinsic::PreparedBatch* prepared) {
    RolloutBatch b = collect_rollout(policy, envs, horizon, rng);
    if (curiosity) {
        if (!filter) throw std::invalid_argument("collect_rollout: curiosity needs a reward filter");
        auto p = attach_intrinsic(b, *curiosity, *filter);
        if (prepared) *prepared = std::move(p);
    }
    return b;
}

GaeResult gae(const Eigen::Ref<const RowMatrix>& rewards, const Eigen::Ref<const RowMatrix>& values,
              const Eigen::Ref<const RowMatrix>& dones, const Eigen::Ref<const Vector>& bootstrap, Scalar gamma,
              Scalar lambda) {
    const Index T = rewards.rows(), E = rewards.cols();
    if (values.rows() != T || values.cols() != E || dones.rows() != T || dones.cols() != E || bootstrap.size() != E) {
        throw ShapeError("gae: rewards, values and dones must share a (T, E) shape and bootstrap must have E entries");
    }
    GaeResult r;
    r.advantages.resize(T, E);
    Vector next_value = bootstrap;
    Vector running = Vector::Zero(E);
    for (Index t = T - 1; t >= 0; --t) {
        for (Index e = 0; e < E; ++e) {
            const Scalar keep = 1.0 - dones(t, e);
            const Scalar delta = rewards(t, e) + gamma * next_value[e] * keep - values(t, e);
            running[e] = delta + gamma * lambda * keep * running[e];
            r.advantages(t, e) = running[e];
        }
        next_value = values.row(t).transpose();
    }
    r.returns = r.advantages + values;
    return r;
}

PpoLoss ppo_loss(const PolicyNet::Output& out, std::span<const int> actions, const Vector& old_log_probs,
                 const Vector& advantages, const Vector& returns, const PpoConfig& config) {
    const Index n = out.logits.dim(0);
    if (old_log_probs.size() != n || advantages.size() != n || returns.size() != n ||
        static_cast<Index>(actions.size()) != n) {
        throw ShapeError("ppo_loss: batch arrays must have " + std::to_string(n) + " entries");
    }
    const Tensor log_p = log_softmax(out.logits);
    const Tensor ratio = exp(gather(log_p, actions) - Tensor({n}, old_log_probs));
    const Tensor adv({n}, advantages);
    const Tensor surrogate = minimum(ratio * adv, clamp(ratio, 1.0 - config.clip, 1.0 + config.clip) * adv);
    const Tensor policy_loss = mul_scalar(mean(surrogate), -1.0);
    const Tensor value_loss = mse(out.value, Tensor({n}, returns));
    const Tensor entropy = mul_scalar(mean(row_sum(exp(log_p) * log_p)), -1.0);

    PpoLoss l;
    l.total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy;
    l.policy_loss = policy_loss.item();
    l.value_loss = value_loss.item();
    l.entropy = entropy.item();
    const auto& rv = ratio.data().array();
    l.clip_fraction = ((rv - 1.0).abs() > config.clip).cast<Scalar>().mean();
    if (!std::isfinite(l.total.item())) {
        throw NumericError("ppo_loss: non-finite loss");
    }
    return l;
}

PpoStats ppo_update(PolicyNet& policy, AdamState& optimizer, const RolloutBatch& batch, const GaeResult& targets,
                    const PpoConfig& config, std::mt19937_64& rng, const MinibatchHook& hook) {
    config.validate();
    const Index N = batch.size();
    if (targets.advantages.size() != N || targets.returns.size() != N) {
        throw ShapeError("ppo_update: targets do not match the batch");
    }
    // (T, E) row-major storage is already in t * E + e order.
    Vector adv = Eigen::Map<const Vector>(targets.advantages.data(), N);
    const Vector ret = Eigen::Map<const Vector>(targets.returns.data(), N);
    const Scalar mu = adv.mean();
    const Scalar sd = std::sqrt((adv.array() - mu).square().mean());
    adv = (adv.array() - mu) / std::max(sd, 1e-8);

    std::vector<Index> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), Index{0});
    const Index mb = std::max<Index>(1, N / config.minibatches);

    PpoStats stats;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (Index start = 0; start < N; start += mb) {
            const Index count = std::min(mb, N - start);
            if (count < mb && start > 0) break;  // drop a ragged tail
            const std::span<const Index> rows(order.data() + start, static_cast<std::size_t>(count));
            std::vector<int> acts(rows.size());
            Vector old_lp(count), a(count), r(count);
            for (Index i = 0; i < count; ++i) {
                const Index k = rows[static_cast<std::size_t>(i)];
                acts[static_cast<std::size_t>(i)] = batch.actions[static_cast<std::size_t>(k)];
                old_lp[i] = batch.log_probs[k];
                a[i] = adv[k];
                r[i] = ret[k];
            }
            policy.zero_grad();
            const auto out = policy.forward(gather_rows(batch.obs, rows));
            const PpoLoss loss = ppo_loss(out, acts, old_lp, a, r, config);
            loss.total.backward();
            clip_grad_norm(policy.parameters(), config.max_grad_norm);
            adam_step(optimizer, policy.parameters());
            if (hook) hook(rows);

            stats.policy_loss += loss.policy_loss;
            stats.value_loss += loss.value_loss;
            stats.entropy += loss.entropy;
            stats.clip_fraction += loss.clip_fraction;
            ++stats.updates;
        }
    }
    if (stats.updates > 0) {
        stats.policy_loss /= stats.updates;
        stats.value_loss /= stats.updates;
        stats.entropy /= stats.updates;
        stats.clip_fraction /= stats.updates;
    }
    return stats;
}

}  // namespace curio::agent
