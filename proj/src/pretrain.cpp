#include "curio/pretrain.hpp"

#include "curio/checkpoint.hpp"
#include "curio/models.hpp"
#include "curio/ops.hpp"
#include "curio/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <random>

namespace curio::pretrain {

using envs::EnvConfig;

Index RolloutStore::frame_count() const {
    Index n = 0;
    for (const auto& e : episodes_) {
        n += static_cast<Index>(e.frames.size());
    }
    return n;
}

envs::Observation RolloutStore::observation(std::size_t episode, std::size_t t) const {
    const auto& frames = episodes_.at(episode).frames;
    if (t >= frames.size()) {
        throw std::out_of_range("RolloutStore: step " + std::to_string(t) + " beyond episode end");
    }
    const Index fp = env_.frame_pixels();
    envs::Observation obs(env_.obs_size());
    for (int s = 0; s < env_.stack; ++s) {
        const long src = static_cast<long>(t) - (env_.stack - 1 - s);
        obs.segment(s * fp, fp) = frames[static_cast<std::size_t>(std::max(0L, src))];
    }
    return obs;
}

RowMatrix RolloutStore::observations(const std::vector<std::pair<std::size_t, std::size_t>>& at) const {
    RowMatrix out(static_cast<Index>(at.size()), env_.obs_size());
    for (std::size_t i = 0; i < at.size(); ++i) {
        out.row(static_cast<Index>(i)) = observation(at[i].first, at[i].second).transpose();
    }
    return out;
}

std::uint64_t RolloutStore::digest() const {
    std::uint64_t h = 14695981039346656037ULL;
    for (const auto& e : episodes_) {
        const std::uint64_t len = e.frames.size();
        h = digest_bytes(&len, sizeof len, h);
        for (const auto& f : e.frames) {
            h = digest_bytes(f.data(), sizeof(Scalar) * static_cast<std::size_t>(f.size()), h);
        }
    }
    return h;
}

RolloutStore collect_pretrain_rollouts(const EnvConfig& env, int num_envs, int n_steps, std::uint64_t seed,
                                       const TemporalConfig& temporal) {
    if (n_steps < 10 * temporal.k_far) {
        throw std::invalid_argument("collect_pretrain_rollouts: n_steps " + std::to_string(n_steps) +
                                    " is below 10 * k_far = " + std::to_string(10 * temporal.k_far));
    }
    auto seeder = [seed](int e, int episode) {
        return mix_seed(mix_seed(seed, static_cast<std::uint64_t>(e)), static_cast<std::uint64_t>(episode));
    };
    envs::VecEnv vec(env, num_envs, mix_seed(seed, 0xc011u), seeder);
    RolloutStore store(env);
    std::vector<std::size_t> open(num_envs);
    for (int e = 0; e < num_envs; ++e) {
        open[e] = store.episodes().size();
        store.episodes().emplace_back();
    }
    std::mt19937_64 rng(mix_seed(seed, 0xac7u));
    std::uniform_int_distribution<int> pick(0, envs::kNumActions - 1);
    const Index fp = env.frame_pixels();
    std::vector<int> actions(num_envs);
    for (int t = 0; t < n_steps; ++t) {
        const RowMatrix obs = vec.observations();
        for (int e = 0; e < num_envs; ++e) {
            store.episodes()[open[e]].frames.push_back(obs.row(e).tail(fp).transpose());
            actions[e] = pick(rng);
        }
        const auto results = vec.step(actions);
        for (int e = 0; e < num_envs; ++e) {
            if (results[e].done && t + 1 < n_steps) {
                open[e] = store.episodes().size();
                store.episodes().emplace_back();
            }
        }
    }
    std::erase_if(store.episodes(), [](const auto& ep) { return ep.frames.empty(); });
    return store;
}

Backbone::Backbone(const Shape& obs_shape, Shape feature_shape) : feature_shape_(std::move(feature_shape)) {
    auto layers = models::conv_trunk(obs_shape);
    layers.push_back(LayerSpec::dense(models::conv_trunk_features(obs_shape), numel(feature_shape_)));
    net_ = Network(obs_shape, std::move(layers));
}

void Backbone::initialize(std::uint64_t seed) {
    net_.initialize(seed, std::sqrt(2.0), 1.0);
}

Tensor Backbone::features(const Tensor& obs) const {
    Tensor flat = net_.forward(obs);
    Shape shape{obs.dim(0)};
    shape.insert(shape.end(), feature_shape_.begin(), feature_shape_.end());
    return reshape(flat, std::move(shape));
}

Tensor Backbone::pooled(const Tensor& obs) const {
    return flatten(spatial_mean_pool(features(obs), 0));
}

RowMatrix Backbone::embed(const Eigen::Ref<const RowMatrix>& obs_rows) const {
    NoGradGuard no_grad;
    constexpr Index kChunk = 256;
    RowMatrix out(obs_rows.rows(), feature_shape_[0]);
    for (Index start = 0; start < obs_rows.rows(); start += kChunk) {
        const Index n = std::min(kChunk, obs_rows.rows() - start);
        Shape shape{n};
        shape.insert(shape.end(), obs_shape().begin(), obs_shape().end());
        Tensor obs(shape, Eigen::Map<const Vector>(obs_rows.middleRows(start, n).eval().data(), n * obs_rows.cols()));
        out.middleRows(start, n) = pooled(obs).rows();
    }
    return out;
}

namespace {

struct Triplet {
    std::pair<std::size_t, std::size_t> anchor, positive, negative;
};

// Anchors that have a k_near successor and at least one frame k_far away.
std::vector<std::pair<std::size_t, std::size_t>> anchor_candidates(const RolloutStore& store,
                                                                   const TemporalConfig& tc) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t e = 0; e < store.episodes().size(); ++e) {
        const long len = static_cast<long>(store.episodes()[e].frames.size());
        for (long t = 0; t + tc.k_near < len; ++t) {
            if (t + tc.k_far < len || t - tc.k_far >= 0) {
                out.emplace_back(e, static_cast<std::size_t>(t));
            }
        }
    }
    return out;
}

Tensor obs_tensor(const RolloutStore& store, const std::vector<std::pair<std::size_t, std::size_t>>& at) {
    RowMatrix rows = store.observations(at);
    Shape shape{rows.rows()};
    const auto os = store.env().obs_shape();
    shape.insert(shape.end(), os.begin(), os.end());
    return Tensor(shape, Eigen::Map<const Vector>(rows.data(), rows.size()));
}

Tensor l2_distance(const Tensor& a, const Tensor& b) {
    return curio::sqrt(add_scalar(row_sum(square(sub(a, b))), 1e-12));
}

}  // namespace

PretrainResult pretrain_backbone(const RolloutStore& store, int epochs, std::uint64_t seed,
                                 const TemporalConfig& tc) {
    if (store.frame_count() == 0) {
        throw std::invalid_argument("pretrain_backbone: empty rollout store");
    }
    if (tc.batch_size < 2) {
        throw std::invalid_argument("pretrain_backbone: batch size must be at least 2");
    }
    auto anchors = anchor_candidates(store, tc);
    if (anchors.size() < 2) {
        throw std::invalid_argument("pretrain_backbone: store has no usable anchor/negative pairs");
    }
    PretrainResult result{Backbone(store.env().obs_shape()), {}};
    Backbone& backbone = result.backbone;
    backbone.initialize(seed);
    AdamState adam(tc.lr);
    std::mt19937_64 rng(mix_seed(seed, 0x7e3u));

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(anchors.begin(), anchors.end(), rng);
        for (std::size_t start = 0; start + 2 <= anchors.size(); start += tc.batch_size) {
            const std::size_t n = std::min<std::size_t>(tc.batch_size, anchors.size() - start);
            std::vector<std::pair<std::size_t, std::size_t>> at;
            at.reserve(3 * n);
            for (std::size_t i = 0; i < n; ++i) at.push_back(anchors[start + i]);
            for (std::size_t i = 0; i < n; ++i) at.emplace_back(anchors[start + i].first, anchors[start + i].second + tc.k_near);
            for (std::size_t i = 0; i < n; ++i) {
                const auto [e, t] = anchors[start + i];
                const long len = static_cast<long>(store.episodes()[e].frames.size());
                const long ti = static_cast<long>(t);
                // Valid negatives: [0, t - k_far] and [t + k_far, len).
                const long below = std::max(0L, ti - tc.k_far + 1);
                const long above = std::max(0L, len - (ti + tc.k_far));
                std::uniform_int_distribution<long> pick(0, below + above - 1);
                const long r = pick(rng);
                const long tn = r < below ? r : ti + tc.k_far + (r - below);
                at.emplace_back(e, static_cast<std::size_t>(tn));
            }
            const Index ni = static_cast<Index>(n);
            Tensor emb = backbone.pooled(obs_tensor(store, at));
            Tensor a = slice_rows(emb, 0, ni), p = slice_rows(emb, ni, ni), neg = slice_rows(emb, 2 * ni, ni);
            Tensor loss = mean(relu(add_scalar(sub(l2_distance(a, p), l2_distance(a, neg)), tc.margin)));
            const Scalar value = loss.item();
            if (!std::isfinite(value)) {
                throw NumericError("pretrain_backbone: loss diverged");
            }
            result.loss_series.push_back(value);
            backbone.network().zero_grad();
            if (loss.requires_grad()) {
                loss.backward();
            }
            adam_step(adam, backbone.parameters());
        }
    }
    backbone.freeze();
    return result;
}

Scalar temporal_coherence_ratio(const Embedder& embed, const RolloutStore& store, const TemporalConfig& tc) {
    const auto anchors = anchor_candidates(store, tc);
    if (anchors.empty()) {
        throw std::invalid_argument("temporal_coherence_ratio: no anchors with both near and far partners");
    }
    // Embed every stored observation once, in chunks.
    std::vector<std::size_t> offset(store.episodes().size() + 1, 0);
    for (std::size_t e = 0; e < store.episodes().size(); ++e) {
        offset[e + 1] = offset[e] + store.episodes()[e].frames.size();
    }
    RowMatrix all;
    constexpr std::size_t kChunk = 512;
    std::vector<std::pair<std::size_t, std::size_t>> at;
    std::vector<RowMatrix> parts;
    for (std::size_t e = 0; e < store.episodes().size(); ++e) {
        for (std::size_t t = 0; t < store.episodes()[e].frames.size(); ++t) {
            at.emplace_back(e, t);
            if (at.size() == kChunk) {
                parts.push_back(embed(store.observations(at)));
                at.clear();
            }
        }
    }
    if (!at.empty()) {
        parts.push_back(embed(store.observations(at)));
    }
    Index rows = 0;
    for (const auto& p : parts) rows += p.rows();
    all.resize(rows, parts.front().cols());
    Index r = 0;
    for (const auto& p : parts) {
        all.middleRows(r, p.rows()) = p;
        r += p.rows();
    }

    Scalar near_sum = 0, far_sum = 0;
    for (const auto& [e, t] : anchors) {
        const long len = static_cast<long>(store.episodes()[e].frames.size());
        const long ti = static_cast<long>(t);
        const long far = ti + tc.k_far < len ? ti + tc.k_far : ti - tc.k_far;
        const auto row = [&](long step) { return all.row(static_cast<Index>(offset[e] + static_cast<std::size_t>(step))); };
        near_sum += (row(ti) - row(ti + tc.k_near)).norm();
        far_sum += (row(ti) - row(far)).norm();
    }
    if (far_sum == 0.0) {
        throw std::domain_error("temporal_coherence_ratio: undefined, all far-pair distances are zero");
    }
    return near_sum / far_sum;
}

Scalar temporal_coherence_ratio(const Backbone& backbone, const RolloutStore& store, const TemporalConfig& tc) {
    return temporal_coherence_ratio([&](const Eigen::Ref<const RowMatrix>& rows) { return backbone.embed(rows); },
                                    store, tc);
}

void save_backbone(const std::filesystem::path& path, const Backbone& backbone, const TemporalConfig& tc,
                   int epochs, std::uint64_t seed, std::uint64_t data_digest, const std::vector<Scalar>& losses) {
    save_network(path, backbone.network());
    nlohmann::json meta;
    meta["objective"] = "triplet_margin_l2_mean_pooled";
    meta["k_near"] = tc.k_near;
    meta["k_far"] = tc.k_far;
    meta["margin"] = tc.margin;
    meta["batch_size"] = tc.batch_size;
    meta["lr"] = tc.lr;
    meta["epochs"] = epochs;
    meta["seed"] = seed;
    meta["data_digest"] = std::to_string(data_digest);
    meta["feature_shape"] = backbone.feature_shape();
    meta["obs_shape"] = backbone.obs_shape();
    meta["parameter_digest"] = std::to_string(backbone.digest());
    meta["loss_series"] = losses;
    std::ofstream(path.string() + ".json") << meta.dump(2) << '\n';
}

Backbone load_backbone(const std::filesystem::path& path, const Shape& obs_shape) {
    Shape feature_shape{64, 4, 4};
    std::ifstream sidecar(path.string() + ".json");
    if (sidecar) {
        const auto meta = nlohmann::json::parse(sidecar);
        feature_shape = meta.at("feature_shape").get<Shape>();
    }
    Backbone backbone(obs_shape, feature_shape);
    load_network(path, backbone.network());
    backbone.freeze();
    return backbone;
}

}  // namespace curio::pretrain
