#include "curio/intrinsic.hpp"

#include "curio/models.hpp"
#include "curio/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace curio::intrinsic {

Variant parse_variant(const std::string& name) {
    if (name == "rnd") return Variant::rnd;
    if (name == "rnd-lr" || name == "rnd_lr") return Variant::rnd_lr;
    if (name == "prend") return Variant::prend;
    throw std::invalid_argument("unknown curiosity variant '" + name + "'");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::rnd: return "rnd";
        case Variant::rnd_lr: return "rnd_lr";
        case Variant::prend: return "prend";
    }
    return "?";
}

Scalar default_lr_multiplier(Variant v) {
    return v == Variant::rnd_lr ? 0.01 : 1.0;
}

CuriosityModule CuriosityModule::build(Variant variant, std::uint64_t seed, const Shape& obs_shape,
                                       const CuriosityConfig& config,
                                       std::shared_ptr<const pretrain::Backbone> backbone) {
    CuriosityModule m;
    m.variant_ = variant;
    m.obs_shape_ = obs_shape;
    m.embedding_dim_ = config.embedding_dim;
    m.obs_clip_ = config.obs_clip;
    m.optimizer_ = AdamState(config.base_lr * config.lr_multiplier.value_or(default_lr_multiplier(variant)));
    m.obs_rms_ = RunningMeanStd(numel(obs_shape));
    m.ret_rms_ = RunningMeanStd(1);

    const Scalar gain = std::sqrt(2.0);
    if (variant == Variant::prend) {
        if (!backbone) {
            throw std::invalid_argument("prend needs a pre-trained backbone");
        }
        if (!backbone->frozen()) {
            throw std::invalid_argument("prend needs a frozen backbone");
        }
        if (backbone->obs_shape() != obs_shape) {
            throw ShapeError("backbone expects observations " + curio::to_string(backbone->obs_shape()) + ", env gives " +
                             curio::to_string(obs_shape));
        }
        m.backbone_ = std::move(backbone);
        m.target_ = models::neck_network(m.backbone_->feature_shape(), config.embedding_dim, config.neck_hidden);
        m.predictor_ = models::neck_network(m.backbone_->feature_shape(), config.embedding_dim, config.neck_hidden);
    } else {
        if (backbone) {
            throw std::invalid_argument(to_string(variant) + " does not take a backbone");
        }
        m.target_ = models::rnd_network(obs_shape, config.embedding_dim);
        m.predictor_ = models::rnd_network(obs_shape, config.embedding_dim);
    }
    m.target_.initialize(seed + 1, gain, gain);
    m.predictor_.initialize(seed + 2, gain, gain);
    m.target_.freeze();
    return m;
}

Tensor CuriosityModule::obs_tensor(const Eigen::Ref<const RowMatrix>& obs) const {
    if (obs.cols() != numel(obs_shape_)) {
        throw ShapeError("curiosity: observation width " + std::to_string(obs.cols()) + " does not match " +
                         curio::to_string(obs_shape_));
    }
    Shape shape{obs.rows()};
    shape.insert(shape.end(), obs_shape_.begin(), obs_shape_.end());
    if (variant_ == Variant::prend) {
        return Tensor(shape, Eigen::Map<const Vector>(RowMatrix(obs).data(), obs.size()));
    }
    if (obs_rms_.count() < 1) {
        throw std::logic_error("curiosity: observation normaliser has no samples yet");
    }
    RowMatrix normalized = obs_rms_.normalize(obs, obs_clip_);
    return Tensor(shape, Eigen::Map<const Vector>(normalized.data(), normalized.size()));
}

PreparedBatch CuriosityModule::prepare(const Eigen::Ref<const RowMatrix>& obs) const {
    NoGradGuard no_grad;
    Tensor input = obs_tensor(obs);
    if (variant_ == Variant::prend) {
        input = backbone_->features(input).detach();
    }
    return PreparedBatch{input, RowMatrix(target_.forward(input).rows())};
}

Vector CuriosityModule::raw_reward(const PreparedBatch& batch) const {
    NoGradGuard no_grad;
    const RowMatrix pred = predictor_.forward(batch.predictor_input).rows();
    return (pred - batch.target_embedding).array().square().rowwise().mean();
}

Vector CuriosityModule::normalize_rewards(const Vector& raw) const {
    if (ret_rms_.count() > 1) {
        return raw / std::sqrt(ret_rms_.var()[0] + 1e-8);
    }
    return raw;
}

IntrinsicRewards CuriosityModule::intrinsic_reward(const Eigen::Ref<const RowMatrix>& obs) const {
    IntrinsicRewards r;
    r.raw = raw_reward(prepare(obs));
    r.normalized = normalize_rewards(r.raw);
    return r;
}

Scalar CuriosityModule::fit(const PreparedBatch& batch, std::span<const Index> rows) {
    Tensor input = batch.predictor_input;
    RowMatrix target = batch.target_embedding;
    if (!rows.empty()) {
        const Index width = input.size() / input.dim(0);
        Vector in(static_cast<Index>(rows.size()) * width);
        target.resize(static_cast<Index>(rows.size()), batch.target_embedding.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto r = rows[i];
            in.segment(static_cast<Index>(i) * width, width) = batch.predictor_input.data().segment(r * width, width);
            target.row(static_cast<Index>(i)) = batch.target_embedding.row(r);
        }
        Shape shape = input.shape();
        shape[0] = static_cast<Index>(rows.size());
        input = Tensor(shape, std::move(in));
    }
    predictor_.zero_grad();
    Tensor loss = mse(predictor_.forward(input), Tensor::from_rows(target));
    const Scalar value = loss.item();
    if (!std::isfinite(value)) {
        throw NumericError("update_predictor: non-finite loss");
    }
    loss.backward();
    adam_step(optimizer_, predictor_.parameters());
    return value;
}

Scalar CuriosityModule::update_predictor(const Eigen::Ref<const RowMatrix>& obs) {
    return fit(prepare(obs));
}

void CuriosityModule::update_obs_normalizer(const Eigen::Ref<const RowMatrix>& obs) {
    obs_rms_.update(obs);
}

void CuriosityModule::update_return_normalizer(const Eigen::Ref<const Vector>& intrinsic_returns) {
    ret_rms_.update_scalar(intrinsic_returns);
}

void CuriosityModule::update_normalizers(const Eigen::Ref<const RowMatrix>& obs,
                                         const Eigen::Ref<const Vector>& intrinsic_returns) {
    update_obs_normalizer(obs);
    update_return_normalizer(intrinsic_returns);
}

std::uint64_t CuriosityModule::target_digest() const {
    std::uint64_t h = target_.digest();
    if (backbone_) {
        const std::uint64_t b = backbone_->digest();
        h = digest_bytes(&b, sizeof b, h);
    }
    return h;
}

RewardForwardFilter::RewardForwardFilter(int num_envs, Scalar gamma, bool episodic)
    : returns_(Vector::Zero(num_envs)), gamma_(gamma), episodic_(episodic) {}

Vector RewardForwardFilter::update(const Eigen::Ref<const Vector>& rewards, std::span<const bool> dones) {
    if (rewards.size() != returns_.size() || dones.size() != static_cast<std::size_t>(returns_.size())) {
        throw ShapeError("RewardForwardFilter: expected " + std::to_string(returns_.size()) + " envs");
    }
    returns_ = returns_ * gamma_ + rewards;
    Vector out = returns_;
    if (episodic_) {
        for (Index i = 0; i < returns_.size(); ++i) {
            if (dones[static_cast<std::size_t>(i)]) {
                returns_[i] = 0;
            }
        }
    }
    return out;
}

}  // namespace curio::intrinsic
