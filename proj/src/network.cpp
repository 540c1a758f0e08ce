#include "curio/network.hpp"

#include "curio/ops.hpp"
#include "curio/optim.hpp"

namespace curio {

const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::tanh: return "tanh";
        case LayerKind::flatten: return "flatten";
        case LayerKind::spatial_mean_pool: return "spatial_mean_pool";
        case LayerKind::instance_norm: return "instance_norm";
    }
    return "unknown";
}

namespace {

std::string layer_error(std::size_t i, const LayerSpec& spec, const std::string& what) {
    return "layer " + std::to_string(i) + " (" + to_string(spec.kind) + "): " + what;
}

Shape infer_output(std::size_t i, const LayerSpec& spec, const Shape& in) {
    switch (spec.kind) {
        case LayerKind::dense:
            if (in.size() != 1 || in[0] != spec.in) {
                throw ShapeError(layer_error(i, spec, "expects " + std::to_string(spec.in) +
                                                          " features, upstream gives " + to_string(in)));
            }
            return {spec.out};
        case LayerKind::conv2d: {
            if (in.size() != 3 || in[0] != spec.in) {
                throw ShapeError(layer_error(i, spec, "expects " + std::to_string(spec.in) +
                                                          " channels, upstream gives " + to_string(in)));
            }
            if (spec.kernel < 1 || spec.stride < 1 || spec.kernel > in[1] || spec.kernel > in[2]) {
                throw ShapeError(layer_error(i, spec, "kernel " + std::to_string(spec.kernel) +
                                                          " exceeds spatial extent " + to_string(in)));
            }
            return {spec.out, (in[1] - spec.kernel) / spec.stride + 1, (in[2] - spec.kernel) / spec.stride + 1};
        }
        case LayerKind::relu:
        case LayerKind::tanh:
            return in;
        case LayerKind::flatten:
            return {numel(in)};
        case LayerKind::spatial_mean_pool: {
            if (in.size() != 3) {
                throw ShapeError(layer_error(i, spec, "needs a (C, H, W) input, got " + to_string(in)));
            }
            const Index w = spec.window == 0 ? in[1] : spec.window;
            const Index wx = spec.window == 0 ? in[2] : spec.window;
            if (w < 1 || in[1] % w != 0 || in[2] % wx != 0) {
                throw ShapeError(layer_error(i, spec, "window does not tile " + to_string(in)));
            }
            return {in[0], in[1] / w, in[2] / wx};
        }
        case LayerKind::instance_norm:
            if (in.size() != 3) {
                throw ShapeError(layer_error(i, spec, "needs a (C, H, W) input, got " + to_string(in)));
            }
            return in;
    }
    throw ShapeError(layer_error(i, spec, "unknown layer kind"));
}

}  // namespace

Network::Network(Shape sample_shape, std::vector<LayerSpec> layers)
    : sample_shape_(std::move(sample_shape)), layers_(std::move(layers)) {
    if (layers_.empty()) {
        throw ShapeError("network needs at least one layer");
    }
    Shape cur = sample_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& spec = layers_[i];
        cur = infer_output(i, spec, cur);
        shapes_.push_back(cur);
        if (spec.kind == LayerKind::dense) {
            param_offset_.push_back(static_cast<int>(params_.size()));
            params_.push_back(Tensor::zeros({spec.out, spec.in}, true));
            params_.push_back(Tensor::zeros({spec.out}, true));
        } else if (spec.kind == LayerKind::conv2d) {
            param_offset_.push_back(static_cast<int>(params_.size()));
            params_.push_back(Tensor::zeros({spec.out, spec.in, spec.kernel, spec.kernel}, true));
            params_.push_back(Tensor::zeros({spec.out}, true));
        } else {
            param_offset_.push_back(-1);
        }
    }
}

void Network::initialize(std::uint64_t seed, Scalar hidden_gain, Scalar output_gain) {
    if (frozen_) {
        throw FrozenError("initialize: network is frozen");
    }
    int last = -1;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (param_offset_[i] >= 0) {
            last = static_cast<int>(i);
        }
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const int off = param_offset_[i];
        if (off < 0) {
            continue;
        }
        const Scalar gain = static_cast<int>(i) == last ? output_gain : hidden_gain;
        Tensor w = orthogonal_init(params_[off].shape(), gain, mix_seed(seed, i));
        params_[off].mutable_data() = w.data();
        params_[off + 1].mutable_data().setZero();
    }
}

Tensor Network::forward(const Tensor& input) const {
    Shape expected{0};
    expected.insert(expected.end(), sample_shape_.begin(), sample_shape_.end());
    if (input.rank() != expected.size() ||
        !std::equal(sample_shape_.begin(), sample_shape_.end(), input.shape().begin() + 1)) {
        throw ShapeError("layer 0 (" + std::string(to_string(layers_[0].kind)) + "): input shape " +
                         to_string(input.shape()) + " does not match (N, " +
                         to_string(sample_shape_).substr(1));
    }
    Tensor x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& spec = layers_[i];
        const int off = param_offset_[i];
        switch (spec.kind) {
            case LayerKind::dense: x = linear(x, params_[off], params_[off + 1]); break;
            case LayerKind::conv2d: x = conv2d(x, params_[off], params_[off + 1], spec.stride); break;
            case LayerKind::relu: x = relu(x); break;
            case LayerKind::tanh: x = curio::tanh(x); break;
            case LayerKind::flatten: x = flatten(x); break;
            case LayerKind::spatial_mean_pool: x = spatial_mean_pool(x, spec.window); break;
            case LayerKind::instance_norm: x = instance_norm(x); break;
        }
    }
    return x;
}

std::vector<NamedTensor> Network::named_parameters() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const int off = param_offset_[i];
        if (off >= 0) {
            out.emplace_back("layer" + std::to_string(i) + ".weight", params_[off]);
            out.emplace_back("layer" + std::to_string(i) + ".bias", params_[off + 1]);
        }
    }
    return out;
}

Index Network::parameter_count() const {
    Index n = 0;
    for (const auto& p : params_) {
        n += p.size();
    }
    return n;
}

void Network::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

void Network::freeze() {
    frozen_ = true;
    for (auto& p : params_) {
        p.freeze();
    }
}

Network Network::clone() const {
    Network copy = *this;
    for (auto& p : copy.params_) {
        p = p.clone();
    }
    return copy;
}

void Network::copy_parameters_from(const Network& other) {
    if (frozen_) {
        throw FrozenError("copy_parameters_from: network is frozen");
    }
    if (other.params_.size() != params_.size()) {
        throw ShapeError("copy_parameters_from: architectures differ");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (other.params_[i].shape() != params_[i].shape()) {
            throw ShapeError("copy_parameters_from: parameter " + std::to_string(i) + " shape differs");
        }
        params_[i].mutable_data() = other.params_[i].data();
    }
}

void Network::load_parameters(const std::vector<NamedTensor>& named) {
    if (frozen_) {
        throw FrozenError("load_parameters: network is frozen");
    }
    auto mine = named_parameters();
    if (mine.size() != named.size()) {
        throw ShapeError("load_parameters: expected " + std::to_string(mine.size()) + " tensors, got " +
                         std::to_string(named.size()));
    }
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (mine[i].first != named[i].first || mine[i].second.shape() != named[i].second.shape()) {
            throw ShapeError("load_parameters: mismatch at " + mine[i].first + " vs " + named[i].first + " " +
                             to_string(named[i].second.shape()));
        }
        params_[i].mutable_data() = named[i].second.data();
    }
}

std::uint64_t Network::digest() const {
    std::uint64_t h = 14695981039346656037ULL;
    for (const auto& p : params_) {
        const std::uint64_t d = curio::digest(p);
        h = digest_bytes(&d, sizeof d, h);
    }
    return h;
}

}  // namespace curio
