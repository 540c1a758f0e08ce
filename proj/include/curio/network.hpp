#pragma once

#include "curio/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace curio {

enum class LayerKind { dense, conv2d, relu, tanh, flatten, spatial_mean_pool, instance_norm };

const char* to_string(LayerKind kind);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    Index in = 0;       // dense in-features / conv in-channels
    Index out = 0;      // dense out-features / conv out-channels
    Index kernel = 0;   // conv2d
    Index stride = 1;   // conv2d
    Index window = 0;   // spatial_mean_pool, 0 = global

    static LayerSpec dense(Index in, Index out) { return {LayerKind::dense, in, out}; }
    static LayerSpec conv2d(Index in_channels, Index out_channels, Index kernel, Index stride) {
        return {LayerKind::conv2d, in_channels, out_channels, kernel, stride};
    }
    static LayerSpec relu() { return {LayerKind::relu}; }
    static LayerSpec tanh() { return {LayerKind::tanh}; }
    static LayerSpec flatten() { return {LayerKind::flatten}; }
    static LayerSpec spatial_mean_pool(Index window) {
        LayerSpec s{LayerKind::spatial_mean_pool};
        s.window = window;
        return s;
    }
    static LayerSpec instance_norm() { return {LayerKind::instance_norm}; }

    bool has_parameters() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Feed-forward stack of layers with owned parameters. The per-sample input
/// shape is fixed at construction and every layer's output shape is checked
/// up front.
class Network {
public:
    Network() = default;
    Network(Shape sample_shape, std::vector<LayerSpec> layers);

    /// Orthogonal weights (hidden layers scaled by hidden_gain, the last
    /// parameterised layer by output_gain), zero biases.
    void initialize(std::uint64_t seed, Scalar hidden_gain, Scalar output_gain);

    /// input is (N, sample_shape...). Throws ShapeError naming the layer index.
    Tensor forward(const Tensor& input) const;

    const Shape& input_shape() const { return sample_shape_; }
    const Shape& output_shape() const { return shapes_.back(); }
    const std::vector<LayerSpec>& layers() const { return layers_; }

    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<Tensor>& parameters() const { return params_; }
    std::vector<NamedTensor> named_parameters() const;
    Index parameter_count() const;

    void zero_grad();
    void freeze();
    bool frozen() const { return frozen_; }

    /// Deep copy with independent parameter storage.
    Network clone() const;
    /// Overwrites parameter values; throws FrozenError when frozen.
    void copy_parameters_from(const Network& other);
    void load_parameters(const std::vector<NamedTensor>& named);

    std::uint64_t digest() const;

private:
    Shape sample_shape_;
    std::vector<LayerSpec> layers_;
    std::vector<Shape> shapes_;           // per-sample output shape after each layer
    std::vector<int> param_offset_;       // index into params_ of each layer's weight, -1 if none
    std::vector<Tensor> params_;
    bool frozen_ = false;
};

}  // namespace curio
