#include "curio/models.hpp"

namespace curio::models {

std::vector<LayerSpec> conv_trunk(const Shape& obs_shape, TrunkSizes sizes) {
    if (obs_shape.size() != 3) {
        throw ShapeError("conv_trunk: observation shape must be (S, H, W), got " + to_string(obs_shape));
    }
    return {
        LayerSpec::conv2d(obs_shape[0], sizes.conv1, 8, 4), LayerSpec::relu(),
        LayerSpec::conv2d(sizes.conv1, sizes.conv2, 4, 2),  LayerSpec::relu(),
        LayerSpec::conv2d(sizes.conv2, sizes.conv3, 3, 1),  LayerSpec::relu(),
        LayerSpec::flatten(),
    };
}

Index conv_trunk_features(const Shape& obs_shape, TrunkSizes sizes) {
    return Network(obs_shape, conv_trunk(obs_shape, sizes)).output_shape()[0];
}

Network rnd_network(const Shape& obs_shape, Index embedding_dim) {
    auto layers = conv_trunk(obs_shape);
    layers.push_back(LayerSpec::dense(conv_trunk_features(obs_shape), embedding_dim));
    return Network(obs_shape, std::move(layers));
}

Network neck_network(const Shape& feature_shape, Index embedding_dim, Index hidden) {
    if (feature_shape.size() != 3) {
        throw ShapeError("neck_network: feature shape must be (C, h, w), got " + to_string(feature_shape));
    }
    const Index window = feature_shape[1] % 2 == 0 && feature_shape[2] % 2 == 0 ? 2 : 1;
    const Index pooled = feature_shape[0] * (feature_shape[1] / window) * (feature_shape[2] / window);
    return Network(feature_shape, {
                                      LayerSpec::spatial_mean_pool(window),
                                      LayerSpec::instance_norm(),
                                      LayerSpec::flatten(),
                                      LayerSpec::dense(pooled, hidden),
                                      LayerSpec::relu(),
                                      LayerSpec::dense(hidden, embedding_dim),
                                  });
}

}  // namespace curio::models
