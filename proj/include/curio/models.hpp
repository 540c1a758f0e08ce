#pragma once

#include "curio/network.hpp"

// Desk-scale architectures shared by the curiosity modules, the backbone and
// the policy. All take (S, H, W) observations.

namespace curio::models {

struct TrunkSizes {
    Index conv1 = 16;
    Index conv2 = 32;
    Index conv3 = 64;
};

/// Three strided convolutions with relu, flattened: the RND-style CNN stack.
std::vector<LayerSpec> conv_trunk(const Shape& obs_shape, TrunkSizes sizes = {});

/// Feature count at the end of conv_trunk for obs_shape.
Index conv_trunk_features(const Shape& obs_shape, TrunkSizes sizes = {});

/// RND target/predictor: conv trunk followed by a linear map to embedding_dim.
Network rnd_network(const Shape& obs_shape, Index embedding_dim);

/// Neck over a (C, h, w) feature map: 2x2 spatial mean pool, instance norm,
/// flatten, dense -> relu -> dense to embedding_dim.
Network neck_network(const Shape& feature_shape, Index embedding_dim, Index hidden = 128);

}  // namespace curio::models
