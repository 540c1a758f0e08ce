#pragma once

#include "curio/tensor.hpp"

namespace curio {

/// Per-element running mean and population variance. Batches are folded in
/// with the parallel (Chan et al.) merge, so splitting a batch in two and
/// updating twice gives the same result as one combined update.
class RunningMeanStd {
public:
    explicit RunningMeanStd(Index dim = 1);

    /// Rows are samples, columns elements.
    void update(const Eigen::Ref<const RowMatrix>& batch);
    /// Convenience for dim == 1: each entry is a sample.
    void update_scalar(const Eigen::Ref<const Vector>& samples);
    void merge(Scalar batch_count, const Vector& batch_mean, const Vector& batch_var);

    Scalar count() const { return count_; }
    Index dim() const { return mean_.size(); }
    const Vector& mean() const { return mean_; }
    const Vector& var() const { return var_; }
    Vector stddev(Scalar eps = 0.0) const { return (var_.array() + eps).sqrt(); }

    /// (x - mean) / sqrt(var + eps) row-wise, clipped to [-clip, clip].
    RowMatrix normalize(const Eigen::Ref<const RowMatrix>& batch, Scalar clip, Scalar eps = 1e-8) const;

private:
    Scalar count_ = 0;
    Vector mean_;
    Vector var_;
};

}  // namespace curio
