#include "curio/running_stats.hpp"

#include <stdexcept>

namespace curio {

RunningMeanStd::RunningMeanStd(Index dim) : mean_(Vector::Zero(dim)), var_(Vector::Zero(dim)) {}

void RunningMeanStd::update(const Eigen::Ref<const RowMatrix>& batch) {
    if (batch.rows() == 0) {
        return;
    }
    if (batch.cols() != dim()) {
        throw ShapeError("RunningMeanStd: batch width " + std::to_string(batch.cols()) + " vs dim " +
                         std::to_string(dim()));
    }
    const Vector bmean = batch.colwise().mean().transpose();
    const Vector bvar = (batch.rowwise() - bmean.transpose()).array().square().colwise().mean().transpose();
    merge(static_cast<Scalar>(batch.rows()), bmean, bvar);
}

void RunningMeanStd::update_scalar(const Eigen::Ref<const Vector>& samples) {
    if (dim() != 1) {
        throw ShapeError("RunningMeanStd::update_scalar on a " + std::to_string(dim()) + "-dim tracker");
    }
    update(Eigen::Map<const RowMatrix>(samples.data(), samples.size(), 1));
}

void RunningMeanStd::merge(Scalar batch_count, const Vector& batch_mean, const Vector& batch_var) {
    if (batch_count <= 0) {
        return;
    }
    const Scalar total = count_ + batch_count;
    const Vector delta = batch_mean - mean_;
    const Vector m2 = var_ * count_ + batch_var * batch_count + delta.cwiseProduct(delta) * (count_ * batch_count / total);
    mean_ += delta * (batch_count / total);
    var_ = (m2 / total).cwiseMax(0.0);
    count_ = total;
    if (!mean_.allFinite() || !var_.allFinite()) {
        throw NumericError("RunningMeanStd: non-finite statistics");
    }
}

RowMatrix RunningMeanStd::normalize(const Eigen::Ref<const RowMatrix>& batch, Scalar clip, Scalar eps) const {
    if (batch.cols() != dim()) {
        throw ShapeError("RunningMeanStd::normalize: width mismatch");
    }
    const Eigen::Array<Scalar, 1, Eigen::Dynamic> inv = (var_.array() + eps).rsqrt().transpose();
    RowMatrix out = ((batch.rowwise() - mean_.transpose()).array().rowwise() * inv).matrix();
    return out.cwiseMax(-clip).cwiseMin(clip);
}

}  // namespace curio
