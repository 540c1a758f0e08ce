#pragma once

#include "curio/tensor.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace curio::diagnostics {

/// K x K, symmetric, zero diagonal.
using PairwiseMatrix = RowMatrix;

using Embedder = std::function<RowMatrix(const Eigen::Ref<const RowMatrix>&)>;

/// K observations frozen at construction.
class ProbeSet {
public:
    ProbeSet() = default;
    explicit ProbeSet(RowMatrix observations);

    const RowMatrix& observations() const { return obs_; }
    Index size() const { return obs_.rows(); }
    std::uint64_t digest() const;

private:
    RowMatrix obs_;
};

/// M(i, j) = |r_i - r_j|. Requires K >= 2.
PairwiseMatrix reward_diff_matrix(const Eigen::Ref<const Vector>& rewards);

/// M(i, j) = ||embed(o_i) - embed(o_j)||_2.
PairwiseMatrix obs_distance_matrix(const ProbeSet& probe, const Embedder& embed);
/// Same, over embeddings that were already computed (one row per probe).
PairwiseMatrix distance_matrix(const Eigen::Ref<const RowMatrix>& embeddings);

/// Flattened pixels.
Embedder raw_pixel_embedder();

/// Pearson correlation over the strict upper triangles. Throws
/// std::domain_error when either triangle is constant.
Scalar pairwise_correlation(const PairwiseMatrix& a, const PairwiseMatrix& b);

struct DecayMetrics {
    Scalar initial_mean = 0;
    Scalar final_mean = 0;
    std::optional<Index> half_life;  // none when never reached
};

/// Window is 10% of the series (at least one point). Half-life is the first
/// index where the width-5 centred moving average (truncated at the edges)
/// drops to half the initial window mean. Requires at least 20 points.
DecayMetrics decay_metrics(std::span<const Scalar> series);

/// Centred moving average with the window truncated at the series ends.
std::vector<Scalar> centered_moving_average(std::span<const Scalar> series, int width);

/// 17 significant digits; "nan", "inf", "-inf" for non-finite values.
std::string format_scalar(Scalar v);

void write_matrix_csv(const std::filesystem::path& path, const Eigen::Ref<const RowMatrix>& m);
RowMatrix read_matrix_csv(const std::filesystem::path& path);

/// Column order of metrics.csv.
inline constexpr const char* kMetricsHeader =
    "step,episode_return_mean,intrinsic_raw_mean,intrinsic_raw_std,predictor_loss,policy_loss,value_loss,entropy";
/// Column order of corr.csv.
inline constexpr const char* kCorrHeader = "snapshot_step,correlation,embed_kind";

struct MetricsRow {
    std::int64_t step = 0;
    Scalar episode_return_mean = 0;
    Scalar intrinsic_raw_mean = 0;
    Scalar intrinsic_raw_std = 0;
    Scalar predictor_loss = 0;
    Scalar policy_loss = 0;
    Scalar value_loss = 0;
    Scalar entropy = 0;
};

std::string to_csv(const MetricsRow& row);

struct CorrRow {
    std::int64_t snapshot_step = 0;
    Scalar correlation = 0;
    std::string embed_kind;
};

std::string to_csv(const CorrRow& row);

/// Minimal CSV table: header names and rows of raw fields.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Throws std::runtime_error naming the column when absent.
    std::size_t column(const std::string& name) const;
    std::vector<Scalar> numbers(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace curio::diagnostics
