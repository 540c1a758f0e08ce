#include "curio/diagnostics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace curio;
using namespace curio::diagnostics;

namespace {

RowMatrix random_matrix(Index r, Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<Scalar> u(0.0, 1.0);
    RowMatrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

PairwiseMatrix random_pairwise(Index k, std::uint64_t seed) {
    return reward_diff_matrix(random_matrix(k, 1, seed).col(0));
}

// Textbook single-pass form, independent of the two-pass implementation.
Scalar textbook_pearson(const PairwiseMatrix& a, const PairwiseMatrix& b) {
    Scalar n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (Index i = 0; i < a.rows(); ++i) {
        for (Index j = i + 1; j < a.cols(); ++j) {
            const Scalar x = a(i, j), y = b(i, j);
            n += 1;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
    }
    return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("curio_diag_" + name);
}

}  // namespace

TEST(RewardDiff, SmallExampleAndConstant) {
    const auto m = reward_diff_matrix(Vector((Vector(3) << 0, 1, 3).finished()));
    EXPECT_EQ(m(0, 2), 3);
    EXPECT_EQ(m(1, 2), 2);
    EXPECT_EQ(m(2, 0), 3);
    EXPECT_EQ(reward_diff_matrix(Vector::Constant(5, 0.7)), RowMatrix::Zero(5, 5));
    EXPECT_THROW(reward_diff_matrix(Vector::Zero(1)), std::invalid_argument);
}

TEST(RewardDiff, MatchesDoubleLoop) {
    const Vector r = random_matrix(10, 1, 3).col(0);
    const auto m = reward_diff_matrix(r);
    for (Index i = 0; i < 10; ++i) {
        for (Index j = 0; j < 10; ++j) EXPECT_EQ(m(i, j), std::fabs(r[i] - r[j]));
    }
}

TEST(ObsDistance, IdenticalAndOnePixel) {
    RowMatrix same = RowMatrix::Constant(4, 9, 0.25);
    EXPECT_EQ(obs_distance_matrix(ProbeSet(same), raw_pixel_embedder()), RowMatrix::Zero(4, 4));

    RowMatrix onehot = RowMatrix::Zero(2, 9);
    onehot(0, 4) = 1;
    const auto m = obs_distance_matrix(ProbeSet(onehot), raw_pixel_embedder());
    EXPECT_EQ(m(0, 1), 1.0);
    EXPECT_EQ(m(1, 0), 1.0);
}

TEST(ObsDistance, MatchesDirectPairwiseOracle) {
    const RowMatrix obs = random_matrix(8, 30, 5);
    const auto m = obs_distance_matrix(ProbeSet(obs), raw_pixel_embedder());
    for (Index i = 0; i < 8; ++i) {
        EXPECT_EQ(m(i, i), 0.0);
        for (Index j = 0; j < 8; ++j) {
            Scalar s = 0;
            for (Index c = 0; c < 30; ++c) s += (obs(i, c) - obs(j, c)) * (obs(i, c) - obs(j, c));
            EXPECT_NEAR(m(i, j), std::sqrt(s), 1e-12);
            EXPECT_EQ(m(i, j), m(j, i));
        }
    }
}

TEST(ObsDistance, UsesEmbedder) {
    const RowMatrix obs = random_matrix(5, 4, 6);
    const auto twice = obs_distance_matrix(ProbeSet(obs), [](const Eigen::Ref<const RowMatrix>& o) {
        return RowMatrix(2.0 * o);
    });
    const auto raw = obs_distance_matrix(ProbeSet(obs), raw_pixel_embedder());
    EXPECT_LT((twice - 2.0 * raw).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Correlation, AffineAndNegation) {
    const auto a = random_pairwise(7, 1);
    const PairwiseMatrix b = (2.0 * a).array() + 3.0;
    EXPECT_NEAR(pairwise_correlation(a, b), 1.0, 1e-12);
    EXPECT_NEAR(pairwise_correlation(a, -a), -1.0, 1e-12);
}

TEST(Correlation, MatchesTextbookOracle) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = distance_matrix(random_matrix(6, 3, 100 + s));
        const auto b = random_pairwise(6, 200 + s);
        EXPECT_NEAR(pairwise_correlation(a, b), textbook_pearson(a, b), 1e-12);
    }
}

TEST(Correlation, IgnoresDiagonalAndLowerTriangle) {
    auto a = random_pairwise(5, 8);
    auto b = random_pairwise(5, 9);
    const Scalar r = pairwise_correlation(a, b);
    a(3, 1) = 100;
    b(2, 2) = -7;
    EXPECT_EQ(pairwise_correlation(a, b), r);
}

TEST(Correlation, SymmetricAndScaleInvariant) {
    const auto rewards = random_matrix(12, 1, 10).col(0);
    const auto d = distance_matrix(random_matrix(12, 5, 11));
    const auto a = reward_diff_matrix(rewards);
    EXPECT_EQ(pairwise_correlation(a, d), pairwise_correlation(d, a));
    for (Scalar c : {1e-3, 0.5, 7.0, 1e4}) {
        const Vector scaled = c * rewards;
        EXPECT_NEAR(pairwise_correlation(reward_diff_matrix(scaled), d), pairwise_correlation(a, d), 1e-12);
    }
}

TEST(Correlation, ConstantTriangleIsUndefined) {
    const auto a = random_pairwise(5, 2);
    const PairwiseMatrix flat = reward_diff_matrix(Vector::Constant(5, 1.0));
    EXPECT_THROW(pairwise_correlation(a, flat), std::domain_error);
    EXPECT_THROW(pairwise_correlation(flat, a), std::domain_error);
    EXPECT_THROW(pairwise_correlation(a, random_pairwise(4, 1)), ShapeError);
}

TEST(Decay, ConstantSeriesNeverHalves) {
    const std::vector<Scalar> s(40, 2.5);
    const auto m = decay_metrics(s);
    EXPECT_EQ(m.initial_mean, m.final_mean);
    EXPECT_EQ(m.initial_mean, 2.5);
    EXPECT_FALSE(m.half_life.has_value());
}

TEST(Decay, GeometricSeriesHalfLifeByDirectRule) {
    std::vector<Scalar> s;
    for (int k = 0; k < 20; ++k) s.push_back(100.0 * std::pow(0.5, k));
    // Window is 2 points: initial mean 75, threshold 37.5. Truncated width-5
    // averages: 58.33, 46.875, 38.75, 19.375 -> first crossing at index 3.
    const auto m = decay_metrics(s);
    EXPECT_DOUBLE_EQ(m.initial_mean, 75.0);
    ASSERT_TRUE(m.half_life.has_value());
    EXPECT_EQ(*m.half_life, 3);

    Index expected = -1;
    for (int i = 0; i < 20 && expected < 0; ++i) {
        Scalar sum = 0;
        int count = 0;
        for (int j = i - 2; j <= i + 2; ++j) {
            if (j >= 0 && j < 20) {
                sum += s[static_cast<std::size_t>(j)];
                ++count;
            }
        }
        if (sum / count <= 37.5) expected = i;
    }
    EXPECT_EQ(*m.half_life, expected);
}

TEST(Decay, WindowIsTenPercent) {
    std::vector<Scalar> s(50);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<Scalar>(i);
    const auto m = decay_metrics(s);
    EXPECT_DOUBLE_EQ(m.initial_mean, 2.0);   // mean of 0..4
    EXPECT_DOUBLE_EQ(m.final_mean, 47.0);    // mean of 45..49
    EXPECT_EQ(m.half_life, std::optional<Index>(0));  // smoothed[0] = 1 <= 1
}

TEST(Decay, TooShortIsAnError) {
    EXPECT_THROW(decay_metrics(std::vector<Scalar>(19, 1.0)), std::invalid_argument);
}

TEST(Csv, ScalarsRoundTripExactly) {
    for (Scalar v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
        EXPECT_EQ(std::strtod(format_scalar(v).c_str(), nullptr), v);
    }
    EXPECT_EQ(format_scalar(std::nan("")), "nan");
}

TEST(Csv, MatrixRoundTrip) {
    const auto path = temp_file("matrix.csv");
    const auto m = random_pairwise(6, 4);
    write_matrix_csv(path, m);
    EXPECT_EQ(read_matrix_csv(path), m);
    std::filesystem::remove(path);
}

TEST(Csv, TableColumnsAndMissingColumn) {
    const auto path = temp_file("metrics.csv");
    {
        std::ofstream out(path);
        out << kMetricsHeader << '\n';
        MetricsRow r;
        r.step = 1024;
        r.episode_return_mean = std::nan("");
        r.entropy = 1.5;
        out << to_csv(r) << '\n';
    }
    const auto t = read_csv(path);
    ASSERT_EQ(t.header.size(), 8u);
    EXPECT_EQ(t.numbers("step"), std::vector<Scalar>{1024});
    EXPECT_TRUE(std::isnan(t.numbers("episode_return_mean")[0]));
    EXPECT_EQ(t.numbers("entropy")[0], 1.5);
    try {
        t.column("score");
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("score"), std::string::npos);
    }
    std::filesystem::remove(path);
}
