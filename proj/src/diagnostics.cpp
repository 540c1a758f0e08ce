#include "curio/diagnostics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace curio::diagnostics {

ProbeSet::ProbeSet(RowMatrix observations) : obs_(std::move(observations)) {
    if (obs_.rows() < 2) {
        throw std::invalid_argument("probe set needs at least 2 observations");
    }
}

std::uint64_t ProbeSet::digest() const {
    return digest_bytes(obs_.data(), sizeof(Scalar) * static_cast<std::size_t>(obs_.size()));
}

PairwiseMatrix reward_diff_matrix(const Eigen::Ref<const Vector>& rewards) {
    const Index k = rewards.size();
    if (k < 2) throw std::invalid_argument("reward_diff_matrix: need K >= 2");
    PairwiseMatrix m(k, k);
    for (Index i = 0; i < k; ++i) {
        m(i, i) = 0;
        for (Index j = i + 1; j < k; ++j) {
            m(i, j) = m(j, i) = std::abs(rewards[i] - rewards[j]);
        }
    }
    return m;
}

PairwiseMatrix distance_matrix(const Eigen::Ref<const RowMatrix>& e) {
    const Index k = e.rows();
    PairwiseMatrix m(k, k);
    for (Index i = 0; i < k; ++i) {
        m(i, i) = 0;
        for (Index j = i + 1; j < k; ++j) {
            m(i, j) = m(j, i) = (e.row(i) - e.row(j)).norm();
        }
    }
    return m;
}

PairwiseMatrix obs_distance_matrix(const ProbeSet& probe, const Embedder& embed) {
    const RowMatrix e = embed(probe.observations());
    if (e.rows() != probe.size()) {
        throw ShapeError("obs_distance_matrix: embedder returned " + std::to_string(e.rows()) + " rows for " +
                         std::to_string(probe.size()) + " probes");
    }
    return distance_matrix(e);
}

Embedder raw_pixel_embedder() {
    return [](const Eigen::Ref<const RowMatrix>& obs) { return RowMatrix(obs); };
}

namespace {

Vector upper_triangle(const PairwiseMatrix& m) {
    const Index k = m.rows();
    Vector v(k * (k - 1) / 2);
    Index n = 0;
    for (Index i = 0; i < k; ++i) {
        for (Index j = i + 1; j < k; ++j) v[n++] = m(i, j);
    }
    return v;
}

}  // namespace

Scalar pairwise_correlation(const PairwiseMatrix& a, const PairwiseMatrix& b) {
    if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows()) {
        throw ShapeError("pairwise_correlation: need two K x K matrices of the same K");
    }
    if (a.rows() < 3) {
        throw std::domain_error("undefined correlation: fewer than 2 off-diagonal pairs");
    }
    const Vector x = upper_triangle(a), y = upper_triangle(b);
    const Eigen::ArrayXd dx = x.array() - x.mean();
    const Eigen::ArrayXd dy = y.array() - y.mean();
    const Scalar sxx = dx.square().sum(), syy = dy.square().sum();
    if (sxx == 0 || syy == 0) {
        throw std::domain_error("undefined correlation: constant upper triangle");
    }
    return (dx * dy).sum() / std::sqrt(sxx * syy);
}

std::vector<Scalar> centered_moving_average(std::span<const Scalar> series, int width) {
    if (width < 1) throw std::invalid_argument("moving average width must be >= 1");
    const auto n = static_cast<std::ptrdiff_t>(series.size());
    const std::ptrdiff_t half = width / 2;
    std::vector<Scalar> out(series.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto lo = std::max<std::ptrdiff_t>(0, i - half);
        const auto hi = std::min<std::ptrdiff_t>(n - 1, i + half);
        Scalar s = 0;
        for (auto j = lo; j <= hi; ++j) s += series[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = s / static_cast<Scalar>(hi - lo + 1);
    }
    return out;
}

DecayMetrics decay_metrics(std::span<const Scalar> series) {
    const std::size_t n = series.size();
    if (n < 20) {
        throw std::invalid_argument("decay_metrics: series needs at least 20 points, got " + std::to_string(n));
    }
    const std::size_t w = std::max<std::size_t>(1, n / 10);
    DecayMetrics m;
    for (std::size_t i = 0; i < w; ++i) {
        m.initial_mean += series[i];
        m.final_mean += series[n - w + i];
    }
    m.initial_mean /= static_cast<Scalar>(w);
    m.final_mean /= static_cast<Scalar>(w);
    const auto smooth = centered_moving_average(series, 5);
    for (std::size_t i = 0; i < n; ++i) {
        if (smooth[i] <= m.initial_mean / 2) {
            m.half_life = static_cast<Index>(i);
            break;
        }
    }
    return m;
}

std::string format_scalar(Scalar v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_matrix_csv(const std::filesystem::path& path, const Eigen::Ref<const RowMatrix>& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << format_scalar(m(i, j));
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

Scalar parse_scalar(const std::string& s) {
    char* end = nullptr;
    const Scalar v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
        throw std::runtime_error("not a number: '" + s + "'");
    }
    return v;
}

}  // namespace

RowMatrix read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<std::vector<Scalar>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<Scalar> r;
        for (const auto& f : split(line)) r.push_back(parse_scalar(f));
        if (!rows.empty() && r.size() != rows.front().size()) {
            throw std::runtime_error(path.string() + ": ragged matrix");
        }
        rows.push_back(std::move(r));
    }
    RowMatrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return m;
}

std::string to_csv(const MetricsRow& r) {
    std::string s = std::to_string(r.step);
    for (Scalar v : {r.episode_return_mean, r.intrinsic_raw_mean, r.intrinsic_raw_std, r.predictor_loss,
                     r.policy_loss, r.value_loss, r.entropy}) {
        s += ',';
        s += format_scalar(v);
    }
    return s;
}

std::string to_csv(const CorrRow& r) {
    return std::to_string(r.snapshot_step) + ',' + format_scalar(r.correlation) + ',' + r.embed_kind;
}

std::size_t CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    throw std::runtime_error("missing column '" + name + "'");
}

std::vector<Scalar> CsvTable::numbers(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<Scalar> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(parse_scalar(r.at(c)));
    return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
    t.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split(line);
        if (fields.size() != t.header.size()) {
            throw std::runtime_error(path.string() + ": row has " + std::to_string(fields.size()) + " fields, header has " +
                                     std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(fields));
    }
    return t;
}

}  // namespace curio::diagnostics
