#include "curio/runner.hpp"

#include "curio/checkpoint.hpp"
#include "curio/diagnostics.hpp"
#include "curio/intrinsic.hpp"
#include "curio/pretrain.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#ifndef CURIO_VERSION
#define CURIO_VERSION "dev"
#endif

namespace curio::runner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T v{};
    in >> v;
    if (!in || !in.eof()) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "off" || value == "no") return false;
    throw ConfigError("config: '" + key + "' expects true/false, got '" + value + "'");
}

std::string canonical_algo(const std::string& name) {
    if (name == "none") return name;
    try {
        return intrinsic::to_string(intrinsic::parse_variant(name));
    } catch (const std::invalid_argument&) {
        throw ConfigError("config: unknown algo '" + name + "' (expected none, rnd, rnd_lr or prend)");
    }
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
    std::string s;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(seeds[i]);
    }
    return s;
}

std::string num(Scalar v) {
    return diagnostics::format_scalar(v);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    auto& p = ppo;
    if (key == "env") {
        try {
            env.kind = envs::parse_env_kind(value);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    } else if (key == "grid_size") {
        env.grid_size = parse_number<int>(key, value);
    } else if (key == "env_horizon") {
        env.horizon = parse_number<int>(key, value);
    } else if (key == "distractors") {
        env.distractors = parse_bool(key, value);
    } else if (key == "algo") {
        algo = canonical_algo(value);
    } else if (key == "seeds") {
        seeds.clear();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) seeds.push_back(parse_number<std::uint64_t>(key, trim(item)));
    } else if (key == "num_envs") {
        num_envs = parse_number<int>(key, value);
    } else if (key == "steps") {
        steps = parse_number<std::int64_t>(key, value);
    } else if (key == "rollout") {
        rollout = parse_number<int>(key, value);
    } else if (key == "gamma") {
        p.gamma = parse_number<Scalar>(key, value);
    } else if (key == "lambda") {
        p.lambda = parse_number<Scalar>(key, value);
    } else if (key == "clip") {
        p.clip = parse_number<Scalar>(key, value);
    } else if (key == "epochs") {
        p.epochs = parse_number<int>(key, value);
    } else if (key == "minibatches") {
        p.minibatches = parse_number<int>(key, value);
    } else if (key == "entropy_coef") {
        p.entropy_coef = parse_number<Scalar>(key, value);
    } else if (key == "value_coef") {
        p.value_coef = parse_number<Scalar>(key, value);
    } else if (key == "base_lr") {
        p.base_lr = parse_number<Scalar>(key, value);
    } else if (key == "beta" || key == "intrinsic_coef") {
        p.beta = parse_number<Scalar>(key, value);
    } else if (key == "max_grad_norm") {
        p.max_grad_norm = parse_number<Scalar>(key, value);
    } else if (key == "lr_multiplier") {
        if (value.empty() || value == "default") {
            lr_multiplier.reset();
        } else {
            lr_multiplier = parse_number<Scalar>(key, value);
        }
    } else if (key == "predictor_proportion") {
        predictor_proportion = parse_number<Scalar>(key, value);
    } else if (key == "embedding_dim") {
        embedding_dim = parse_number<Index>(key, value);
    } else if (key == "non_episodic") {
        non_episodic = parse_bool(key, value);
    } else if (key == "backbone") {
        backbone = value;
    } else if (key == "probe_size") {
        probe_size = parse_number<int>(key, value);
    } else if (key == "snapshot_fraction") {
        snapshot_fraction = parse_number<Scalar>(key, value);
    } else if (key == "out") {
        out = value;
    } else if (key == "name") {
        name = value;
    } else if (key == "threads") {
        threads = parse_number<int>(key, value);
    } else if (key == "checkpoints") {
        checkpoints = parse_bool(key, value);
    } else {
        throw ConfigError("config: unknown key '" + key + "'");
    }
}

void RunConfig::validate() const {
    try {
        env.validate();
        ppo.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    canonical_algo(algo);
    if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw ConfigError("config: seeds must be distinct");
    }
    if (num_envs < 1) throw ConfigError("config: num_envs must be >= 1");
    if (rollout < 1) throw ConfigError("config: rollout must be >= 1");
    const std::int64_t per_iter = static_cast<std::int64_t>(rollout) * num_envs;
    if (steps < per_iter) {
        throw ConfigError("config: steps (" + std::to_string(steps) + ") must be >= rollout * num_envs (" +
                          std::to_string(per_iter) + ")");
    }
    if (per_iter < ppo.minibatches) throw ConfigError("config: fewer samples per rollout than minibatches");
    if (lr_multiplier && !(*lr_multiplier > 0)) throw ConfigError("config: lr_multiplier must be > 0");
    if (!(predictor_proportion > 0 && predictor_proportion <= 1)) {
        throw ConfigError("config: predictor_proportion must be in (0, 1]");
    }
    if (embedding_dim < 1) throw ConfigError("config: embedding_dim must be >= 1");
    if (probe_size < 3) throw ConfigError("config: probe_size must be >= 3");
    if (!(snapshot_fraction > 0 && snapshot_fraction <= 1)) {
        throw ConfigError("config: snapshot_fraction must be in (0, 1]");
    }
    if (threads < 0) throw ConfigError("config: threads must be >= 0");
    if (algo == "prend" && backbone.empty()) throw ConfigError("config: prend requires a backbone path");
    if (!backbone.empty() && !fs::exists(backbone)) {
        throw ConfigError("config: backbone checkpoint not found: " + backbone);
    }
}

std::string RunConfig::run_name() const {
    return name.empty() ? envs::to_string(env.kind) + "-" + algo + "-" + std::to_string(steps) : name;
}

std::string RunConfig::to_text() const {
    std::ostringstream o;
    o << "env=" << envs::to_string(env.kind) << '\n'
      << "grid_size=" << env.grid_size << '\n'
      << "env_horizon=" << env.horizon << '\n'
      << "distractors=" << (env.distractors ? "true" : "false") << '\n'
      << "algo=" << algo << '\n'
      << "seeds=" << join_seeds(seeds) << '\n'
      << "num_envs=" << num_envs << '\n'
      << "steps=" << steps << '\n'
      << "rollout=" << rollout << '\n'
      << "gamma=" << num(ppo.gamma) << '\n'
      << "lambda=" << num(ppo.lambda) << '\n'
      << "clip=" << num(ppo.clip) << '\n'
      << "epochs=" << ppo.epochs << '\n'
      << "minibatches=" << ppo.minibatches << '\n'
      << "entropy_coef=" << num(ppo.entropy_coef) << '\n'
      << "value_coef=" << num(ppo.value_coef) << '\n'
      << "base_lr=" << num(ppo.base_lr) << '\n'
      << "beta=" << num(ppo.beta) << '\n'
      << "max_grad_norm=" << num(ppo.max_grad_norm) << '\n'
      << "lr_multiplier=" << (lr_multiplier ? num(*lr_multiplier) : "default") << '\n'
      << "predictor_proportion=" << num(predictor_proportion) << '\n'
      << "embedding_dim=" << embedding_dim << '\n'
      << "non_episodic=" << (non_episodic ? "true" : "false") << '\n'
      << "backbone=" << backbone << '\n'
      << "probe_size=" << probe_size << '\n'
      << "snapshot_fraction=" << num(snapshot_fraction) << '\n'
      << "out=" << out << '\n'
      << "name=" << name << '\n'
      << "threads=" << threads << '\n'
      << "checkpoints=" << (checkpoints ? "true" : "false") << '\n';
    return o.str();
}

std::uint64_t RunConfig::digest() const {
    const std::string t = to_text();
    return digest_bytes(t.data(), t.size());
}

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

RunConfig load_config(const fs::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

fs::path output_root(const RunConfig& config) {
    if (const char* env = std::getenv("CURIO_OUT"); env && *env) return env;
    return config.out;
}

std::string version_string() {
    return std::string("curio ") + CURIO_VERSION;
}

void tune_allocator() {
#if defined(__GLIBC__)
    // im2col buffers for a 256-sample minibatch exceed the mmap threshold and
    // would otherwise be faulted in from zeroed pages on every call.
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
#endif
}

std::vector<std::int64_t> step_grid(const RunConfig& config) {
    const std::int64_t per_iter = static_cast<std::int64_t>(config.rollout) * config.num_envs;
    std::vector<std::int64_t> grid;
    for (std::int64_t s = per_iter; s <= config.steps; s += per_iter) grid.push_back(s);
    return grid;
}

std::vector<std::int64_t> snapshot_steps(const RunConfig& config) {
    const auto grid = step_grid(config);
    const auto interval = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(config.snapshot_fraction * static_cast<Scalar>(config.steps))));
    std::vector<std::int64_t> out;
    std::int64_t prev = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i] / interval > prev / interval || i + 1 == grid.size()) out.push_back(grid[i]);
        prev = grid[i];
    }
    return out;
}

std::uint64_t layout_seed(std::uint64_t seed) {
    return mix_seed(seed, 0x1a7007);
}

RowMatrix probe_observations(const RunConfig& config, std::uint64_t seed) {
    constexpr int stride = 8;
    const std::uint64_t layout = layout_seed(seed);
    envs::GridEnv env(config.env, mix_seed(seed, 0x9e0b));
    std::mt19937_64 rng(mix_seed(seed, 0x9e0a));
    std::uniform_int_distribution<int> action(0, envs::kNumActions - 1);
    env.reset(layout);
    RowMatrix probes(config.probe_size, config.env.obs_size());
    for (int k = 0; k < config.probe_size; ++k) {
        for (int s = 0; s < stride; ++s) {
            if (env.step(static_cast<envs::Action>(action(rng))).done) env.reset(layout);
        }
        probes.row(k) = env.observation().transpose();
    }
    return probes;
}

namespace {

/// Appends lines to a file from a background thread, in push order.
class LineWriter {
public:
    LineWriter(const fs::path& path, const std::string& header) : out_(path) {
        if (!out_) throw std::runtime_error("cannot write " + path.string());
        out_ << header << '\n';
        thread_ = std::thread([this] { loop(); });
    }
    ~LineWriter() { close(); }

    void push(std::string line) {
        {
            std::lock_guard lock(mu_);
            queue_.push_back(std::move(line));
        }
        cv_.notify_one();
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            if (closed_) return;
            closed_ = true;
        }
        cv_.notify_one();
        thread_.join();
        out_.flush();
    }

private:
    void loop() {
        std::unique_lock lock(mu_);
        for (;;) {
            cv_.wait(lock, [this] { return closed_ || !queue_.empty(); });
            while (!queue_.empty()) {
                std::string line = std::move(queue_.front());
                queue_.pop_front();
                lock.unlock();
                out_ << line << '\n';
                lock.lock();
            }
            if (closed_) return;
        }
    }

    std::ofstream out_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::string> queue_;
    bool closed_ = false;
    std::thread thread_;
};

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::string hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

SeedOutputs plan_outputs(const RunConfig& config, const fs::path& run_dir, std::uint64_t seed,
                         const std::vector<std::int64_t>& snaps) {
    SeedOutputs o;
    o.seed = seed;
    o.dir = run_dir / ("seed_" + std::to_string(seed));
    o.metrics = o.dir / "metrics.csv";
    if (config.has_curiosity()) {
        o.corr = o.dir / "corr.csv";
        o.target_digests = o.dir / "target_digests.csv";
        for (auto s : snaps) o.pairwise.push_back(o.dir / ("pairwise_" + std::to_string(s) + ".csv"));
    }
    if (config.checkpoints) {
        o.checkpoints.push_back(o.dir / "policy.ckpt");
        if (config.has_curiosity()) {
            o.checkpoints.push_back(o.dir / "predictor.ckpt");
            o.checkpoints.push_back(o.dir / "target.ckpt");
        }
    }
    return o;
}

json manifest_json(const ExperimentManifest& m) {
    json seeds = json::array();
    for (const auto& s : m.seeds) {
        json pw = json::array(), ck = json::array();
        for (const auto& p : s.pairwise) pw.push_back(p.string());
        for (const auto& p : s.checkpoints) ck.push_back(p.string());
        seeds.push_back({{"seed", s.seed},
                         {"dir", s.dir.string()},
                         {"metrics", s.metrics.string()},
                         {"corr", s.corr.string()},
                         {"target_digests", s.target_digests.string()},
                         {"pairwise", pw},
                         {"checkpoints", ck}});
    }
    return {{"version", m.version},    {"config_digest", hex(m.config_digest)},
            {"config", m.config_text}, {"env", m.env},
            {"algo", m.algo},          {"steps", m.steps},
            {"snapshot_steps", m.snapshot_steps}, {"stats", m.stats.string()},
            {"seeds", seeds}};
}

struct SeedStats {
    Scalar seconds = 0;
    std::uint64_t target_digest = 0;
    std::uint64_t policy_digest = 0;
    std::int64_t episodes = 0;
};

void save_named(const fs::path& path, const std::vector<NamedTensor>& params) {
    save_checkpoint(path, Checkpoint{static_cast<std::uint32_t>(params.size()), params});
}

SeedStats train_seed(const RunConfig& config, const SeedOutputs& out, const std::vector<std::int64_t>& snaps,
                     std::shared_ptr<const pretrain::Backbone> backbone) {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t seed = out.seed;
    const Shape obs_shape = config.env.obs_shape();
    const std::uint64_t layout = layout_seed(seed);
    const int E = config.num_envs, T = config.rollout;

    envs::VecEnv vec(config.env, E, mix_seed(seed, 0xe0), [layout](int, int) { return layout; }, config.threads);
    agent::PolicyNet policy(obs_shape, mix_seed(seed, 0x90));
    AdamState policy_opt(config.ppo.base_lr);
    std::mt19937_64 rng(mix_seed(seed, 0x5a));

    std::optional<intrinsic::CuriosityModule> curiosity;
    std::optional<intrinsic::RewardForwardFilter> filter;
    if (config.has_curiosity()) {
        intrinsic::CuriosityConfig cc;
        cc.embedding_dim = config.embedding_dim;
        cc.base_lr = config.ppo.base_lr;
        cc.lr_multiplier = config.lr_multiplier;
        const auto variant = intrinsic::parse_variant(config.algo);
        curiosity = intrinsic::CuriosityModule::build(variant, mix_seed(seed, 0xc0), obs_shape, cc,
                                                      variant == intrinsic::Variant::prend ? backbone : nullptr);
        filter.emplace(E, config.ppo.gamma, !config.non_episodic);
    }

    // Probe-side embeddings never change during a run.
    const diagnostics::ProbeSet probe(probe_observations(config, seed));
    std::vector<std::pair<std::string, diagnostics::PairwiseMatrix>> distances;
    distances.emplace_back("raw", diagnostics::obs_distance_matrix(probe, diagnostics::raw_pixel_embedder()));
    if (backbone) {
        distances.emplace_back("backbone", diagnostics::distance_matrix(backbone->embed(probe.observations())));
    }

    fs::create_directories(out.dir);
    LineWriter metrics(out.metrics, diagnostics::kMetricsHeader);
    std::optional<LineWriter> corr, digests;
    std::uint64_t target_digest = 0;
    if (curiosity) {
        corr.emplace(out.corr, diagnostics::kCorrHeader);
        digests.emplace(out.target_digests, "step,target_digest");
        target_digest = curiosity->target_digest();
        digests->push("0," + hex(target_digest));
    }

    std::deque<Scalar> recent_returns;
    std::int64_t episodes = 0;
    std::size_t next_snap = 0;
    const auto grid = step_grid(config);
    for (const std::int64_t step : grid) {
        intrinsic::PreparedBatch prepared;
        auto batch = agent::collect_rollout(policy, vec, curiosity ? &*curiosity : nullptr,
                                            filter ? &*filter : nullptr, T, rng, &prepared);

        Vector rewards = batch.extrinsic_rewards;
        if (curiosity) rewards += config.ppo.beta * batch.intrinsic_rewards;
        RowMatrix dones = RowMatrix::Zero(T, E);
        if (!config.non_episodic) {
            for (Index i = 0; i < batch.size(); ++i) dones.data()[i] = batch.dones[static_cast<std::size_t>(i)];
        }
        const auto targets = agent::gae(Eigen::Map<const RowMatrix>(rewards.data(), T, E),
                                        Eigen::Map<const RowMatrix>(batch.values.data(), T, E), dones,
                                        batch.bootstrap_values, config.ppo.gamma, config.ppo.lambda);

        Scalar predictor_loss = 0;
        int fits = 0;
        agent::MinibatchHook hook;
        if (curiosity) {
            hook = [&](std::span<const Index> rows) {
                // Minibatch rows are already a random permutation, so a prefix is a random subset.
                const auto keep = std::max<std::size_t>(
                    1, static_cast<std::size_t>(std::llround(config.predictor_proportion * rows.size())));
                predictor_loss += curiosity->fit(prepared, rows.first(keep));
                ++fits;
            };
        }
        const auto stats = agent::ppo_update(policy, policy_opt, batch, targets, config.ppo, rng, hook);

        for (const auto& info : batch.finished) {
            recent_returns.push_back(info.episode_return);
            if (recent_returns.size() > 32) recent_returns.pop_front();
            ++episodes;
        }
        diagnostics::MetricsRow row;
        row.step = step;
        row.episode_return_mean = std::nan("");
        if (!recent_returns.empty()) {
            Scalar s = 0;
            for (Scalar r : recent_returns) s += r;
            row.episode_return_mean = s / static_cast<Scalar>(recent_returns.size());
        }
        if (curiosity) {
            const Scalar mu = batch.intrinsic_raw.mean();
            row.intrinsic_raw_mean = mu;
            row.intrinsic_raw_std = std::sqrt((batch.intrinsic_raw.array() - mu).square().mean());
            row.predictor_loss = fits ? predictor_loss / fits : 0.0;
        }
        row.policy_loss = stats.policy_loss;
        row.value_loss = stats.value_loss;
        row.entropy = stats.entropy;
        metrics.push(diagnostics::to_csv(row));

        if (curiosity) {
            const std::uint64_t d = curiosity->target_digest();
            digests->push(std::to_string(step) + "," + hex(d));
            if (d != target_digest) throw std::logic_error("target parameters changed at step " + std::to_string(step));
        }
        if (next_snap < snaps.size() && snaps[next_snap] == step) {
            if (curiosity) {
                const Vector raw = curiosity->raw_reward(curiosity->prepare(probe.observations()));
                const auto diff = diagnostics::reward_diff_matrix(raw);
                diagnostics::write_matrix_csv(out.pairwise[next_snap], diff);
                for (const auto& [kind, dist] : distances) {
                    diagnostics::CorrRow c{step, std::nan(""), kind};
                    try {
                        c.correlation = diagnostics::pairwise_correlation(diff, dist);
                    } catch (const std::domain_error&) {
                    }
                    corr->push(diagnostics::to_csv(c));
                }
            }
            ++next_snap;
        }
    }
    metrics.close();
    if (corr) corr->close();
    if (digests) digests->close();

    if (config.checkpoints) {
        save_named(out.checkpoints[0], policy.named_parameters());
        if (curiosity) {
            save_network(out.checkpoints[1], curiosity->predictor());
            save_network(out.checkpoints[2], curiosity->target());
        }
    }
    SeedStats s;
    s.seconds = std::chrono::duration<Scalar>(std::chrono::steady_clock::now() - start).count();
    s.target_digest = target_digest;
    s.policy_digest = policy.digest();
    s.episodes = episodes;
    return s;
}

}  // namespace

ExperimentManifest run_experiment(const RunConfig& config) {
    config.validate();
    std::shared_ptr<const pretrain::Backbone> backbone;
    if (!config.backbone.empty()) {
        try {
            backbone = std::make_shared<const pretrain::Backbone>(
                pretrain::load_backbone(config.backbone, config.env.obs_shape()));
        } catch (const std::exception& e) {
            throw ConfigError("config: cannot load backbone '" + config.backbone + "': " + e.what());
        }
    }

    const fs::path run_dir = output_root(config) / config.run_name();
    fs::create_directories(run_dir);
    ExperimentManifest m;
    m.path = run_dir / "manifest.json";
    m.version = version_string();
    m.config_text = config.to_text();
    m.config_digest = config.digest();
    m.env = envs::to_string(config.env.kind);
    m.algo = config.algo;
    m.steps = config.steps;
    m.snapshot_steps = snapshot_steps(config);
    m.stats = run_dir / "stats.json";
    for (auto seed : config.seeds) {
        m.seeds.push_back(plan_outputs(config, run_dir, seed, m.snapshot_steps));
        fs::remove_all(m.seeds.back().dir);
    }
    fs::remove(m.stats);
    write_json(m.path, manifest_json(m));

    json stats = json::array();
    for (const auto& out : m.seeds) {
        const SeedStats s = train_seed(config, out, m.snapshot_steps, backbone);
        stats.push_back({{"seed", out.seed},
                         {"wall_seconds", s.seconds},
                         {"steps_per_second", static_cast<Scalar>(config.steps) / std::max(s.seconds, 1e-9)},
                         {"episodes", s.episodes},
                         {"policy_digest", hex(s.policy_digest)},
                         {"target_digest", config.has_curiosity() ? hex(s.target_digest) : ""}});
    }
    write_json(m.stats, {{"config_digest", hex(m.config_digest)}, {"seeds", stats}});
    return m;
}

ExperimentManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read manifest " + path.string());
    const json j = json::parse(in);
    ExperimentManifest m;
    m.path = path;
    m.version = j.at("version").get<std::string>();
    m.config_text = j.at("config").get<std::string>();
    m.config_digest = std::stoull(j.at("config_digest").get<std::string>(), nullptr, 16);
    m.env = j.at("env").get<std::string>();
    m.algo = j.at("algo").get<std::string>();
    m.steps = j.at("steps").get<std::int64_t>();
    m.snapshot_steps = j.at("snapshot_steps").get<std::vector<std::int64_t>>();
    m.stats = j.at("stats").get<std::string>();
    for (const auto& s : j.at("seeds")) {
        SeedOutputs o;
        o.seed = s.at("seed").get<std::uint64_t>();
        o.dir = s.at("dir").get<std::string>();
        o.metrics = s.at("metrics").get<std::string>();
        o.corr = s.at("corr").get<std::string>();
        o.target_digests = s.at("target_digests").get<std::string>();
        for (const auto& p : s.at("pairwise")) o.pairwise.emplace_back(p.get<std::string>());
        for (const auto& p : s.at("checkpoints")) o.checkpoints.emplace_back(p.get<std::string>());
        m.seeds.push_back(std::move(o));
    }
    return m;
}

void compare(const std::vector<fs::path>& manifest_paths, const fs::path& out_csv) {
    if (manifest_paths.empty()) throw std::invalid_argument("compare: no manifests given");
    // algo -> step -> one value per seed
    std::map<std::string, std::map<std::int64_t, std::vector<Scalar>>> curves;
    std::map<std::string, std::size_t> runs_per_algo;
    std::string env;
    std::int64_t steps = -1;
    for (const auto& p : manifest_paths) {
        const auto m = read_manifest(p);
        if (env.empty()) {
            env = m.env;
            steps = m.steps;
        } else if (m.env != env) {
            throw std::invalid_argument("compare: env mismatch (" + env + " vs " + m.env + " in " + p.string() + ")");
        } else if (m.steps != steps) {
            throw std::invalid_argument("compare: steps mismatch in " + p.string());
        }
        for (const auto& s : m.seeds) {
            const auto table = diagnostics::read_csv(s.metrics);
            const auto st = table.numbers("step");
            const auto ret = table.numbers("episode_return_mean");
            for (std::size_t i = 0; i < st.size(); ++i) {
                curves[m.algo][static_cast<std::int64_t>(st[i])].push_back(ret[i]);
            }
            ++runs_per_algo[m.algo];
        }
    }
    // Steps present in every run of every algorithm.
    std::set<std::int64_t> shared;
    bool first = true;
    for (const auto& [algo, by_step] : curves) {
        std::set<std::int64_t> here;
        for (const auto& [step, values] : by_step) {
            if (values.size() == runs_per_algo[algo]) here.insert(step);
        }
        if (first) {
            shared = std::move(here);
            first = false;
        } else {
            std::set<std::int64_t> both;
            for (auto s : here) {
                if (shared.count(s)) both.insert(s);
            }
            shared = std::move(both);
        }
    }
    if (shared.empty()) throw std::invalid_argument("compare: runs share no step grid");

    std::ofstream out(out_csv);
    if (!out) throw std::runtime_error("cannot write " + out_csv.string());
    out << "step,algo,mean,min,max\n";
    for (auto step : shared) {
        for (const auto& [algo, by_step] : curves) {
            const auto& v = by_step.at(step);
            Scalar sum = 0, lo = v.front(), hi = v.front();
            for (Scalar x : v) {
                sum += x;
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
            const bool any_nan = std::any_of(v.begin(), v.end(), [](Scalar x) { return std::isnan(x); });
            const Scalar nan = std::nan("");
            out << step << ',' << algo << ',' << num(any_nan ? nan : sum / static_cast<Scalar>(v.size())) << ','
                << num(any_nan ? nan : lo) << ',' << num(any_nan ? nan : hi) << '\n';
        }
    }
}

PretrainReport run_pretrain(const PretrainJob& job) {
    if (job.out.empty()) throw ConfigError("pretrain: output path is required");
    if (job.num_envs < 1 || job.epochs < 1) throw ConfigError("pretrain: num_envs and epochs must be >= 1");
    try {
        job.env.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("pretrain: ") + e.what());
    }
    const auto store = pretrain::collect_pretrain_rollouts(job.env, job.num_envs, job.steps, job.seed, job.temporal);
    const auto held_out =
        pretrain::collect_pretrain_rollouts(job.env, job.num_envs, job.steps, mix_seed(job.seed, 0x401d), job.temporal);
    auto result = pretrain::pretrain_backbone(store, job.epochs, job.seed, job.temporal);

    pretrain::Backbone initial(job.env.obs_shape());
    initial.initialize(job.seed);

    if (job.out.has_parent_path()) fs::create_directories(job.out.parent_path());
    pretrain::save_backbone(job.out, result.backbone, job.temporal, job.epochs, job.seed, store.digest(),
                            result.loss_series);
    PretrainReport r;
    r.checkpoint = job.out;
    r.trained_ratio = pretrain::temporal_coherence_ratio(result.backbone, held_out, job.temporal);
    r.random_ratio = pretrain::temporal_coherence_ratio(initial, held_out, job.temporal);
    r.loss_series = std::move(result.loss_series);
    return r;
}

}  // namespace curio::runner
