#pragma once

#include "curio/agent.hpp"
#include "curio/envs.hpp"
#include "curio/pretrain.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace curio::runner {

/// Invalid or inconsistent configuration. The CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct RunConfig {
    envs::EnvConfig env;
    std::string algo = "none";  // none | rnd | rnd_lr | prend
    std::vector<std::uint64_t> seeds{0, 1};
    int num_envs = 8;
    std::int64_t steps = 100'000;  // total env steps over all envs
    int rollout = 128;             // T
    agent::PpoConfig ppo;
    std::optional<Scalar> lr_multiplier;
    Scalar predictor_proportion = 1.0;  // share of each minibatch used for the predictor step
    Index embedding_dim = 64;
    bool non_episodic = true;
    std::string backbone;  // checkpoint path; required by prend, used by diagnostics when set
    int probe_size = 64;
    Scalar snapshot_fraction = 0.05;
    std::string out = "runs";
    std::string name;  // run directory name; derived when empty
    int threads = 0;   // env worker threads, 0 = serial
    bool checkpoints = true;

    /// Sets one key. Throws ConfigError on an unknown key or a bad value.
    void set(const std::string& key, const std::string& value);
    void validate() const;
    bool has_curiosity() const { return algo != "none"; }
    std::string run_name() const;
    /// Every key in a fixed order, one key=value per line.
    std::string to_text() const;
    std::uint64_t digest() const;
};

/// Flat key=value lines; '#' starts a comment. Later keys win.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// CURIO_OUT when set, otherwise the configured root.
std::filesystem::path output_root(const RunConfig& config);

std::string version_string();

/// Keeps large temporaries on the heap instead of fresh mmap pages (glibc
/// only, no-op elsewhere). Call once at program start.
void tune_allocator();

struct SeedOutputs {
    std::uint64_t seed = 0;
    std::filesystem::path dir;
    std::filesystem::path metrics;
    std::filesystem::path corr;            // empty without curiosity
    std::filesystem::path target_digests;  // empty without curiosity
    std::vector<std::filesystem::path> pairwise;
    std::vector<std::filesystem::path> checkpoints;
};

struct ExperimentManifest {
    std::filesystem::path path;
    std::string version;
    std::string config_text;
    std::uint64_t config_digest = 0;
    std::string env;
    std::string algo;
    std::int64_t steps = 0;
    std::vector<std::int64_t> snapshot_steps;
    std::filesystem::path stats;
    std::vector<SeedOutputs> seeds;
};

ExperimentManifest read_manifest(const std::filesystem::path& path);

/// Env steps after each PPO iteration.
std::vector<std::int64_t> step_grid(const RunConfig& config);
/// Steps at which probe snapshots are taken: each crossing of a multiple of
/// snapshot_fraction * steps, plus the final iteration.
std::vector<std::int64_t> snapshot_steps(const RunConfig& config);

/// Random-policy observations for the probe set: probe_size observations
/// taken every 8th step from one environment on the run layout.
RowMatrix probe_observations(const RunConfig& config, std::uint64_t seed);

/// Layout seed used for every reset in a run.
std::uint64_t layout_seed(std::uint64_t seed);

/// Trains one run per seed. Validates everything (backbone included) before
/// any training; writes the manifest first and stats.json last.
ExperimentManifest run_experiment(const RunConfig& config);

/// Writes step,algo,mean,min,max of episode_return_mean over seeds for every
/// algorithm, on the steps shared by all runs. Throws when the manifests
/// disagree on env or steps.
void compare(const std::vector<std::filesystem::path>& manifests, const std::filesystem::path& out_csv);

struct PretrainJob {
    envs::EnvConfig env;
    int num_envs = 8;
    int steps = 2000;  // per environment
    int epochs = 3;
    std::uint64_t seed = 0;
    pretrain::TemporalConfig temporal;
    std::filesystem::path out;  // backbone checkpoint; sidecar goes to <out>.json
};

struct PretrainReport {
    std::filesystem::path checkpoint;
    Scalar trained_ratio = 0;  // coherence ratio on held-out rollouts
    Scalar random_ratio = 0;   // same rollouts, backbone at its initialisation
    std::vector<Scalar> loss_series;
};

/// Collects random-policy rollouts, trains and saves a frozen backbone, and
/// scores it against its own initialisation on separately seeded held-out
/// rollouts.
PretrainReport run_pretrain(const PretrainJob& job);

}  // namespace curio::runner
