// curio: pretrain a backbone, train agents, summarise and compare runs.

#include "curio/diagnostics.hpp"
#include "curio/runner.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace curio;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

json nullable(Scalar v) {
    return std::isfinite(v) ? json(v) : json(nullptr);
}

int cmd_pretrain(const std::string& env_name, std::uint64_t seed, int steps, int num_envs, int epochs,
                 const pretrain::TemporalConfig& temporal, const std::string& out) {
    runner::PretrainJob job;
    job.env.kind = envs::parse_env_kind(env_name);
    job.seed = seed;
    job.steps = steps;
    job.num_envs = num_envs;
    job.epochs = epochs;
    job.temporal = temporal;
    job.out = out.empty() ? runner::output_root({}) / ("backbone_" + env_name + "_" + std::to_string(seed) + ".ckpt")
                          : fs::path(out);
    const auto r = runner::run_pretrain(job);
    json j{{"checkpoint", r.checkpoint.string()},
           {"trained_ratio", r.trained_ratio},
           {"random_ratio", r.random_ratio},
           {"final_loss", r.loss_series.empty() ? json(nullptr) : json(r.loss_series.back())}};
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_diag(const fs::path& manifest_path) {
    const auto m = runner::read_manifest(manifest_path);
    json seeds = json::array();
    for (const auto& s : m.seeds) {
        json entry{{"seed", s.seed}};
        const auto metrics = diagnostics::read_csv(s.metrics);
        const auto intrinsic = metrics.numbers("intrinsic_raw_mean");
        if (m.algo != "none" && intrinsic.size() >= 20) {
            const auto d = diagnostics::decay_metrics(intrinsic);
            entry["decay"] = {{"initial_mean", d.initial_mean},
                              {"final_mean", d.final_mean},
                              {"half_life", d.half_life ? json(*d.half_life) : json("none")}};
        }
        const auto ret = metrics.numbers("episode_return_mean");
        if (!ret.empty()) entry["final_episode_return_mean"] = nullable(ret.back());
        if (!s.corr.empty()) {
            const auto corr = diagnostics::read_csv(s.corr);
            const auto steps = corr.numbers("snapshot_step");
            const auto values = corr.numbers("correlation");
            const auto kind = corr.column("embed_kind");
            json last;
            for (std::size_t i = 0; i < corr.rows.size(); ++i) {
                if (steps[i] == steps.back()) last[corr.rows[i][kind]] = nullable(values[i]);
            }
            entry["final_correlation"] = last;
        }
        seeds.push_back(entry);
    }
    const json out{{"manifest", manifest_path.string()}, {"algo", m.algo}, {"env", m.env}, {"seeds", seeds}};
    const fs::path dest = manifest_path.parent_path() / "diag.json";
    std::ofstream(dest) << out.dump(2) << '\n';
    std::cout << out.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    runner::tune_allocator();
    CLI::App app{"curio: prediction-error curiosity lab"};
    app.require_subcommand(1);

    auto* pre = app.add_subcommand("pretrain", "train a frozen backbone on random-policy rollouts");
    std::string pre_env = "key_door", pre_out;
    std::uint64_t pre_seed = 0;
    int pre_steps = 2000, pre_envs = 8, pre_epochs = 3;
    pretrain::TemporalConfig temporal;
    pre->add_option("--env", pre_env, "grid_explore or key_door");
    pre->add_option("--seed", pre_seed);
    pre->add_option("--steps", pre_steps, "random-policy steps per environment");
    pre->add_option("--envs", pre_envs);
    pre->add_option("--epochs", pre_epochs);
    pre->add_option("--k-near", temporal.k_near);
    pre->add_option("--k-far", temporal.k_far);
    pre->add_option("--margin", temporal.margin);
    pre->add_option("--batch-size", temporal.batch_size);
    pre->add_option("--lr", temporal.lr);
    pre->add_option("--out", pre_out, "checkpoint path");

    auto* train = app.add_subcommand("train", "train one run per seed");
    std::string config_path, env, algo, backbone, name;
    std::vector<std::uint64_t> seeds;
    std::int64_t steps = 0;
    double lr_mult = 0;
    std::vector<std::string> sets;
    train->add_option("--config", config_path, "flat key=value file")->check(CLI::ExistingFile);
    train->add_option("--env", env);
    train->add_option("--algo", algo, "none, rnd, rnd_lr or prend");
    train->add_option("--seed", seeds, "repeatable");
    train->add_option("--steps", steps);
    train->add_option("--backbone", backbone);
    train->add_option("--lr-mult", lr_mult, "predictor lr multiplier (default 0.01 for rnd_lr, 1 otherwise)");
    train->add_option("--name", name, "run directory name");
    train->add_option("--set", sets, "key=value override, repeatable");

    auto* diag = app.add_subcommand("diag", "decay and correlation summary of a run");
    std::string diag_manifest;
    diag->add_option("manifest", diag_manifest)->required()->check(CLI::ExistingFile);

    auto* cmp = app.add_subcommand("compare", "seed-aggregated return curves per algorithm");
    std::vector<std::string> manifests;
    std::string cmp_out = "compare.csv";
    cmp->add_option("manifests", manifests)->required()->check(CLI::ExistingFile);
    cmp->add_option("--out", cmp_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*pre) {
            return cmd_pretrain(pre_env, pre_seed, pre_steps, pre_envs, pre_epochs, temporal, pre_out);
        }
        if (*train) {
            runner::RunConfig config;
            if (!config_path.empty()) config = runner::load_config(config_path);
            if (!env.empty()) config.set("env", env);
            if (!algo.empty()) config.set("algo", algo);
            if (!seeds.empty()) config.seeds = seeds;
            if (steps > 0) config.steps = steps;
            if (!backbone.empty()) config.backbone = backbone;
            if (lr_mult > 0) config.lr_multiplier = lr_mult;
            if (!name.empty()) config.name = name;
            for (const auto& kv : sets) config = runner::parse_config(kv, config);
            const auto m = runner::run_experiment(config);
            std::cout << m.path.string() << '\n';
            return 0;
        }
        if (*diag) return cmd_diag(diag_manifest);
        if (*cmp) {
            std::vector<fs::path> paths(manifests.begin(), manifests.end());
            runner::compare(paths, cmp_out);
            std::cout << cmp_out << '\n';
            return 0;
        }
    } catch (const runner::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
