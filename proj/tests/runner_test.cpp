#include "curio/diagnostics.hpp"
#include "curio/runner.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace curio;
using namespace curio::runner;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "curio_runner_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

RunConfig tiny(const std::string& algo, const std::string& name) {
    RunConfig c = parse_config(
        "env = key_door\n"
        "env_horizon = 30\n"
        "num_envs = 2\n"
        "rollout = 16\n"
        "steps = 320\n"
        "seeds = 3\n"
        "epochs = 2\n"
        "minibatches = 2\n"
        "probe_size = 8\n"
        "snapshot_fraction = 0.25\n");
    c.algo = algo;
    c.out = scratch().string();
    c.name = name;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::string& tiny_backbone() {
    static const std::string path = [] {
        PretrainJob job;
        job.env.kind = envs::EnvKind::key_door;
        job.num_envs = 2;
        job.steps = 200;
        job.epochs = 1;
        job.seed = 5;
        job.out = scratch() / "backbone.ckpt";
        run_pretrain(job);
        return job.out.string();
    }();
    return path;
}

class ScopedEnv {
public:
    ScopedEnv(const char* name, const char* value) : name_(name) {
        if (const char* old = std::getenv(name)) old_ = old;
        ::setenv(name, value, 1);
    }
    ~ScopedEnv() {
        if (old_) {
            ::setenv(name_, old_->c_str(), 1);
        } else {
            ::unsetenv(name_);
        }
    }

private:
    const char* name_;
    std::optional<std::string> old_;
};

}  // namespace

TEST(Config, ParsesKeysCommentsAndAliases) {
    const auto c = parse_config(
        "# comment line\n"
        "algo = rnd-lr   # trailing comment\n"
        "seeds = 4, 9\n"
        "intrinsic_coef = 0.5\n"
        "lr_multiplier = 0.02\n"
        "predictor_proportion = 0.25\n"
        "non_episodic = false\n"
        "gamma=0.9\n");
    EXPECT_EQ(c.algo, "rnd_lr");
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 9}));
    EXPECT_EQ(c.ppo.beta, 0.5);
    EXPECT_EQ(c.lr_multiplier, 0.02);
    EXPECT_EQ(c.predictor_proportion, 0.25);
    EXPECT_FALSE(c.non_episodic);
    EXPECT_EQ(c.ppo.gamma, 0.9);
    EXPECT_EQ(c.num_envs, 8);
    EXPECT_EQ(c.rollout, 128);
    EXPECT_EQ(c.seeds.size(), 2u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(parse_config("learning_rate = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("steps = many\n"), ConfigError);
    EXPECT_THROW(parse_config("algo = icm\n"), ConfigError);
    EXPECT_THROW(parse_config("just text\n"), ConfigError);
    EXPECT_THROW(parse_config("distractors = maybe\n"), ConfigError);
}

TEST(Config, ValidationErrors) {
    auto c = tiny("none", "v");
    EXPECT_NO_THROW(c.validate());
    c.steps = 31;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny("none", "v");
    c.seeds.clear();
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny("none", "v");
    c.ppo.clip = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny("none", "v");
    c.env.grid_size = 7;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny("none", "v");
    c.predictor_proportion = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Run, PredictorProportionChangesThePredictorFit) {
    auto full = tiny("rnd", "prop_full");
    auto part = tiny("rnd", "prop_part");
    part.predictor_proportion = 0.5;
    const auto a = diagnostics::read_csv(run_experiment(full).seeds[0].metrics);
    const auto b = diagnostics::read_csv(run_experiment(part).seeds[0].metrics);
    EXPECT_NE(a.numbers("predictor_loss"), b.numbers("predictor_loss"));
}

TEST(Config, TextRoundTripPreservesDigest) {
    auto c = tiny("rnd_lr", "rt");
    c.lr_multiplier = 0.03;
    c.ppo.entropy_coef = 0.1 + 0.2;
    const auto back = parse_config(c.to_text());
    EXPECT_EQ(back.to_text(), c.to_text());
    EXPECT_EQ(back.digest(), c.digest());
}

TEST(Config, OutputRootHonoursEnvironment) {
    RunConfig c;
    c.out = "from_config";
    {
        ScopedEnv env("CURIO_OUT", "/tmp/elsewhere");
        EXPECT_EQ(output_root(c), fs::path("/tmp/elsewhere"));
    }
    ::unsetenv("CURIO_OUT");
    EXPECT_EQ(output_root(c), fs::path("from_config"));
}

TEST(Schedule, SnapshotsEveryFractionAndAtTheEnd) {
    RunConfig c;
    c.num_envs = 2;
    c.rollout = 16;
    c.steps = 1000;
    const auto grid = step_grid(c);
    ASSERT_EQ(grid.size(), 31u);
    EXPECT_EQ(grid.front(), 32);
    EXPECT_EQ(grid.back(), 992);
    const auto snaps = snapshot_steps(c);
    // interval 50: one snapshot per crossing of a multiple of 50, plus the end.
    std::vector<std::int64_t> expected;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const std::int64_t prev = i ? grid[i - 1] : 0;
        if (grid[i] / 50 > prev / 50 || i + 1 == grid.size()) expected.push_back(grid[i]);
    }
    EXPECT_EQ(snaps, expected);
    EXPECT_EQ(snaps.back(), 992);
}

TEST(Probe, DependsOnlyOnSeedAndEnv) {
    auto a = tiny("rnd", "p");
    auto b = tiny("prend", "q");
    b.ppo.gamma = 0.5;
    EXPECT_EQ(probe_observations(a, 3), probe_observations(b, 3));
    EXPECT_NE(probe_observations(a, 3), probe_observations(a, 4));
    EXPECT_EQ(probe_observations(a, 3).rows(), 8);
}

TEST(Run, IdenticalConfigAndSeedGiveIdenticalMetrics) {
    const auto m1 = run_experiment(tiny("rnd", "det_a"));
    const auto m2 = run_experiment(tiny("rnd", "det_b"));
    const auto a = slurp(m1.seeds[0].metrics), b = slurp(m2.seeds[0].metrics);
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b);
    EXPECT_EQ(slurp(m1.seeds[0].corr), slurp(m2.seeds[0].corr));
}

TEST(Run, ThreadedEnvsMatchSerial) {
    auto serial = tiny("rnd", "serial");
    auto threaded = tiny("rnd", "threaded");
    threaded.threads = 2;
    EXPECT_EQ(slurp(run_experiment(serial).seeds[0].metrics), slurp(run_experiment(threaded).seeds[0].metrics));
}

TEST(Run, NoCuriosityWritesNoCorrelationAndZeroIntrinsic) {
    const auto m = run_experiment(tiny("none", "plain"));
    const auto& s = m.seeds[0];
    EXPECT_TRUE(s.corr.empty());
    EXPECT_FALSE(fs::exists(s.dir / "corr.csv"));
    const auto t = diagnostics::read_csv(s.metrics);
    EXPECT_EQ(t.rows.size(), 10u);
    for (const char* col : {"intrinsic_raw_mean", "intrinsic_raw_std", "predictor_loss"}) {
        for (Scalar v : t.numbers(col)) EXPECT_EQ(v, 0.0) << col;
    }
}

TEST(Run, ZeroBetaTrainsExactlyLikeNoCuriosity) {
    auto with = tiny("rnd", "beta0");
    with.ppo.beta = 0;
    const auto a = diagnostics::read_csv(run_experiment(tiny("none", "beta0_none")).seeds[0].metrics);
    const auto b = diagnostics::read_csv(run_experiment(with).seeds[0].metrics);
    for (const char* col : {"step", "episode_return_mean", "policy_loss", "value_loss", "entropy"}) {
        const auto x = a.numbers(col), y = b.numbers(col);
        ASSERT_EQ(x.size(), y.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (std::isnan(x[i])) {
                EXPECT_TRUE(std::isnan(y[i]));
            } else {
                EXPECT_EQ(x[i], y[i]) << col << " row " << i;
            }
        }
    }
    const auto policy_a = slurp(scratch() / "beta0_none" / "seed_3" / "policy.ckpt");
    const auto policy_b = slurp(scratch() / "beta0" / "seed_3" / "policy.ckpt");
    EXPECT_EQ(policy_a, policy_b);
}

TEST(Run, ManifestIsCompleteAndReadable) {
    auto c = tiny("prend", "full");
    c.backbone = tiny_backbone();
    c.seeds = {1, 2};
    const auto m = run_experiment(c);
    const auto back = read_manifest(m.path);
    EXPECT_EQ(back.config_digest, c.digest());
    EXPECT_EQ(back.algo, "prend");
    EXPECT_EQ(back.snapshot_steps, snapshot_steps(c));
    ASSERT_EQ(back.seeds.size(), 2u);
    std::vector<fs::path> files{back.stats};
    for (const auto& s : back.seeds) {
        files.push_back(s.metrics);
        files.push_back(s.corr);
        files.push_back(s.target_digests);
        files.insert(files.end(), s.pairwise.begin(), s.pairwise.end());
        files.insert(files.end(), s.checkpoints.begin(), s.checkpoints.end());
        EXPECT_EQ(s.pairwise.size(), back.snapshot_steps.size());
    }
    for (const auto& f : files) {
        ASSERT_TRUE(fs::exists(f)) << f;
        EXPECT_GT(fs::file_size(f), 0u) << f;
    }
    // Both embeddings are reported at every snapshot.
    const auto corr = diagnostics::read_csv(back.seeds[0].corr);
    EXPECT_EQ(corr.rows.size(), 2 * back.snapshot_steps.size());
    const auto pw = diagnostics::read_matrix_csv(back.seeds[0].pairwise.back());
    EXPECT_EQ(pw.rows(), 8);
    EXPECT_EQ(pw, pw.transpose());
    EXPECT_EQ(pw.diagonal(), Vector::Zero(8));
}

TEST(Run, TargetDigestsNeverChange) {
    for (const char* algo : {"rnd", "rnd_lr", "prend"}) {
        auto c = tiny(algo, std::string("digest_") + algo);
        c.backbone = tiny_backbone();
        const auto m = run_experiment(c);
        const auto t = diagnostics::read_csv(m.seeds[0].target_digests);
        ASSERT_EQ(t.rows.size(), 11u) << algo;
        for (const auto& row : t.rows) EXPECT_EQ(row[1], t.rows.front()[1]) << algo;
    }
}

TEST(Run, PrendWithoutBackboneFailsBeforeTraining) {
    auto c = tiny("prend", "no_backbone");
    EXPECT_THROW(run_experiment(c), ConfigError);
    c.backbone = (scratch() / "missing.ckpt").string();
    EXPECT_THROW(run_experiment(c), ConfigError);
    EXPECT_FALSE(fs::exists(scratch() / "no_backbone"));
}

TEST(Compare, BandsAndShape) {
    auto a = tiny("none", "cmp_none");
    a.seeds = {0, 1};
    auto b = tiny("rnd", "cmp_rnd");
    b.seeds = {0, 1};
    auto c = tiny("prend", "cmp_prend");
    c.backbone = tiny_backbone();
    const auto ma = run_experiment(a), mb = run_experiment(b), mc = run_experiment(c);

    const fs::path out = scratch() / "compare.csv";
    compare({ma.path, mb.path, mc.path}, out);
    const auto t = diagnostics::read_csv(out);
    EXPECT_EQ(t.header, (std::vector<std::string>{"step", "algo", "mean", "min", "max"}));
    EXPECT_EQ(t.rows.size(), 3 * step_grid(a).size());

    // Single-seed prend: band collapses onto the curve.
    // Two-seed none: band is the min/max of the two seeds.
    const auto s0 = diagnostics::read_csv(ma.seeds[0].metrics).numbers("episode_return_mean");
    const auto s1 = diagnostics::read_csv(ma.seeds[1].metrics).numbers("episode_return_mean");
    const auto mean = t.numbers("mean"), lo = t.numbers("min"), hi = t.numbers("max");
    const auto algo = t.column("algo");
    std::size_t none_row = 0;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        if (std::isnan(mean[i])) continue;
        if (t.rows[i][algo] == "prend") {
            EXPECT_EQ(lo[i], mean[i]);
            EXPECT_EQ(hi[i], mean[i]);
        }
        if (t.rows[i][algo] == "none") {
            const std::size_t k = i / 3;
            EXPECT_EQ(lo[i], std::min(s0[k], s1[k]));
            EXPECT_EQ(hi[i], std::max(s0[k], s1[k]));
            ++none_row;
        }
    }
    EXPECT_GT(none_row, 0u);
}

TEST(Compare, RejectsMismatchedEnvs) {
    auto a = tiny("none", "mm_a");
    auto b = tiny("none", "mm_b");
    b.env.kind = envs::EnvKind::grid_explore;
    const auto ma = run_experiment(a), mb = run_experiment(b);
    EXPECT_THROW(compare({ma.path, mb.path}, scratch() / "mm.csv"), std::invalid_argument);
}
