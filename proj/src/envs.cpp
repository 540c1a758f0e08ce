#include "curio/envs.hpp"

#include "curio/optim.hpp"

#include <cstdlib>
#include <stdexcept>

namespace curio::envs {

EnvKind parse_env_kind(const std::string& name) {
    if (name == "grid_explore") return EnvKind::grid_explore;
    if (name == "key_door") return EnvKind::key_door;
    throw std::invalid_argument("unknown env '" + name + "' (expected grid_explore or key_door)");
}

std::string to_string(EnvKind kind) {
    return kind == EnvKind::grid_explore ? "grid_explore" : "key_door";
}

int EnvConfig::cell_pixels() const {
    return (frame_size - 2 * border) / grid_size;
}

void EnvConfig::validate() const {
    if (grid_size < 2 || horizon < 1 || stack < 1 || border < 0) {
        throw std::invalid_argument("env config: grid_size >= 2, horizon >= 1, stack >= 1 required");
    }
    const int play = frame_size - 2 * border;
    if (play <= 0 || play % grid_size != 0) {
        throw std::invalid_argument("env config: playfield of " + std::to_string(play) +
                                    " px is not divisible by grid_size " + std::to_string(grid_size));
    }
    if (distractor_max < 0 || distractor_max > 1) {
        throw std::invalid_argument("env config: distractor_max must be in [0, 1]");
    }
}

namespace {

int manhattan(Cell a, Cell b) {
    return std::abs(a.row - b.row) + std::abs(a.col - b.col);
}

}  // namespace

EnvState initial_state(const EnvConfig& config, std::uint64_t seed) {
    config.validate();
    const int n = config.grid_size;
    std::mt19937_64 rng(mix_seed(seed, 0x1a70u));
    std::uniform_int_distribution<int> coord(0, n - 1);
    auto draw = [&] { return Cell{coord(rng), coord(rng)}; };
    const int far = n / 2;

    EnvState s;
    s.agent = draw();
    do {
        s.goal = draw();
    } while (manhattan(s.goal, s.agent) < far);
    if (config.kind == EnvKind::key_door) {
        do {
            s.key = draw();
        } while (manhattan(s.key, s.agent) < far || s.key == s.goal);
        s.key_present = true;
    }
    return s;
}

Transition transition(const EnvConfig& config, const EnvState& state, Action action) {
    if (state.done) {
        throw std::logic_error("transition from a terminal state");
    }
    Transition t{state, 0.0, false};
    EnvState& s = t.next;
    const int n = config.grid_size;
    switch (action) {
        case Action::up: s.agent.row = std::max(0, s.agent.row - 1); break;
        case Action::down: s.agent.row = std::min(n - 1, s.agent.row + 1); break;
        case Action::left: s.agent.col = std::max(0, s.agent.col - 1); break;
        case Action::right: s.agent.col = std::min(n - 1, s.agent.col + 1); break;
        case Action::noop: break;
        default: throw std::invalid_argument("invalid action " + std::to_string(static_cast<int>(action)));
    }
    if (s.key_present && s.agent == s.key) {
        s.key_present = false;
        s.has_key = true;
    }
    const bool goal_open = config.kind == EnvKind::grid_explore || s.has_key;
    if (goal_open && s.agent == s.goal) {
        t.reward = 1.0;
        t.done = true;
    }
    s.step += 1;
    if (s.step >= config.horizon) {
        t.done = true;
    }
    s.done = t.done;
    return t;
}

void render(const EnvConfig& config, const EnvState& state, std::mt19937_64* noise, Eigen::Ref<Vector> frame) {
    const int h = config.frame_size;
    const int b = config.border;
    const int cell = config.cell_pixels();
    frame.setZero();
    if (config.distractors) {
        if (noise == nullptr) {
            throw std::invalid_argument("render: distractors enabled without a noise stream");
        }
        std::uniform_real_distribution<Scalar> u(0.0, config.distractor_max);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < h; ++x) {
                if (y < b || y >= h - b || x < b || x >= h - b) {
                    frame[y * h + x] = u(*noise);
                }
            }
        }
    }
    auto paint = [&](Cell c, Scalar v) {
        for (int dy = 0; dy < cell; ++dy) {
            for (int dx = 0; dx < cell; ++dx) {
                frame[(b + c.row * cell + dy) * h + b + c.col * cell + dx] = v;
            }
        }
    };
    paint(state.goal, kGoalIntensity);
    if (state.key_present) {
        paint(state.key, kKeyIntensity);
    }
    paint(state.agent, kAgentIntensity);
    frame = frame.cwiseMax(0.0).cwiseMin(1.0);
}

GridEnv::GridEnv(EnvConfig config, std::uint64_t noise_seed)
    : config_(config), noise_(mix_seed(noise_seed, 0xd157u)) {
    config_.validate();
    obs_ = Vector::Zero(config_.obs_size());
    frame_ = Vector::Zero(config_.frame_pixels());
}

const Observation& GridEnv::reset(std::uint64_t seed) {
    state_ = initial_state(config_, seed);
    info_ = {};
    started_ = true;
    render(config_, state_, &noise_, frame_);
    for (int i = 0; i < config_.stack; ++i) {
        obs_.segment(i * config_.frame_pixels(), config_.frame_pixels()) = frame_;
    }
    return obs_;
}

void GridEnv::push_frame() {
    render(config_, state_, &noise_, frame_);
    const Index fp = config_.frame_pixels();
    const Index keep = (config_.stack - 1) * fp;
    obs_.head(keep) = obs_.segment(fp, keep).eval();
    obs_.tail(fp) = frame_;
}

StepResult GridEnv::step(Action action) {
    if (!started_) {
        throw std::logic_error("step before reset");
    }
    if (state_.done) {
        throw std::logic_error("step after episode end; call reset");
    }
    const Transition t = transition(config_, state_, action);
    state_ = t.next;
    push_frame();
    info_.episode_return += t.reward;
    info_.episode_length += 1;
    return StepResult{obs_, t.reward, t.done, info_};
}

VecEnv::VecEnv(const EnvConfig& config, int num_envs, std::uint64_t seed, ResetSeeder reset_seed, int threads)
    : config_(config), reset_seed_(std::move(reset_seed)) {
    if (num_envs < 1) {
        throw std::invalid_argument("VecEnv needs at least one environment");
    }
    for (int i = 0; i < num_envs; ++i) {
        envs_.emplace_back(config, mix_seed(seed, static_cast<std::uint64_t>(i)));
        envs_.back().reset(reset_seed_(i, 0));
    }
    episodes_.assign(num_envs, 0);
    results_.resize(num_envs);
    errors_.resize(num_envs);
    actions_.assign(num_envs, 0);
    threads = std::min(threads, num_envs);
    if (threads > 0) {
        start_ = std::make_unique<std::barrier<>>(threads + 1);
        finish_ = std::make_unique<std::barrier<>>(threads + 1);
        for (int w = 0; w < threads; ++w) {
            const int begin = w * num_envs / threads;
            const int end = (w + 1) * num_envs / threads;
            workers_.emplace_back([this, begin, end] { worker(begin, end); });
        }
    }
}

VecEnv::~VecEnv() {
    if (!workers_.empty()) {
        stopping_ = true;
        start_->arrive_and_wait();
        for (auto& t : workers_) {
            t.join();
        }
    }
}

RowMatrix VecEnv::observations() const {
    RowMatrix out(size(), config_.obs_size());
    for (int i = 0; i < size(); ++i) {
        out.row(i) = envs_[i].observation().transpose();
    }
    return out;
}

void VecEnv::step_range(int begin, int end) {
    for (int i = begin; i < end; ++i) {
        try {
            results_[i] = envs_[i].step(static_cast<Action>(actions_[i]));
            if (results_[i].done) {
                episodes_[i] += 1;
                envs_[i].reset(reset_seed_(i, episodes_[i]));
            }
        } catch (...) {
            errors_[i] = std::current_exception();
        }
    }
}

void VecEnv::worker(int begin, int end) {
    while (true) {
        start_->arrive_and_wait();
        if (stopping_) {
            return;
        }
        step_range(begin, end);
        finish_->arrive_and_wait();
    }
}

std::vector<StepResult> VecEnv::step(std::span<const int> actions) {
    if (static_cast<int>(actions.size()) != size()) {
        throw std::invalid_argument("VecEnv::step: expected " + std::to_string(size()) + " actions");
    }
    for (int a : actions) {
        if (a < 0 || a >= kNumActions) {
            throw std::invalid_argument("VecEnv::step: invalid action " + std::to_string(a));
        }
    }
    actions_.assign(actions.begin(), actions.end());
    if (workers_.empty()) {
        step_range(0, size());
    } else {
        start_->arrive_and_wait();
        finish_->arrive_and_wait();
    }
    for (auto& e : errors_) {
        if (e) {
            auto err = e;
            e = nullptr;
            std::rethrow_exception(err);
        }
    }
    return results_;
}

}  // namespace curio::envs
