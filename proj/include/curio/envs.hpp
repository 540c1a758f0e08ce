#pragma once

#include "curio/tensor.hpp"

#include <barrier>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace curio::envs {

enum class Action : int { up = 0, down = 1, left = 2, right = 3, noop = 4 };
inline constexpr int kNumActions = 5;

enum class EnvKind { grid_explore, key_door };

EnvKind parse_env_kind(const std::string& name);
std::string to_string(EnvKind kind);

inline constexpr Scalar kAgentIntensity = 1.0;
inline constexpr Scalar kKeyIntensity = 0.8;
inline constexpr Scalar kGoalIntensity = 0.6;

struct EnvConfig {
    EnvKind kind = EnvKind::grid_explore;
    int grid_size = 12;
    int horizon = 500;
    bool distractors = false;
    Scalar distractor_max = 0.3;
    int frame_size = 36;  // H = W
    int border = 6;       // width of the distractor band around the playfield
    int stack = 4;        // S

    int cell_pixels() const;
    Index frame_pixels() const { return static_cast<Index>(frame_size) * frame_size; }
    Index obs_size() const { return stack * frame_pixels(); }
    Shape obs_shape() const { return {stack, frame_size, frame_size}; }
    void validate() const;
};

struct Cell {
    int row = 0;
    int col = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

struct EnvState {
    Cell agent;
    Cell goal;
    Cell key;
    bool key_present = false;  // key_door only, cleared on pickup
    bool has_key = false;
    int step = 0;
    bool done = false;
    friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct Transition {
    EnvState next;
    Scalar reward = 0;
    bool done = false;
};

/// Layout for a seed: agent, goal and (key_door) key at distinct cells, goal
/// and key at least grid_size/2 Manhattan steps from the agent.
EnvState initial_state(const EnvConfig& config, std::uint64_t seed);

/// The pure dynamics. Distractors play no part here.
Transition transition(const EnvConfig& config, const EnvState& state, Action action);

/// Writes one H*W frame. `noise` is only consulted when distractors are on.
void render(const EnvConfig& config, const EnvState& state, std::mt19937_64* noise, Eigen::Ref<Vector> frame);

/// Observation: S stacked frames, (S, H, W) row-major, newest frame last.
using Observation = Vector;

struct EpisodeInfo {
    Scalar episode_return = 0;
    int episode_length = 0;
};

struct StepResult {
    Observation obs;
    Scalar extrinsic_reward = 0;
    bool done = false;
    EpisodeInfo info;
};

class GridEnv {
public:
    /// noise_seed drives the distractor stream, independent of dynamics.
    GridEnv(EnvConfig config, std::uint64_t noise_seed);

    const Observation& reset(std::uint64_t seed);
    StepResult step(Action action);

    const EnvState& state() const { return state_; }
    const Observation& observation() const { return obs_; }
    const EnvConfig& config() const { return config_; }

private:
    void push_frame();

    EnvConfig config_;
    std::mt19937_64 noise_;
    EnvState state_;
    Observation obs_;
    Vector frame_;
    EpisodeInfo info_;
    bool started_ = false;
};

/// E environments stepped in lockstep. With worker threads each worker owns a
/// fixed slice of environments and all of them meet at a barrier per step, so
/// results are identical to serial stepping.
class VecEnv {
public:
    /// reset_seed(env_index, episode_index) picks the layout seed for each reset.
    using ResetSeeder = std::function<std::uint64_t(int, int)>;

    VecEnv(const EnvConfig& config, int num_envs, std::uint64_t seed, ResetSeeder reset_seed, int threads = 0);
    ~VecEnv();
    VecEnv(const VecEnv&) = delete;
    VecEnv& operator=(const VecEnv&) = delete;

    int size() const { return static_cast<int>(envs_.size()); }
    const EnvConfig& config() const { return config_; }

    /// Current observations as (E, S*H*W) rows.
    RowMatrix observations() const;

    /// Steps every env. Done envs are reset; results[i].obs is the terminal
    /// observation and observations() returns the post-reset one.
    std::vector<StepResult> step(std::span<const int> actions);

private:
    void step_range(int begin, int end);
    void worker(int begin, int end);

    EnvConfig config_;
    ResetSeeder reset_seed_;
    std::vector<GridEnv> envs_;
    std::vector<int> episodes_;
    std::vector<int> actions_;
    std::vector<StepResult> results_;
    std::vector<std::exception_ptr> errors_;
    std::unique_ptr<std::barrier<>> start_;
    std::unique_ptr<std::barrier<>> finish_;
    std::vector<std::thread> workers_;
    bool stopping_ = false;
};

}  // namespace curio::envs
