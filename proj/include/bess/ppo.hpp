// Proximal policy optimization for the bidding MDP: trajectory collection,
// generalized advantage estimation, clipped policy updates, value regression,
// checkpoints and evaluation rollouts.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bess/market_env.hpp"
#include "bess/neural.hpp"

namespace bess::ppo {

using env::MarketMode;
using env::Transition;

class LengthMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a loss or parameter becomes NaN/inf; `diagnostic()` is a JSON dump.
class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(const std::string& what, std::string diagnostic)
        : std::runtime_error(what), diagnostic_(std::move(diagnostic)) {}
    const std::string& diagnostic() const noexcept { return diagnostic_; }

private:
    std::string diagnostic_;
};

class CheckpointMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ValueLossKind { squared, smooth_l1 };
enum class UpdateOrder { sequential, interleaved };

struct PpoConfig {
    double gamma = 0.99;
    double lambda = 0.95;
    double clip_epsilon = 0.2;
    std::size_t trajectories_per_iter = 8;
    std::size_t horizon = 288;
    std::size_t epochs_per_iter = 10;
    std::size_t minibatch_size = 256;
    double actor_lr = 3e-4;
    double critic_lr = 1e-3;
    double entropy_coef = 0.0;
    std::size_t total_iters = 300;
    std::uint64_t seed = 0;

    std::vector<int> hidden{512, 512};
    double log_std_init = -0.5;
    double max_grad_norm = 0.5;  // <= 0 disables clipping
    /// Rewards are multiplied by this before advantage and value targets are formed.
    double reward_scale = 0.01;
    bool normalize_advantages = true;
    ValueLossKind value_loss = ValueLossKind::squared;
    UpdateOrder update_order = UpdateOrder::sequential;
    std::size_t checkpoint_every = 0;  // 0: final checkpoint only
    std::size_t workers = 1;

    /// Throws std::invalid_argument.
    void validate() const;
};

// ---------------------------------------------------------------------------
// Estimators and losses

/// values holds one entry per reward plus the bootstrap value.
std::vector<double> compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                                double lambda);

double discounted_return(std::span<const double> rewards, double gamma);

/// min(r A, clip(r, 1 - eps, 1 + eps) A) for one sample.
double clipped_surrogate(double ratio, double advantage, double clip_epsilon);

double value_loss(std::span<const double> predicted, std::span<const double> targets,
                  ValueLossKind kind = ValueLossKind::squared);

// ---------------------------------------------------------------------------
// Policy

/// Actor (tanh-bounded Gaussian mean + free log std) and critic networks.
struct Policy {
    nn::NetworkParams actor;
    nn::VectorXd log_std;
    nn::NetworkParams critic;
    MarketMode mode = MarketMode::joint;

    static Policy create(const PpoConfig& config, MarketMode mode, nn::Rng& rng);

    nn::GaussianPolicyHead head(const env::Observation& obs) const;
    double value(const env::Observation& obs) const;
    /// Action dimensions that influence the environment under `mode`.
    std::array<std::uint8_t, 2> active_dims() const noexcept;
};

inline constexpr std::uint64_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint64_t config_hash = 0;
    std::uint64_t iteration = 0;
    Policy policy;
    nn::OptimizerState actor_opt;
    nn::OptimizerState critic_opt;
};

/// Hash of everything a checkpoint's networks depend on: layer widths and the
/// observation encoding.
std::uint64_t architecture_hash(const PpoConfig& config, const env::EnvConfig& env_config);

Checkpoint initial_checkpoint(const PpoConfig& config, const env::EnvConfig& env_config);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
/// Throws CheckpointMismatch on bad magic, version or inconsistent shapes.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint read_checkpoint(std::istream& in);
/// Throws CheckpointMismatch when the checkpoint was produced for another architecture.
void check_compatible(const Checkpoint& ckpt, const PpoConfig& config, const env::EnvConfig& env_config);

// ---------------------------------------------------------------------------
// Rollouts

struct Trajectory {
    std::vector<Transition> steps;
    std::vector<env::Observation> observations;
    double bootstrap_value = 0.0;  // critic value after the last step; 0 when terminal
};

/// Deterministic per (config.seed, iteration, trajectory index): each trajectory
/// draws actions from its own stream and trajectory d runs on envs[d % envs.size()].
std::vector<Trajectory> collect_trajectories(const Policy& policy, std::span<env::MarketEnv> envs,
                                             const PpoConfig& config, std::uint64_t iteration);

struct AdvantageBatch {
    nn::MatrixXd observations;  // obs x N
    nn::MatrixXd actions;       // 2 x N, unclipped samples
    std::vector<double> old_log_probs;
    std::vector<double> advantages;  // normalized when configured
    std::vector<double> value_targets;
};

AdvantageBatch build_batch(std::span<const Trajectory> trajectories, const PpoConfig& config);

struct UpdateStats {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double clip_fraction = 0.0;
    double entropy = 0.0;
};

UpdateStats update_policy(Policy& policy, nn::OptimizerState& actor_opt, nn::OptimizerState& critic_opt,
                          const AdvantageBatch& batch, const PpoConfig& config, std::uint64_t iteration);

/// Log-probability of every stored action under `policy`.
std::vector<double> recompute_log_probs(const Policy& policy, const AdvantageBatch& batch);

// ---------------------------------------------------------------------------
// Training

struct IterationMetrics {
    std::uint64_t iteration = 0;
    double mean_return = 0.0;
    double value_loss = 0.0;
    double policy_loss = 0.0;
    double clip_fraction = 0.0;
    double entropy = 0.0;
    double wall_time_s = 0.0;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const IterationMetrics& m, bool record_wall_time = true);

struct TrainOptions {
    std::optional<Checkpoint> resume_from;
    std::function<void(const IterationMetrics&)> on_iteration;
    std::function<void(const Checkpoint&)> on_checkpoint;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<IterationMetrics> metrics;
};

/// Runs iterations [resume.iteration, config.total_iters). Throws NonFiniteLoss.
TrainResult train(const PpoConfig& config, std::shared_ptr<const market::PriceSeries> series,
                  const battery::BatteryParams& params, const env::EnvConfig& env_config,
                  const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Evaluation

/// Per-slot cumulative profit of one pass over every episode window of the series.
std::vector<double> rollout_profit(const Policy& policy, std::shared_ptr<const market::PriceSeries> series,
                                   const battery::BatteryParams& params, env::EnvConfig env_config,
                                   bool deterministic, std::uint64_t seed);

struct EvalResult {
    std::vector<double> joint;
    std::vector<double> energy_only;
    std::vector<double> fcas_only;
};

/// Evaluates the policy as trained and with each market leg masked in turn.
/// All three runs share the signal stream.
EvalResult evaluate(const Checkpoint& checkpoint, std::shared_ptr<const market::PriceSeries> series,
                    const battery::BatteryParams& params, const env::EnvConfig& env_config, bool deterministic,
                    std::uint64_t seed);

/// splitmix64-style seed derivation.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace bess::ppo
