#include "bess/ppo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

namespace bess::ppo {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("ppo config: " + what);
}

}  // namespace

void PpoConfig::validate() const {
    require(gamma >= 0.0 && gamma <= 1.0, "gamma must be in [0, 1]");
    require(lambda >= 0.0 && lambda <= 1.0, "lambda must be in [0, 1]");
    require(clip_epsilon > 0.0, "clip_epsilon must be positive");
    require(trajectories_per_iter >= 1, "trajectories_per_iter must be at least 1");
    require(horizon >= 1, "horizon must be at least 1");
    require(minibatch_size >= 1, "minibatch_size must be at least 1");
    require(actor_lr > 0.0 && critic_lr > 0.0, "learning rates must be positive");
    require(entropy_coef >= 0.0, "entropy_coef must be non-negative");
    require(!hidden.empty(), "at least one hidden layer is required");
    for (const int w : hidden) require(w > 0, "hidden widths must be positive");
    require(log_std_init >= nn::kLogStdMin && log_std_init <= nn::kLogStdMax, "log_std_init out of range");
    require(reward_scale > 0.0, "reward_scale must be positive");
    require(workers >= 1, "workers must be at least 1");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    auto mix = [](std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ a) ^ (b * 0xD6E8FEB86659FD93ULL));
}

// ---------------------------------------------------------------------------

std::vector<double> compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                                double lambda) {
    if (values.size() != rewards.size() + 1)
        throw LengthMismatch("compute_gae: expected " + std::to_string(rewards.size() + 1) + " values, got " +
                             std::to_string(values.size()));
    std::vector<double> adv(rewards.size());
    double running = 0.0;
    for (std::size_t t = rewards.size(); t-- > 0;) {
        const double delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    return adv;
}

double discounted_return(std::span<const double> rewards, double gamma) {
    if (rewards.empty()) throw std::invalid_argument("discounted_return: no rewards");
    double g = 0.0;
    for (std::size_t t = rewards.size(); t-- > 0;) g = rewards[t] + gamma * g;
    return g;
}

double clipped_surrogate(double ratio, double advantage, double clip_epsilon) {
    const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    return std::min(ratio * advantage, clipped * advantage);
}

namespace {

double huber(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }
double huber_grad(double x) { return std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0); }

}  // namespace

double value_loss(std::span<const double> predicted, std::span<const double> targets, ValueLossKind kind) {
    if (predicted.size() != targets.size()) throw LengthMismatch("value_loss: length mismatch");
    if (predicted.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double e = predicted[i] - targets[i];
        s += kind == ValueLossKind::squared ? e * e : huber(e);
    }
    return s / static_cast<double>(predicted.size());
}

// ---------------------------------------------------------------------------

Policy Policy::create(const PpoConfig& config, MarketMode mode, nn::Rng& rng) {
    Policy p;
    p.mode = mode;
    const auto obs = static_cast<Eigen::Index>(env::kObservationSize);
    p.actor = nn::make_mlp(obs, config.hidden, 2, nn::Activation::relu, nn::Activation::tanh,
                           {.hidden_gain = std::sqrt(2.0), .output_gain = 0.01}, rng);
    p.critic = nn::make_mlp(obs, config.hidden, 1, nn::Activation::relu, nn::Activation::linear,
                            {.hidden_gain = std::sqrt(2.0), .output_gain = 1.0}, rng);
    p.log_std = nn::VectorXd::Constant(2, config.log_std_init);
    return p;
}

namespace {

nn::VectorXd to_vector(const env::Observation& obs) {
    return Eigen::Map<const nn::VectorXd>(obs.data(), static_cast<Eigen::Index>(obs.size()));
}

}  // namespace

nn::GaussianPolicyHead Policy::head(const env::Observation& obs) const {
    return {nn::forward(actor, to_vector(obs)), log_std};
}

double Policy::value(const env::Observation& obs) const { return nn::forward(critic, to_vector(obs))[0]; }

std::array<std::uint8_t, 2> Policy::active_dims() const noexcept {
    switch (mode) {
        case MarketMode::energy_only: return {0, 1};
        case MarketMode::fcas_only: return {1, 0};
        case MarketMode::joint: break;
    }
    return {1, 1};
}

// ---------------------------------------------------------------------------

std::uint64_t architecture_hash(const PpoConfig& config, const env::EnvConfig& env_config) {
    std::ostringstream key;
    key << "obs=" << env::kObservationSize << ";act=2;hidden=";
    for (const int w : config.hidden) key << w << ',';
    key << ";price_scale=" << std::setprecision(17) << env_config.price_scale;
    key << ";energy_price_offset=" << env_config.energy_price_offset;
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const char c : key.str()) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

Checkpoint initial_checkpoint(const PpoConfig& config, const env::EnvConfig& env_config) {
    nn::Rng rng(derive_seed(config.seed, 0x1417));
    Checkpoint ckpt;
    ckpt.config_hash = architecture_hash(config, env_config);
    ckpt.policy = Policy::create(config, env_config.mode, rng);
    ckpt.actor_opt = nn::OptimizerState::for_network(ckpt.policy.actor, {.learning_rate = config.actor_lr}, 2);
    ckpt.critic_opt = nn::OptimizerState::for_network(ckpt.policy.critic, {.learning_rate = config.critic_lr}, 0);
    return ckpt;
}

namespace {

constexpr char kMagic[8] = {'B', 'E', 'S', 'S', 'C', 'K', 'P', 'T'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointMismatch("truncated checkpoint");
    return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    out.write(kMagic, sizeof kMagic);
    put_u64(out, kCheckpointVersion);
    put_u64(out, ckpt.config_hash);
    put_u64(out, ckpt.iteration);
    put_u64(out, static_cast<std::uint64_t>(ckpt.policy.mode));
    nn::write_network(out, ckpt.policy.actor);
    nn::write_vector(out, ckpt.policy.log_std);
    nn::write_network(out, ckpt.policy.critic);
    nn::write_optimizer(out, ckpt.actor_opt);
    nn::write_optimizer(out, ckpt.critic_opt);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    write_checkpoint(out, ckpt);
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(std::istream& in) {
    char magic[sizeof kMagic] = {};
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw CheckpointMismatch("not a checkpoint file");
    const auto version = get_u64(in);
    if (version != kCheckpointVersion)
        throw CheckpointMismatch("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.config_hash = get_u64(in);
    ckpt.iteration = get_u64(in);
    const auto mode = get_u64(in);
    if (mode > 2) throw CheckpointMismatch("corrupt checkpoint: unknown market mode");
    ckpt.policy.mode = static_cast<MarketMode>(mode);
    try {
        ckpt.policy.actor = nn::read_network(in);
        ckpt.policy.log_std = nn::read_vector(in);
        ckpt.policy.critic = nn::read_network(in);
        ckpt.actor_opt = nn::read_optimizer(in);
        ckpt.critic_opt = nn::read_optimizer(in);
    } catch (const CheckpointMismatch&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointMismatch(std::string("corrupt checkpoint: ") + e.what());
    }
    const auto& p = ckpt.policy;
    const auto obs = static_cast<Eigen::Index>(env::kObservationSize);
    if (p.actor.input_size() != obs || p.actor.output_size() != 2 || p.critic.input_size() != obs ||
        p.critic.output_size() != 1 || p.log_std.size() != 2)
        throw CheckpointMismatch("checkpoint network shapes do not match the bidding MDP");
    if (!ckpt.actor_opt.matches(p.actor, 2) || !ckpt.critic_opt.matches(p.critic, 0))
        throw CheckpointMismatch("checkpoint optimizer state does not mirror its networks");
    return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointMismatch("cannot open checkpoint " + path.string());
    return read_checkpoint(in);
}

void check_compatible(const Checkpoint& ckpt, const PpoConfig& config, const env::EnvConfig& env_config) {
    if (ckpt.config_hash != architecture_hash(config, env_config))
        throw CheckpointMismatch("checkpoint was trained with a different network architecture or observation scale");
    const auto expected = initial_checkpoint(config, env_config);
    if (!expected.policy.actor.same_shape(ckpt.policy.actor) || !expected.policy.critic.same_shape(ckpt.policy.critic))
        throw CheckpointMismatch("checkpoint layer shapes differ from the configured architecture");
}

// ---------------------------------------------------------------------------

namespace {

Trajectory run_trajectory(const Policy& policy, env::MarketEnv& env, std::size_t horizon, nn::Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto active = policy.active_dims();
    Trajectory traj;
    if (env.done()) env.reset();
    for (std::size_t t = 0; t < horizon && !env.done(); ++t) {
        const auto obs = env.observe();
        const auto head = policy.head(obs);
        env::RawAction raw{};
        for (std::size_t i = 0; i < raw.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            raw[i] = head.mean[k] + std::exp(head.log_std[k]) * normal(rng);
        }
        auto tr = env.step(raw);
        tr.log_prob = nn::gaussian_logprob(head, raw, active);
        tr.value_estimate = policy.value(obs);
        traj.observations.push_back(obs);
        traj.steps.push_back(tr);
    }
    traj.bootstrap_value = env.done() ? 0.0 : policy.value(env.observe());
    return traj;
}

}  // namespace

std::vector<Trajectory> collect_trajectories(const Policy& policy, std::span<env::MarketEnv> envs,
                                             const PpoConfig& config, std::uint64_t iteration) {
    if (envs.empty()) throw std::invalid_argument("collect_trajectories: no environments");
    if (config.horizon == 0) throw std::invalid_argument("collect_trajectories: horizon must be positive");
    std::vector<Trajectory> out(config.trajectories_per_iter);

    // Each environment owns the trajectories d with d % envs.size() == e, run in order.
    auto run_env = [&](std::size_t e) {
        for (std::size_t d = e; d < out.size(); d += envs.size()) {
            nn::Rng rng(derive_seed(config.seed, iteration, d + 1));
            out[d] = run_trajectory(policy, envs[e], config.horizon, rng);
        }
    };
    const std::size_t workers = std::min(config.workers, envs.size());
    if (workers <= 1) {
        for (std::size_t e = 0; e < envs.size(); ++e) run_env(e);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t e = w; e < envs.size(); e += workers) run_env(e);
            });
    }
    return out;
}

AdvantageBatch build_batch(std::span<const Trajectory> trajectories, const PpoConfig& config) {
    std::size_t n = 0;
    for (const auto& tr : trajectories) n += tr.steps.size();
    AdvantageBatch batch;
    batch.observations.resize(static_cast<Eigen::Index>(env::kObservationSize), static_cast<Eigen::Index>(n));
    batch.actions.resize(2, static_cast<Eigen::Index>(n));
    batch.old_log_probs.reserve(n);
    batch.advantages.reserve(n);
    batch.value_targets.reserve(n);

    Eigen::Index col = 0;
    for (const auto& tr : trajectories) {
        std::vector<double> rewards, values;
        for (const auto& s : tr.steps) {
            rewards.push_back(s.reward * config.reward_scale);
            values.push_back(s.value_estimate);
        }
        values.push_back(tr.bootstrap_value);
        const auto adv = compute_gae(rewards, values, config.gamma, config.lambda);
        for (std::size_t t = 0; t < tr.steps.size(); ++t, ++col) {
            for (std::size_t k = 0; k < env::kObservationSize; ++k)
                batch.observations(static_cast<Eigen::Index>(k), col) = tr.observations[t][k];
            batch.actions(0, col) = tr.steps[t].raw_action[0];
            batch.actions(1, col) = tr.steps[t].raw_action[1];
            batch.old_log_probs.push_back(tr.steps[t].log_prob);
            batch.advantages.push_back(adv[t]);
            batch.value_targets.push_back(adv[t] + values[t]);
        }
    }

    if (config.normalize_advantages && n > 1) {
        const double mean = std::accumulate(batch.advantages.begin(), batch.advantages.end(), 0.0) / n;
        double var = 0.0;
        for (const double a : batch.advantages) var += (a - mean) * (a - mean);
        const double std = std::sqrt(var / n);
        for (double& a : batch.advantages) a = (a - mean) / std::max(std, 1e-8);
    }
    return batch;
}

namespace {

nn::MatrixXd gather(const nn::MatrixXd& m, std::span<const std::size_t> idx) {
    nn::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(idx[j]));
    return out;
}

void clip_gradients(nn::Gradients& g, nn::VectorXd* extra, double max_norm) {
    if (max_norm <= 0.0) return;
    const double norm = std::sqrt(g.squared_norm() + (extra ? extra->squaredNorm() : 0.0));
    if (norm > max_norm) {
        const double f = max_norm / (norm + 1e-12);
        g.scale(f);
        if (extra) *extra *= f;
    }
}

struct Accum {
    double sum = 0.0;
    std::size_t n = 0;
    void add(double v) { sum += v; ++n; }
    double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
};

class Updater {
public:
    Updater(Policy& policy, nn::OptimizerState& actor_opt, nn::OptimizerState& critic_opt, const AdvantageBatch& batch,
            const PpoConfig& config)
        : policy_(policy), actor_opt_(actor_opt), critic_opt_(critic_opt), batch_(batch), config_(config),
          active_(policy.active_dims()) {}

    void policy_step(std::span<const std::size_t> idx) {
        const auto b = static_cast<Eigen::Index>(idx.size());
        const auto obs = gather(batch_.observations, idx);
        const auto act = gather(batch_.actions, idx);
        nn::ForwardCache cache;
        const nn::MatrixXd mean = nn::forward_batch(policy_.actor, obs, &cache);
        const nn::VectorXd inv_var = (-2.0 * policy_.log_std.array()).exp().matrix();

        nn::MatrixXd grad_mean = nn::MatrixXd::Zero(2, b);
        nn::VectorXd grad_log_std = nn::VectorXd::Zero(2);
        double objective = 0.0;
        std::size_t clipped = 0;
        for (Eigen::Index j = 0; j < b; ++j) {
            const auto i = idx[static_cast<std::size_t>(j)];
            const nn::GaussianPolicyHead head{mean.col(j), policy_.log_std};
            const double a[2] = {act(0, j), act(1, j)};
            const double lp = nn::gaussian_logprob(head, a, active_);
            const double ratio = std::exp(lp - batch_.old_log_probs[i]);
            const double adv = batch_.advantages[i];
            objective += clipped_surrogate(ratio, adv, config_.clip_epsilon);
            if (std::abs(ratio - 1.0) > config_.clip_epsilon) ++clipped;
            // d(-objective/B)/d(log prob); zero where the clipped branch is selected.
            const double unclipped = ratio * adv;
            const double bounded = std::clamp(ratio, 1.0 - config_.clip_epsilon, 1.0 + config_.clip_epsilon) * adv;
            const double dlp = unclipped <= bounded ? -unclipped / static_cast<double>(b) : 0.0;
            for (Eigen::Index k = 0; k < 2; ++k) {
                if (!active_[static_cast<std::size_t>(k)]) continue;
                const double diff = a[k] - mean(k, j);
                grad_mean(k, j) = dlp * diff * inv_var[k];
                grad_log_std[k] += dlp * (diff * diff * inv_var[k] - 1.0);
            }
        }
        const double entropy = nn::gaussian_entropy(policy_.log_std, active_);
        for (Eigen::Index k = 0; k < 2; ++k)
            if (active_[static_cast<std::size_t>(k)]) grad_log_std[k] -= config_.entropy_coef;

        auto grads = nn::backward_batch(policy_.actor, cache, grad_mean);
        clip_gradients(grads, &grad_log_std, config_.max_grad_norm);
        nn::adam_step(actor_opt_, policy_.actor, grads, &policy_.log_std, &grad_log_std);
        nn::GaussianPolicyHead clamp{{}, policy_.log_std};
        clamp.clamp_log_std();
        policy_.log_std = clamp.log_std;

        policy_loss_.add(-objective / static_cast<double>(b) - config_.entropy_coef * entropy);
        clip_.add(static_cast<double>(clipped) / static_cast<double>(b));
        entropy_.add(entropy);
    }

    void value_step(std::span<const std::size_t> idx) {
        const auto b = static_cast<Eigen::Index>(idx.size());
        const auto obs = gather(batch_.observations, idx);
        nn::ForwardCache cache;
        const nn::MatrixXd v = nn::forward_batch(policy_.critic, obs, &cache);
        nn::MatrixXd upstream(1, b);
        std::vector<double> pred(static_cast<std::size_t>(b)), target(static_cast<std::size_t>(b));
        for (Eigen::Index j = 0; j < b; ++j) {
            const auto i = idx[static_cast<std::size_t>(j)];
            pred[static_cast<std::size_t>(j)] = v(0, j);
            target[static_cast<std::size_t>(j)] = batch_.value_targets[i];
            const double e = v(0, j) - batch_.value_targets[i];
            upstream(0, j) =
                (config_.value_loss == ValueLossKind::squared ? 2.0 * e : huber_grad(e)) / static_cast<double>(b);
        }
        value_loss_.add(value_loss(pred, target, config_.value_loss));
        auto grads = nn::backward_batch(policy_.critic, cache, upstream);
        clip_gradients(grads, nullptr, config_.max_grad_norm);
        nn::adam_step(critic_opt_, policy_.critic, grads);
    }

    UpdateStats stats() const {
        return {policy_loss_.mean(), value_loss_.mean(), clip_.mean(), entropy_.n ? entropy_.mean()
                                                                                    : nn::gaussian_entropy(policy_.log_std, active_)};
    }

private:
    Policy& policy_;
    nn::OptimizerState& actor_opt_;
    nn::OptimizerState& critic_opt_;
    const AdvantageBatch& batch_;
    const PpoConfig& config_;
    std::array<std::uint8_t, 2> active_;
    Accum policy_loss_, value_loss_, clip_, entropy_;
};

}  // namespace

UpdateStats update_policy(Policy& policy, nn::OptimizerState& actor_opt, nn::OptimizerState& critic_opt,
                          const AdvantageBatch& batch, const PpoConfig& config, std::uint64_t iteration) {
    const std::size_t n = batch.advantages.size();
    Updater up(policy, actor_opt, critic_opt, batch, config);
    if (n == 0) return up.stats();
    nn::Rng rng(derive_seed(config.seed, iteration, 0xA11CE));
    std::vector<std::size_t> order(n);

    auto for_each_minibatch = [&](auto&& fn) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += config.minibatch_size) {
            const std::size_t len = std::min(config.minibatch_size, n - start);
            fn(std::span<const std::size_t>(order.data() + start, len));
        }
    };

    if (config.update_order == UpdateOrder::sequential) {
        for (std::size_t e = 0; e < config.epochs_per_iter; ++e)
            for_each_minibatch([&](auto idx) { up.policy_step(idx); });
        for (std::size_t e = 0; e < config.epochs_per_iter; ++e)
            for_each_minibatch([&](auto idx) { up.value_step(idx); });
    } else {
        for (std::size_t e = 0; e < config.epochs_per_iter; ++e)
            for_each_minibatch([&](auto idx) {
                up.policy_step(idx);
                up.value_step(idx);
            });
    }
    return up.stats();
}

std::vector<double> recompute_log_probs(const Policy& policy, const AdvantageBatch& batch) {
    const nn::MatrixXd mean = nn::forward_batch(policy.actor, batch.observations);
    const auto active = policy.active_dims();
    std::vector<double> out(static_cast<std::size_t>(mean.cols()));
    for (Eigen::Index j = 0; j < mean.cols(); ++j) {
        const double a[2] = {batch.actions(0, j), batch.actions(1, j)};
        out[static_cast<std::size_t>(j)] = nn::gaussian_logprob({mean.col(j), policy.log_std}, a, active);
    }
    return out;
}

// ---------------------------------------------------------------------------

void write_metrics_header(std::ostream& out) {
    out << "iteration,mean_return,value_loss,policy_loss,clip_fraction,entropy,wall_time_s\n";
}

void write_metrics_row(std::ostream& out, const IterationMetrics& m, bool record_wall_time) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n",
                  static_cast<unsigned long long>(m.iteration), m.mean_return, m.value_loss, m.policy_loss,
                  m.clip_fraction, m.entropy, record_wall_time ? m.wall_time_s : 0.0);
    out << buf;
}

namespace {

bool all_finite(const nn::NetworkParams& net) {
    for (const auto& l : net.layers)
        if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
}

std::string diagnostic_json(const IterationMetrics& m, const std::string& reason) {
    std::ostringstream os;
    os << std::setprecision(17) << "{\n  \"reason\": \"" << reason << "\",\n  \"iteration\": " << m.iteration
       << ",\n  \"mean_return\": \"" << m.mean_return << "\",\n  \"value_loss\": \"" << m.value_loss
       << "\",\n  \"policy_loss\": \"" << m.policy_loss << "\",\n  \"clip_fraction\": \"" << m.clip_fraction
       << "\",\n  \"entropy\": \"" << m.entropy << "\"\n}\n";
    return os.str();
}

}  // namespace

TrainResult train(const PpoConfig& config, std::shared_ptr<const market::PriceSeries> series,
                  const battery::BatteryParams& params, const env::EnvConfig& env_config,
                  const TrainOptions& options) {
    config.validate();
    params.validate();
    if (!series) throw std::invalid_argument("train: no price series");

    TrainResult result;
    if (options.resume_from) {
        check_compatible(*options.resume_from, config, env_config);
        result.checkpoint = *options.resume_from;
        result.checkpoint.policy.mode = env_config.mode;
    } else {
        result.checkpoint = initial_checkpoint(config, env_config);
    }
    auto& ckpt = result.checkpoint;
    ckpt.actor_opt.config.learning_rate = config.actor_lr;
    ckpt.critic_opt.config.learning_rate = config.critic_lr;

    const auto t_start = std::chrono::steady_clock::now();
    for (std::uint64_t iter = ckpt.iteration; iter < config.total_iters; ++iter) {
        std::vector<env::MarketEnv> envs;
        envs.reserve(config.trajectories_per_iter);
        for (std::size_t d = 0; d < config.trajectories_per_iter; ++d)
            envs.emplace_back(series, params, env_config, derive_seed(config.seed, iter, 0xE0000 + d));

        const auto trajectories = collect_trajectories(ckpt.policy, envs, config, iter);
        const auto batch = build_batch(trajectories, config);
        const auto stats = update_policy(ckpt.policy, ckpt.actor_opt, ckpt.critic_opt, batch, config, iter);

        IterationMetrics m;
        m.iteration = iter;
        double total = 0.0;
        for (const auto& tr : trajectories)
            for (const auto& s : tr.steps) total += s.reward;
        m.mean_return = total / static_cast<double>(trajectories.size());
        m.value_loss = stats.value_loss;
        m.policy_loss = stats.policy_loss;
        m.clip_fraction = stats.clip_fraction;
        m.entropy = stats.entropy;
        m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

        const bool finite = std::isfinite(m.mean_return) && std::isfinite(m.value_loss) &&
                            std::isfinite(m.policy_loss) && std::isfinite(m.entropy) &&
                            all_finite(ckpt.policy.actor) && all_finite(ckpt.policy.critic) &&
                            ckpt.policy.log_std.allFinite();
        if (!finite)
            throw NonFiniteLoss("non-finite loss or parameters at iteration " + std::to_string(iter),
                                diagnostic_json(m, "non-finite loss or parameters"));

        ckpt.iteration = iter + 1;
        result.metrics.push_back(m);
        if (options.on_iteration) options.on_iteration(m);
        if (options.on_checkpoint && config.checkpoint_every > 0 && ckpt.iteration % config.checkpoint_every == 0)
            options.on_checkpoint(ckpt);
    }
    return result;
}

// ---------------------------------------------------------------------------

std::vector<double> rollout_profit(const Policy& policy, std::shared_ptr<const market::PriceSeries> series,
                                   const battery::BatteryParams& params, env::EnvConfig env_config,
                                   bool deterministic, std::uint64_t seed) {
    env::MarketEnv env(std::move(series), params, env_config, derive_seed(seed, 0x5167));
    nn::Rng rng(derive_seed(seed, 0xAC7));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> cumulative;
    double total = 0.0;
    for (std::size_t w = 0; w < env.num_episodes(); ++w) {
        env.reset(w);
        while (!env.done()) {
            const auto head = policy.head(env.observe());
            env::RawAction raw{};
            for (std::size_t i = 0; i < raw.size(); ++i) {
                const auto k = static_cast<Eigen::Index>(i);
                raw[i] = head.mean[k] + (deterministic ? 0.0 : std::exp(head.log_std[k]) * normal(rng));
            }
            total += env.step(raw).reward;
            cumulative.push_back(total);
        }
    }
    return cumulative;
}

EvalResult evaluate(const Checkpoint& checkpoint, std::shared_ptr<const market::PriceSeries> series,
                    const battery::BatteryParams& params, const env::EnvConfig& env_config, bool deterministic,
                    std::uint64_t seed) {
    EvalResult r;
    auto with_mode = [&](MarketMode mode) {
        auto cfg = env_config;
        cfg.mode = mode;
        return cfg;
    };
    r.joint = rollout_profit(checkpoint.policy, series, params, with_mode(checkpoint.policy.mode), deterministic, seed);
    r.energy_only =
        rollout_profit(checkpoint.policy, series, params, with_mode(MarketMode::energy_only), deterministic, seed);
    r.fcas_only =
        rollout_profit(checkpoint.policy, series, params, with_mode(MarketMode::fcas_only), deterministic, seed);
    return r;
}

}  // namespace bess::ppo
