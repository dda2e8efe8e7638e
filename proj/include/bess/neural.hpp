// Small dense feedforward networks with exact reverse-mode gradients, a
// diagonal Gaussian policy head and the Adam optimizer.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bess::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Rng = std::mt19937_64;

class ShapeMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Activation : std::uint8_t { linear = 0, relu = 1, tanh = 2 };
std::string to_string(Activation a);

struct Layer {
    MatrixXd weight;  // out x in
    VectorXd bias;    // out
    Activation activation = Activation::linear;
};

struct NetworkParams {
    std::vector<Layer> layers;

    Eigen::Index input_size() const;
    Eigen::Index output_size() const;
    std::size_t parameter_count() const;
    /// Throws ShapeMismatch when consecutive layers do not compose or weights are non-finite.
    void validate() const;
    bool same_shape(const NetworkParams& other) const;
};

struct InitSpec {
    double hidden_gain = 1.4142135623730951;  // sqrt(2), ReLU
    double output_gain = 1.0;
};

/// Dense MLP with orthogonal-initialized weights and zero biases.
NetworkParams make_mlp(Eigen::Index input, std::span<const int> hidden, Eigen::Index output, Activation hidden_act,
                       Activation output_act, const InitSpec& init, Rng& rng);

VectorXd forward(const NetworkParams& params, const VectorXd& input);

/// Post-activation outputs per layer; `activations[0]` is the input batch.
struct ForwardCache {
    std::vector<MatrixXd> activations;
};

/// Column-per-sample batch evaluation.
MatrixXd forward_batch(const NetworkParams& params, const MatrixXd& inputs, ForwardCache* cache = nullptr);

struct Gradients {
    std::vector<MatrixXd> weight;
    std::vector<VectorXd> bias;
    MatrixXd input;

    static Gradients zeros_like(const NetworkParams& params);
    double squared_norm() const;
    void scale(double factor);
};

/// Gradient of <upstream, forward(input)> with respect to every parameter and the input.
Gradients backward(const NetworkParams& params, const VectorXd& input, const VectorXd& upstream);

/// Batch form: upstream is out x batch; parameter gradients are summed over the batch.
Gradients backward_batch(const NetworkParams& params, const ForwardCache& cache, const MatrixXd& upstream);

// ---------------------------------------------------------------------------

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

/// Diagonal Gaussian with state-dependent mean and state-independent log std.
struct GaussianPolicyHead {
    VectorXd mean;
    VectorXd log_std;

    void clamp_log_std();
};

/// Sum of per-dimension log densities over the dimensions flagged in `active`
/// (all dimensions when `active` is empty).
double gaussian_logprob(const GaussianPolicyHead& head, std::span<const double> action,
                        std::span<const std::uint8_t> active = {});

double gaussian_entropy(const VectorXd& log_std, std::span<const std::uint8_t> active = {});

// ---------------------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<MatrixXd> m_weight, v_weight;
    std::vector<VectorXd> m_bias, v_bias;
    VectorXd m_extra, v_extra;  // for parameters living outside the network (policy log std)

    static OptimizerState for_network(const NetworkParams& params, AdamConfig config, Eigen::Index extra_size = 0);
    bool matches(const NetworkParams& params, Eigen::Index extra_size) const;
};

/// Bias-corrected Adam update, in place. Throws ShapeMismatch.
void adam_step(OptimizerState& opt, NetworkParams& params, const Gradients& grads, VectorXd* extra = nullptr,
               const VectorXd* extra_grad = nullptr);

// ---------------------------------------------------------------------------
// Binary serialization helpers (little-endian, 64-bit floats, row-major).

void write_network(std::ostream& out, const NetworkParams& params);
NetworkParams read_network(std::istream& in);
void write_optimizer(std::ostream& out, const OptimizerState& opt);
OptimizerState read_optimizer(std::istream& in);
void write_vector(std::ostream& out, const VectorXd& v);
VectorXd read_vector(std::istream& in);

}  // namespace bess::nn
