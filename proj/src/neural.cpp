#include "bess/neural.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>

namespace bess::nn {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

std::string to_string(Activation a) {
    switch (a) {
        case Activation::linear: return "linear";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    return "linear";
}

Eigen::Index NetworkParams::input_size() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
Eigen::Index NetworkParams::output_size() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

std::size_t NetworkParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

void NetworkParams::validate() const {
    if (layers.empty()) throw ShapeMismatch("network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.weight.rows() == 0 || l.weight.cols() == 0) throw ShapeMismatch("empty layer " + std::to_string(i));
        if (l.bias.size() != l.weight.rows()) throw ShapeMismatch("bias size mismatch in layer " + std::to_string(i));
        if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows())
            throw ShapeMismatch("layer " + std::to_string(i) + " does not compose with its predecessor");
        if (!l.weight.allFinite() || !l.bias.allFinite())
            throw ShapeMismatch("non-finite parameters in layer " + std::to_string(i));
    }
}

bool NetworkParams::same_shape(const NetworkParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto &a = layers[i], &b = other.layers[i];
        if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() || a.activation != b.activation)
            return false;
    }
    return true;
}

namespace {

MatrixXd orthogonal(Eigen::Index rows, Eigen::Index cols, double gain, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool tall = rows >= cols;
    MatrixXd a(tall ? rows : cols, tall ? cols : rows);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = normal(rng);
    Eigen::HouseholderQR<MatrixXd> qr(a);
    MatrixXd q = qr.householderQ() * MatrixXd::Identity(a.rows(), a.cols());
    const MatrixXd r = qr.matrixQR();
    for (Eigen::Index j = 0; j < q.cols(); ++j)
        if (r(j, j) < 0.0) q.col(j) *= -1.0;
    return gain * (tall ? q : MatrixXd(q.transpose()));
}

void apply_activation(Activation act, MatrixXd& z) {
    switch (act) {
        case Activation::linear: break;
        case Activation::relu: z = z.cwiseMax(0.0); break;
        case Activation::tanh: z = z.array().tanh().matrix(); break;
    }
}

// d(activation)/dz expressed through the activation output y.
void apply_derivative(Activation act, const MatrixXd& y, MatrixXd& grad) {
    switch (act) {
        case Activation::linear: break;
        case Activation::relu: grad = (y.array() > 0.0).select(grad, 0.0); break;
        case Activation::tanh: grad = grad.cwiseProduct((1.0 - y.array().square()).matrix()); break;
    }
}

}  // namespace

NetworkParams make_mlp(Eigen::Index input, std::span<const int> hidden, Eigen::Index output, Activation hidden_act,
                       Activation output_act, const InitSpec& init, Rng& rng) {
    NetworkParams net;
    Eigen::Index prev = input;
    for (const int width : hidden) {
        if (width <= 0) throw ShapeMismatch("hidden layer width must be positive");
        net.layers.push_back({orthogonal(width, prev, init.hidden_gain, rng), VectorXd::Zero(width), hidden_act});
        prev = width;
    }
    net.layers.push_back({orthogonal(output, prev, init.output_gain, rng), VectorXd::Zero(output), output_act});
    net.validate();
    return net;
}

MatrixXd forward_batch(const NetworkParams& params, const MatrixXd& inputs, ForwardCache* cache) {
    if (params.layers.empty() || inputs.rows() != params.input_size())
        throw ShapeMismatch("input has " + std::to_string(inputs.rows()) + " rows, network expects " +
                            std::to_string(params.input_size()));
    if (cache) {
        cache->activations.clear();
        cache->activations.reserve(params.layers.size() + 1);
        cache->activations.push_back(inputs);
    }
    MatrixXd x = inputs;
    for (const auto& layer : params.layers) {
        MatrixXd z = layer.weight * x;
        z.colwise() += layer.bias;
        apply_activation(layer.activation, z);
        x = std::move(z);
        if (cache) cache->activations.push_back(x);
    }
    return x;
}

VectorXd forward(const NetworkParams& params, const VectorXd& input) {
    return forward_batch(params, MatrixXd(input)).col(0);
}

Gradients Gradients::zeros_like(const NetworkParams& params) {
    Gradients g;
    for (const auto& l : params.layers) {
        g.weight.push_back(MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
        g.bias.push_back(VectorXd::Zero(l.bias.size()));
    }
    return g;
}

double Gradients::squared_norm() const {
    double s = 0.0;
    for (const auto& w : weight) s += w.squaredNorm();
    for (const auto& b : bias) s += b.squaredNorm();
    return s;
}

void Gradients::scale(double factor) {
    for (auto& w : weight) w *= factor;
    for (auto& b : bias) b *= factor;
    input *= factor;
}

Gradients backward_batch(const NetworkParams& params, const ForwardCache& cache, const MatrixXd& upstream) {
    const std::size_t n = params.layers.size();
    if (cache.activations.size() != n + 1) throw ShapeMismatch("forward cache does not match network depth");
    if (upstream.rows() != params.output_size() || upstream.cols() != cache.activations.back().cols())
        throw ShapeMismatch("upstream gradient shape does not match network output");

    Gradients g;
    g.weight.resize(n);
    g.bias.resize(n);
    MatrixXd delta = upstream;
    for (std::size_t k = n; k-- > 0;) {
        const auto& layer = params.layers[k];
        apply_derivative(layer.activation, cache.activations[k + 1], delta);
        g.weight[k].noalias() = delta * cache.activations[k].transpose();
        g.bias[k] = delta.rowwise().sum();
        MatrixXd next = layer.weight.transpose() * delta;
        delta = std::move(next);
    }
    g.input = std::move(delta);
    return g;
}

Gradients backward(const NetworkParams& params, const VectorXd& input, const VectorXd& upstream) {
    ForwardCache cache;
    forward_batch(params, MatrixXd(input), &cache);
    return backward_batch(params, cache, MatrixXd(upstream));
}

// ---------------------------------------------------------------------------

void GaussianPolicyHead::clamp_log_std() { log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax); }

namespace {

bool is_active(std::span<const std::uint8_t> active, Eigen::Index i) {
    return active.empty() || active[static_cast<std::size_t>(i)] != 0;
}

}  // namespace

double gaussian_logprob(const GaussianPolicyHead& head, std::span<const double> action,
                        std::span<const std::uint8_t> active) {
    const auto d = head.mean.size();
    if (head.log_std.size() != d || static_cast<Eigen::Index>(action.size()) != d ||
        (!active.empty() && static_cast<Eigen::Index>(active.size()) != d))
        throw ShapeMismatch("gaussian_logprob: dimension mismatch");
    constexpr double half_log_2pi = 0.91893853320467274178;
    double lp = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
        if (!is_active(active, i)) continue;
        const double z = (action[static_cast<std::size_t>(i)] - head.mean[i]) * std::exp(-head.log_std[i]);
        lp += -0.5 * z * z - head.log_std[i] - half_log_2pi;
    }
    return lp;
}

double gaussian_entropy(const VectorXd& log_std, std::span<const std::uint8_t> active) {
    const double per_dim = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    double h = 0.0;
    for (Eigen::Index i = 0; i < log_std.size(); ++i)
        if (is_active(active, i)) h += per_dim + log_std[i];
    return h;
}

// ---------------------------------------------------------------------------

OptimizerState OptimizerState::for_network(const NetworkParams& params, AdamConfig config, Eigen::Index extra_size) {
    OptimizerState s;
    s.config = config;
    for (const auto& l : params.layers) {
        s.m_weight.push_back(MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
        s.v_weight.push_back(MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
        s.m_bias.push_back(VectorXd::Zero(l.bias.size()));
        s.v_bias.push_back(VectorXd::Zero(l.bias.size()));
    }
    s.m_extra = VectorXd::Zero(extra_size);
    s.v_extra = VectorXd::Zero(extra_size);
    return s;
}

bool OptimizerState::matches(const NetworkParams& params, Eigen::Index extra_size) const {
    if (m_weight.size() != params.layers.size() || m_extra.size() != extra_size) return false;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& l = params.layers[i];
        if (m_weight[i].rows() != l.weight.rows() || m_weight[i].cols() != l.weight.cols() ||
            m_bias[i].size() != l.bias.size() || v_weight[i].rows() != l.weight.rows() ||
            v_weight[i].cols() != l.weight.cols() || v_bias[i].size() != l.bias.size())
            return false;
    }
    return v_extra.size() == extra_size;
}

namespace {

template <typename P, typename G, typename M>
void adam_update(P& param, const G& grad, M& m, M& v, const AdamConfig& c, double bc1, double bc2) {
    m = c.beta1 * m + (1.0 - c.beta1) * grad;
    v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseAbs2();
    param.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
}

}  // namespace

void adam_step(OptimizerState& opt, NetworkParams& params, const Gradients& grads, VectorXd* extra,
               const VectorXd* extra_grad) {
    const Eigen::Index extra_size = extra ? extra->size() : 0;
    if (!opt.matches(params, extra_size)) throw ShapeMismatch("optimizer state does not mirror parameters");
    if (grads.weight.size() != params.layers.size() || grads.bias.size() != params.layers.size())
        throw ShapeMismatch("gradient depth does not match network");
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        if (grads.weight[i].rows() != params.layers[i].weight.rows() ||
            grads.weight[i].cols() != params.layers[i].weight.cols() ||
            grads.bias[i].size() != params.layers[i].bias.size())
            throw ShapeMismatch("gradient shape mismatch in layer " + std::to_string(i));
    }
    if ((extra == nullptr) != (extra_grad == nullptr) || (extra && extra_grad->size() != extra->size()))
        throw ShapeMismatch("extra parameter/gradient mismatch");

    ++opt.step;
    const double t = static_cast<double>(opt.step);
    const double bc1 = 1.0 - std::pow(opt.config.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.config.beta2, t);
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        adam_update(params.layers[i].weight, grads.weight[i], opt.m_weight[i], opt.v_weight[i], opt.config, bc1, bc2);
        adam_update(params.layers[i].bias, grads.bias[i], opt.m_bias[i], opt.v_bias[i], opt.config, bc1, bc2);
    }
    if (extra) adam_update(*extra, *extra_grad, opt.m_extra, opt.v_extra, opt.config, bc1, bc2);
}

// ---------------------------------------------------------------------------

namespace {

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void put_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("truncated checkpoint");
    return v;
}
double get_f64(std::istream& in) {
    double v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("truncated checkpoint");
    return v;
}

constexpr std::uint64_t kMaxDim = 1u << 20;

std::uint64_t get_dim(std::istream& in) {
    const auto v = get_u64(in);
    if (v > kMaxDim) throw std::runtime_error("corrupt checkpoint: dimension too large");
    return v;
}

void write_matrix(std::ostream& out, const MatrixXd& m) {
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
}

MatrixXd read_matrix(std::istream& in) {
    const auto rows = static_cast<Eigen::Index>(get_dim(in));
    const auto cols = static_cast<Eigen::Index>(get_dim(in));
    MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = get_f64(in);
    return m;
}

}  // namespace

void write_vector(std::ostream& out, const VectorXd& v) {
    put_u64(out, static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(out, v[i]);
}

VectorXd read_vector(std::istream& in) {
    const auto n = static_cast<Eigen::Index>(get_dim(in));
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = get_f64(in);
    return v;
}

void write_network(std::ostream& out, const NetworkParams& params) {
    put_u64(out, params.layers.size());
    for (const auto& l : params.layers) {
        put_u64(out, static_cast<std::uint64_t>(l.activation));
        write_matrix(out, l.weight);
        write_vector(out, l.bias);
    }
}

NetworkParams read_network(std::istream& in) {
    NetworkParams net;
    const auto n = get_dim(in);
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto act = get_u64(in);
        if (act > 2) throw std::runtime_error("corrupt checkpoint: unknown activation");
        Layer l;
        l.activation = static_cast<Activation>(act);
        l.weight = read_matrix(in);
        l.bias = read_vector(in);
        net.layers.push_back(std::move(l));
    }
    net.validate();
    return net;
}

void write_optimizer(std::ostream& out, const OptimizerState& opt) {
    put_f64(out, opt.config.learning_rate);
    put_f64(out, opt.config.beta1);
    put_f64(out, opt.config.beta2);
    put_f64(out, opt.config.epsilon);
    put_u64(out, opt.step);
    put_u64(out, opt.m_weight.size());
    for (std::size_t i = 0; i < opt.m_weight.size(); ++i) {
        write_matrix(out, opt.m_weight[i]);
        write_matrix(out, opt.v_weight[i]);
        write_vector(out, opt.m_bias[i]);
        write_vector(out, opt.v_bias[i]);
    }
    write_vector(out, opt.m_extra);
    write_vector(out, opt.v_extra);
}

OptimizerState read_optimizer(std::istream& in) {
    OptimizerState opt;
    opt.config.learning_rate = get_f64(in);
    opt.config.beta1 = get_f64(in);
    opt.config.beta2 = get_f64(in);
    opt.config.epsilon = get_f64(in);
    opt.step = get_u64(in);
    const auto n = get_dim(in);
    for (std::uint64_t i = 0; i < n; ++i) {
        opt.m_weight.push_back(read_matrix(in));
        opt.v_weight.push_back(read_matrix(in));
        opt.m_bias.push_back(read_vector(in));
        opt.v_bias.push_back(read_vector(in));
    }
    opt.m_extra = read_vector(in);
    opt.v_extra = read_vector(in);
    return opt;
}

}  // namespace bess::nn
