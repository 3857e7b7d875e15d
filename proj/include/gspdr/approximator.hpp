#pragma once

// Small dense feedforward networks with hand-written reverse mode.
// Samples are stored as columns: an input batch is (input_dim x batch).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gspdr/error.hpp"

namespace gspdr {

enum class Activation { identity, relu, tanh, sigmoid };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ParseError("unknown activation '" + s + "'");
}

// Sigmoid pre-activations are clamped so the output stays strictly inside (0, 1).
inline constexpr double kSigmoidClamp = 30.0;

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::identity;

  int in() const { return static_cast<int>(weight.cols()); }
  int out() const { return static_cast<int>(weight.rows()); }
};

struct Mlp {
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in(); }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  void validate() const {
    if (layers.empty()) throw ShapeError("network has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      if (l.bias.size() != l.weight.rows())
        throw ShapeError("layer " + std::to_string(k) + " bias size does not match weight rows");
      if (k > 0 && layers[k - 1].out() != l.in())
        throw ShapeError("layer " + std::to_string(k) + " input does not match previous output");
      if (!l.weight.allFinite() || !l.bias.allFinite())
        throw NumericError("layer " + std::to_string(k) + " has non-finite parameters");
    }
  }

  bool same_shape(const Mlp& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t k = 0; k < layers.size(); ++k)
      if (layers[k].in() != other.layers[k].in() || layers[k].out() != other.layers[k].out() ||
          layers[k].activation != other.layers[k].activation)
        return false;
    return true;
  }
};

// Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline Mlp make_mlp(const std::vector<int>& sizes, Activation hidden, Activation output,
                    std::mt19937_64& rng) {
  if (sizes.size() < 2) throw ShapeError("network needs at least input and output sizes");
  Mlp net;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    if (sizes[k] < 1 || sizes[k + 1] < 1) throw ShapeError("layer sizes must be positive");
    Layer l;
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[k]));
    std::uniform_real_distribution<double> u(-bound, bound);
    l.weight.resize(sizes[k + 1], sizes[k]);
    l.bias.resize(sizes[k + 1]);
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = u(rng);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = u(rng);
    l.activation = (k + 2 == sizes.size()) ? output : hidden;
    net.layers.push_back(std::move(l));
  }
  return net;
}

namespace detail {

inline void apply_activation(Activation a, Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::tanh: z = z.array().tanh().matrix(); break;
    case Activation::sigmoid:
      z = (1.0 / (1.0 + (-z.array().cwiseMax(-kSigmoidClamp).cwiseMin(kSigmoidClamp)).exp())).matrix();
      break;
  }
}

// d(activation)/d(pre) evaluated elementwise, multiplied into grad in place.
inline void activation_backward(Activation a, const Eigen::MatrixXd& pre, const Eigen::MatrixXd& post,
                                Eigen::MatrixXd& grad) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: grad = (pre.array() > 0.0).select(grad, 0.0); break;
    case Activation::tanh: grad.array() *= 1.0 - post.array().square(); break;
    case Activation::sigmoid:
      grad.array() *= post.array() * (1.0 - post.array());
      grad = (pre.array().abs() < kSigmoidClamp).select(grad, 0.0);
      break;
  }
}

}  // namespace detail

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  std::vector<Eigen::MatrixXd> post;    // output of each layer
};

inline Eigen::MatrixXd forward(const Mlp& net, const Eigen::MatrixXd& input, ForwardCache* cache = nullptr) {
  if (input.rows() != net.input_dim())
    throw ShapeError("input has " + std::to_string(input.rows()) + " rows, network expects " +
                     std::to_string(net.input_dim()));
  if (cache) {
    cache->inputs.resize(net.layers.size());
    cache->pre.resize(net.layers.size());
    cache->post.resize(net.layers.size());
  }
  Eigen::MatrixXd x = input;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto& l = net.layers[k];
    Eigen::MatrixXd z(l.out(), x.cols());
    z.noalias() = l.weight * x;
    z.colwise() += l.bias;
    if (cache) {
      cache->inputs[k] = std::move(x);
      cache->pre[k] = z;
    }
    detail::apply_activation(l.activation, z);
    if (cache) cache->post[k] = z;
    x = std::move(z);
  }
  return x;
}

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
  Eigen::MatrixXd input;

  bool all_finite() const {
    for (const auto& w : weight)
      if (!w.allFinite()) return false;
    for (const auto& b : bias)
      if (!b.allFinite()) return false;
    return true;
  }
};

// Reverse mode: gradients of sum(output .* upstream) w.r.t. parameters and input.
// output_pre, if given, is an extra gradient on the last layer's pre-activation.
inline MlpGradients backward(const Mlp& net, const ForwardCache& cache, const Eigen::MatrixXd& upstream,
                             const Eigen::MatrixXd* output_pre = nullptr) {
  if (cache.pre.size() != net.layers.size()) throw ShapeError("forward cache does not match network");
  if (upstream.rows() != net.output_dim() || upstream.cols() != cache.post.back().cols())
    throw ShapeError("upstream gradient shape does not match network output");
  MlpGradients g;
  g.weight.resize(net.layers.size());
  g.bias.resize(net.layers.size());
  Eigen::MatrixXd delta = upstream;
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const auto& l = net.layers[k];
    detail::activation_backward(l.activation, cache.pre[k], cache.post[k], delta);
    if (output_pre && k + 1 == net.layers.size()) {
      if (output_pre->rows() != delta.rows() || output_pre->cols() != delta.cols())
        throw ShapeError("pre-activation gradient shape does not match network output");
      delta += *output_pre;
    }
    g.weight[k].noalias() = delta * cache.inputs[k].transpose();
    g.bias[k] = delta.rowwise().sum();
    Eigen::MatrixXd next(l.in(), delta.cols());
    next.noalias() = l.weight.transpose() * delta;
    delta = std::move(next);
  }
  g.input = std::move(delta);
  return g;
}

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Eigen::MatrixXd> m_weight, v_weight;
  std::vector<Eigen::VectorXd> m_bias, v_bias;

  AdamState() = default;
  AdamState(const Mlp& net, double learning_rate) : lr(learning_rate) {
    for (const auto& l : net.layers) {
      m_weight.push_back(Eigen::MatrixXd::Zero(l.out(), l.in()));
      v_weight.push_back(Eigen::MatrixXd::Zero(l.out(), l.in()));
      m_bias.push_back(Eigen::VectorXd::Zero(l.out()));
      v_bias.push_back(Eigen::VectorXd::Zero(l.out()));
    }
  }
};

// Bias-corrected Adam. Non-finite gradients leave both parameters and state untouched.
inline void adam_step(Mlp& net, const MlpGradients& grads, AdamState& opt) {
  if (grads.weight.size() != net.layers.size() || opt.m_weight.size() != net.layers.size())
    throw ShapeError("gradient/optimizer layer count does not match network");
  for (std::size_t k = 0; k < net.layers.size(); ++k)
    if (grads.weight[k].rows() != net.layers[k].out() || grads.weight[k].cols() != net.layers[k].in() ||
        grads.bias[k].size() != net.layers[k].out())
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(k));
  if (!grads.all_finite()) throw NumericError("non-finite gradient, Adam update skipped");

  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    param.array() -= opt.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.eps);
  };
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    update(net.layers[k].weight, grads.weight[k], opt.m_weight[k], opt.v_weight[k]);
    update(net.layers[k].bias, grads.bias[k], opt.m_bias[k], opt.v_bias[k]);
  }
}

// ---------------------------------------------------------------------------
// Two-head model: shared body with a reward head (identity output) and a
// discount head (sigmoid output).

struct TwoHeadModel {
  Mlp body;
  Mlp reward_head;
  Mlp discount_head;

  int input_dim() const { return body.input_dim(); }
};

inline TwoHeadModel make_two_head(int input_dim, const std::vector<int>& hidden, std::mt19937_64& rng) {
  if (hidden.empty()) throw ShapeError("two-head model needs at least one body layer");
  std::vector<int> sizes{input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  TwoHeadModel m;
  m.body = make_mlp(sizes, Activation::relu, Activation::relu, rng);
  m.reward_head = make_mlp({hidden.back(), 1}, Activation::identity, Activation::identity, rng);
  m.discount_head = make_mlp({hidden.back(), 1}, Activation::sigmoid, Activation::sigmoid, rng);
  return m;
}

struct TwoHeadCache {
  ForwardCache body, reward, discount;
};

struct TwoHeadOutput {
  Eigen::RowVectorXd reward;
  Eigen::RowVectorXd discount;
};

inline TwoHeadOutput forward(const TwoHeadModel& m, const Eigen::MatrixXd& input, TwoHeadCache* cache = nullptr) {
  const Eigen::MatrixXd h = forward(m.body, input, cache ? &cache->body : nullptr);
  TwoHeadOutput out;
  out.reward = forward(m.reward_head, h, cache ? &cache->reward : nullptr).row(0);
  out.discount = forward(m.discount_head, h, cache ? &cache->discount : nullptr).row(0);
  return out;
}

struct TwoHeadGradients {
  MlpGradients body, reward, discount;

  bool all_finite() const { return body.all_finite() && reward.all_finite() && discount.all_finite(); }
};

inline TwoHeadGradients backward(const TwoHeadModel& m, const TwoHeadCache& cache,
                                 const Eigen::RowVectorXd& upstream_reward,
                                 const Eigen::RowVectorXd& upstream_discount) {
  TwoHeadGradients g;
  g.reward = backward(m.reward_head, cache.reward, upstream_reward);
  g.discount = backward(m.discount_head, cache.discount, upstream_discount);
  g.body = backward(m.body, cache.body, g.reward.input + g.discount.input);
  return g;
}

struct TwoHeadAdam {
  AdamState body, reward, discount;

  TwoHeadAdam() = default;
  TwoHeadAdam(const TwoHeadModel& m, double lr)
      : body(m.body, lr), reward(m.reward_head, lr), discount(m.discount_head, lr) {}
};

inline void adam_step(TwoHeadModel& m, const TwoHeadGradients& g, TwoHeadAdam& opt) {
  if (!g.all_finite()) throw NumericError("non-finite gradient, Adam update skipped");
  adam_step(m.body, g.body, opt.body);
  adam_step(m.reward_head, g.reward, opt.reward);
  adam_step(m.discount_head, g.discount, opt.discount);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

inline std::vector<double*> parameter_pointers(Mlp& net) {
  std::vector<double*> p;
  for (auto& l : net.layers) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) p.push_back(l.weight.data() + i);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) p.push_back(l.bias.data() + i);
  }
  return p;
}

inline std::vector<double> flatten(const MlpGradients& g) {
  std::vector<double> out;
  for (std::size_t k = 0; k < g.weight.size(); ++k) {
    out.insert(out.end(), g.weight[k].data(), g.weight[k].data() + g.weight[k].size());
    out.insert(out.end(), g.bias[k].data(), g.bias[k].data() + g.bias[k].size());
  }
  return out;
}

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crossed a rectifier kink or sigmoid clamp
};

// Activation pattern of every rectifier / clamped sigmoid; a change under
// perturbation means the finite difference straddles a nondifferentiable point.
inline std::vector<bool> kink_signature(const Mlp& net, const ForwardCache& cache) {
  std::vector<bool> sig;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const auto a = net.layers[k].activation;
    if (a != Activation::relu && a != Activation::sigmoid) continue;
    const auto& pre = cache.pre[k];
    for (Eigen::Index i = 0; i < pre.size(); ++i)
      sig.push_back(a == Activation::relu ? pre.data()[i] > 0.0 : std::abs(pre.data()[i]) < kSigmoidClamp);
  }
  return sig;
}

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `objective` returns the scalar being differentiated and fills a kink signature.
template <class Objective>
GradientCheckResult finite_difference_check(const std::vector<double*>& params,
                                            const std::vector<double>& analytic, Objective&& objective,
                                            double step = 1e-5) {
  if (params.size() != analytic.size()) throw ShapeError("analytic gradient size mismatch");
  GradientCheckResult r;
  std::vector<bool> base_sig, sig_plus, sig_minus;
  objective(base_sig);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = *params[i];
    *params[i] = saved + step;
    const double fp = objective(sig_plus);
    *params[i] = saved - step;
    const double fm = objective(sig_minus);
    *params[i] = saved;
    if (sig_plus != base_sig || sig_minus != base_sig) {
      ++r.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * step);
    r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic[i], numeric));
    ++r.checked;
  }
  return r;
}

// Checks d/dparams and d/dinput of sum(forward(net, input) .* upstream).
inline GradientCheckResult gradient_check(const Mlp& net, const Eigen::MatrixXd& input,
                                          const Eigen::MatrixXd& upstream, double step = 1e-5) {
  Mlp work = net;
  ForwardCache cache;
  forward(work, input, &cache);
  const MlpGradients g = backward(work, cache, upstream);

  Eigen::MatrixXd x = input;
  auto objective = [&](std::vector<bool>& sig) {
    ForwardCache c;
    const double v = forward(work, x, &c).cwiseProduct(upstream).sum();
    sig = kink_signature(work, c);
    return v;
  };
  auto params = parameter_pointers(work);
  auto analytic = flatten(g);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    params.push_back(x.data() + i);
    analytic.push_back(g.input.data()[i]);
  }
  return finite_difference_check(params, analytic, objective, step);
}

inline GradientCheckResult gradient_check(const TwoHeadModel& model, const Eigen::MatrixXd& input,
                                          const Eigen::RowVectorXd& up_reward,
                                          const Eigen::RowVectorXd& up_discount, double step = 1e-5) {
  TwoHeadModel work = model;
  TwoHeadCache cache;
  forward(work, input, &cache);
  const TwoHeadGradients g = backward(work, cache, up_reward, up_discount);

  auto objective = [&](std::vector<bool>& sig) {
    TwoHeadCache c;
    const auto out = forward(work, input, &c);
    sig = kink_signature(work.body, c.body);
    const auto d = kink_signature(work.discount_head, c.discount);
    sig.insert(sig.end(), d.begin(), d.end());
    return out.reward.cwiseProduct(up_reward).sum() + out.discount.cwiseProduct(up_discount).sum();
  };
  auto params = parameter_pointers(work.body);
  auto analytic = flatten(g.body);
  for (auto* part : {&work.reward_head, &work.discount_head}) {
    auto p = parameter_pointers(*part);
    params.insert(params.end(), p.begin(), p.end());
  }
  for (const auto* part : {&g.reward, &g.discount}) {
    auto a = flatten(*part);
    analytic.insert(analytic.end(), a.begin(), a.end());
  }
  return finite_difference_check(params, analytic, objective, step);
}

// ---------------------------------------------------------------------------
// Text checkpoint format (version 1). Every number is written with 17
// significant digits so a save/load cycle is exact.
//
//   mlp <name> <layer_count>
//   layer <in> <out> <activation>
//   <out*in weights, row-major, space separated>
//   <out biases>
//   adam <name> <lr> <beta1> <beta2> <eps> <step> <layer_count>
//   then per layer: m_weight, v_weight (row-major), m_bias, v_bias lines

namespace detail {

template <class Derived>
void write_row_major(std::ostream& out, const Eigen::MatrixBase<Derived>& m) {
  bool first = true;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (!first) out << ' ';
      out << m(i, j);
      first = false;
    }
  out << '\n';
}

template <class Derived>
void read_row_major(std::istream& in, Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (!(in >> m(i, j))) throw ParseError("truncated matrix in checkpoint");
}

inline void expect_token(std::istream& in, const std::string& token) {
  std::string got;
  if (!(in >> got) || got != token)
    throw ParseError("checkpoint: expected '" + token + "', found '" + got + "'");
}

}  // namespace detail

inline void write_mlp(std::ostream& out, const std::string& name, const Mlp& net) {
  out.precision(17);
  out << "mlp " << name << ' ' << net.layers.size() << '\n';
  for (const auto& l : net.layers) {
    out << "layer " << l.in() << ' ' << l.out() << ' ' << to_string(l.activation) << '\n';
    detail::write_row_major(out, l.weight);
    detail::write_row_major(out, l.bias.transpose());
  }
}

inline Mlp read_mlp(std::istream& in, const std::string& name) {
  detail::expect_token(in, "mlp");
  detail::expect_token(in, name);
  std::size_t count = 0;
  if (!(in >> count)) throw ParseError("checkpoint: bad layer count for '" + name + "'");
  Mlp net;
  for (std::size_t k = 0; k < count; ++k) {
    detail::expect_token(in, "layer");
    int n_in = 0, n_out = 0;
    std::string act;
    if (!(in >> n_in >> n_out >> act) || n_in < 1 || n_out < 1)
      throw ParseError("checkpoint: bad layer header in '" + name + "'");
    Layer l;
    l.activation = activation_from_string(act);
    l.weight.resize(n_out, n_in);
    l.bias.resize(n_out);
    detail::read_row_major(in, l.weight);
    Eigen::RowVectorXd b(n_out);
    detail::read_row_major(in, b);
    l.bias = b.transpose();
    net.layers.push_back(std::move(l));
  }
  net.validate();
  return net;
}

inline void write_adam(std::ostream& out, const std::string& name, const AdamState& opt) {
  out.precision(17);
  out << "adam " << name << ' ' << opt.lr << ' ' << opt.beta1 << ' ' << opt.beta2 << ' ' << opt.eps << ' '
      << opt.step << ' ' << opt.m_weight.size() << '\n';
  for (std::size_t k = 0; k < opt.m_weight.size(); ++k) {
    out << opt.m_weight[k].rows() << ' ' << opt.m_weight[k].cols() << '\n';
    detail::write_row_major(out, opt.m_weight[k]);
    detail::write_row_major(out, opt.v_weight[k]);
    detail::write_row_major(out, opt.m_bias[k].transpose());
    detail::write_row_major(out, opt.v_bias[k].transpose());
  }
}

inline AdamState read_adam(std::istream& in, const std::string& name) {
  detail::expect_token(in, "adam");
  detail::expect_token(in, name);
  AdamState opt;
  std::size_t count = 0;
  if (!(in >> opt.lr >> opt.beta1 >> opt.beta2 >> opt.eps >> opt.step >> count))
    throw ParseError("checkpoint: bad optimizer header for '" + name + "'");
  for (std::size_t k = 0; k < count; ++k) {
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> rows >> cols) || rows < 1 || cols < 1) throw ParseError("checkpoint: bad optimizer shape");
    Eigen::MatrixXd mw(rows, cols), vw(rows, cols);
    Eigen::RowVectorXd mb(rows), vb(rows);
    detail::read_row_major(in, mw);
    detail::read_row_major(in, vw);
    detail::read_row_major(in, mb);
    detail::read_row_major(in, vb);
    opt.m_weight.push_back(std::move(mw));
    opt.v_weight.push_back(std::move(vw));
    opt.m_bias.push_back(mb.transpose());
    opt.v_bias.push_back(vb.transpose());
  }
  return opt;
}

}  // namespace gspdr
