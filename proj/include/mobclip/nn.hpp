#pragma once

// Minimal dense layers, ReLU MLPs and Adam for the alignment heads and the
// distillation surrogate. Batches are row-major: one sample per row.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mobclip/embedding.hpp"
#include "mobclip/errors.hpp"

namespace mobclip::nn {

template <typename S>
using Vector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// y = x W (+ b); W is (in x out).
template <typename S>
struct Dense {
  RowMatrix<S> weight;
  Vector<S> bias;  // empty when bias-free
  RowMatrix<S> grad_weight;
  Vector<S> grad_bias;

  Dense() = default;
  Dense(std::size_t in, std::size_t out, bool with_bias)
      : weight(RowMatrix<S>::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out))),
        grad_weight(RowMatrix<S>::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out))) {
    if (with_bias) {
      bias = Vector<S>::Zero(static_cast<Eigen::Index>(out));
      grad_bias = Vector<S>::Zero(static_cast<Eigen::Index>(out));
    }
  }

  std::size_t in() const noexcept { return static_cast<std::size_t>(weight.rows()); }
  std::size_t out() const noexcept { return static_cast<std::size_t>(weight.cols()); }
  bool has_bias() const noexcept { return bias.size() > 0; }

  /// Uniform(-bound, bound) weights, Uniform(-bias_bound, bias_bound) bias.
  template <typename Rng>
  void init_uniform(Rng& rng, double bound, double bias_bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = static_cast<S>(u(rng));
    if (has_bias()) {
      std::uniform_real_distribution<double> ub(-bias_bound, bias_bound);
      for (Eigen::Index i = 0; i < bias.size(); ++i) bias[i] = static_cast<S>(ub(rng));
    }
  }

  RowMatrix<S> forward(const RowMatrix<S>& x) const {
    RowMatrix<S> y;
    y.noalias() = x * weight;
    if (has_bias()) y.rowwise() += bias;
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx when requested.
  RowMatrix<S> backward(const RowMatrix<S>& x, const RowMatrix<S>& grad_y, bool want_input_grad = true) {
    grad_weight.noalias() += x.transpose() * grad_y;
    if (has_bias()) grad_bias += grad_y.colwise().sum();
    RowMatrix<S> gx;
    if (want_input_grad) gx.noalias() = grad_y * weight.transpose();
    return gx;
  }

  void zero_grad() {
    grad_weight.setZero();
    if (has_bias()) grad_bias.setZero();
  }
};

/// Dense -> ReLU -> ... -> Dense (linear output).
template <typename S>
class Mlp {
public:
  Mlp() = default;

  /// widths = {in, hidden..., out}.
  template <typename Rng>
  Mlp(const std::vector<std::size_t>& widths, Rng& rng, bool with_bias = true) {
    if (widths.size() < 2) throw ValidationError("MLP needs at least input and output widths");
    for (std::size_t w : widths)
      if (w == 0) throw ValidationError("MLP widths must be positive");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      layers_.emplace_back(widths[l], widths[l + 1], with_bias);
      const bool last = l + 2 == widths.size();
      // He-uniform ahead of a ReLU, 1/sqrt(fan_in) for the linear output;
      // biases U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
      const double fan_in = static_cast<double>(widths[l]);
      const double inv = 1.0 / std::sqrt(fan_in);
      layers_.back().init_uniform(rng, last ? inv : std::sqrt(6.0 / fan_in), inv);
    }
  }

  std::size_t in() const { return layers_.front().in(); }
  std::size_t out() const { return layers_.back().out(); }
  std::vector<Dense<S>>& layers() noexcept { return layers_; }
  const std::vector<Dense<S>>& layers() const noexcept { return layers_; }

  /// Inference without caching.
  RowMatrix<S> predict(const RowMatrix<S>& x) const {
    RowMatrix<S> h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l].forward(h);
      if (l + 1 < layers_.size()) h = h.cwiseMax(S(0));
    }
    return h;
  }

  /// Forward pass that keeps layer inputs for backward().
  RowMatrix<S> forward(const RowMatrix<S>& x) {
    inputs_.resize(layers_.size());
    RowMatrix<S> h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      inputs_[l] = h;
      h = layers_[l].forward(h);
      if (l + 1 < layers_.size()) h = h.cwiseMax(S(0));
    }
    return h;
  }

  RowMatrix<S> backward(const RowMatrix<S>& grad_out, bool want_input_grad = true) {
    RowMatrix<S> g = grad_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const bool need = l > 0 || want_input_grad;
      g = layers_[l].backward(inputs_[l], g, need);
      // inputs_[l] for l > 0 is the ReLU output of layer l-1; its mask is > 0.
      if (l > 0) g = (inputs_[l].array() > S(0)).select(g, S(0));
    }
    return g;
  }

  void zero_grad() {
    for (auto& d : layers_) d.zero_grad();
  }

private:
  std::vector<Dense<S>> layers_;
  std::vector<RowMatrix<S>> inputs_;
};

/// A view over one parameter tensor and its gradient.
template <typename S>
struct ParamRef {
  S* value;
  const S* grad;
  std::size_t size;
};

template <typename S>
void collect(Dense<S>& d, std::vector<ParamRef<S>>& out) {
  out.push_back({d.weight.data(), d.grad_weight.data(), static_cast<std::size_t>(d.weight.size())});
  if (d.has_bias()) out.push_back({d.bias.data(), d.grad_bias.data(), static_cast<std::size_t>(d.bias.size())});
}

template <typename S>
void collect(Mlp<S>& m, std::vector<ParamRef<S>>& out) {
  for (auto& d : m.layers()) collect(d, out);
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

/// Adam with decoupled weight decay. Moments are laid out in the order the
/// parameter views are passed to step(); that order must stay fixed.
template <typename S>
class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<ParamRef<S>>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.size, S(0));
        v_.emplace_back(p.size, S(0));
      }
    }
    if (m_.size() != params.size()) throw ValidationError("Adam: parameter set changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S lr = static_cast<S>(cfg_.lr), wd = static_cast<S>(cfg_.weight_decay), eps = static_cast<S>(cfg_.eps);
    const S c1 = static_cast<S>(1.0 / bc1), c2 = static_cast<S>(1.0 / bc2);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& p = params[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size; ++i) {
        const S g = p.grad[i];
        m[i] = b1 * m[i] + (S(1) - b1) * g;
        v[i] = b2 * v[i] + (S(1) - b2) * g * g;
        const S mhat = m[i] * c1;
        const S vhat = v[i] * c2;
        p.value[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p.value[i]);
      }
    }
  }

  std::uint64_t steps() const noexcept { return t_; }
  AdamConfig& config() noexcept { return cfg_; }

private:
  AdamConfig cfg_;
  std::vector<std::vector<S>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace mobclip::nn
