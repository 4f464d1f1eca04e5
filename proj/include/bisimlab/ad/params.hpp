#pragma once

#include <map>
#include <string>
#include <vector>

#include "bisimlab/ad/graph.hpp"

namespace bisimlab::ad {

/// Named tensors. A non-trainable set (an EMA shadow) binds into graphs as
/// constants, so its tensors can never become gradient leaves.
template <typename Scalar>
class ParameterSet {
 public:
  using T = Tensor<Scalar>;

  explicit ParameterSet(bool trainable = true) : trainable_(trainable) {}

  void add(const std::string& name, T value) {
    if (tensors_.count(name)) throw InvalidInput("ParameterSet: duplicate name '" + name + "'");
    value.requires_grad = trainable_;
    tensors_.emplace(name, std::move(value));
  }

  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }

  const T& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw InvalidInput("ParameterSet: no tensor '" + name + "'");
    return it->second;
  }
  T& at(const std::string& name) { return const_cast<T&>(std::as_const(*this).at(name)); }

  const std::map<std::string, T>& tensors() const { return tensors_; }
  std::map<std::string, T>& tensors() { return tensors_; }
  bool trainable() const { return trainable_; }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& [name, t] : tensors_) n += t.size();
    return n;
  }

  /// Registers every tensor on `g`: as named leaves when trainable,
  /// otherwise as constants.
  std::map<std::string, Var<Scalar>> bind(Graph<Scalar>& g) const {
    std::map<std::string, Var<Scalar>> vars;
    for (const auto& [name, t] : tensors_) vars.emplace(name, trainable_ ? g.leaf(name, t) : g.constant(t));
    return vars;
  }

  /// Copy with a different trainable flag (used to create EMA shadows).
  ParameterSet copy_as(bool trainable) const {
    ParameterSet out(trainable);
    for (const auto& [name, t] : tensors_) out.add(name, t);
    return out;
  }

 private:
  std::map<std::string, T> tensors_;
  bool trainable_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1.5e-4;
  /// Global gradient-norm clip; 0 disables clipping.
  double max_grad_norm = 0.0;
};

template <typename Scalar>
double global_norm(const std::map<std::string, Tensor<Scalar>>& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads) s += static_cast<double>(g.data.squaredNorm());
  return std::sqrt(s);
}

/// Adam with bias correction. Moments are keyed by parameter name.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update and returns the pre-clip gradient norm. Tensors
  /// without a gradient entry are left untouched.
  double step(ParameterSet<Scalar>& params, const std::map<std::string, Tensor<Scalar>>& grads) {
    if (!params.trainable()) throw InternalError("Adam: refusing to update a non-trainable parameter set");
    const double norm = global_norm(grads);
    const Scalar clip = (cfg_.max_grad_norm > 0.0 && norm > cfg_.max_grad_norm)
                            ? static_cast<Scalar>(cfg_.max_grad_norm / norm)
                            : Scalar(1);
    ++t_;
    const Scalar b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
    const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta1, static_cast<double>(t_)));
    const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta2, static_cast<double>(t_)));
    const Scalar lr = static_cast<Scalar>(cfg_.lr), eps = static_cast<Scalar>(cfg_.eps);
    for (const auto& [name, grad] : grads) {
      auto& p = params.at(name);
      if (grad.shape != p.shape)
        throw InvalidInput("Adam: gradient " + shape_str(grad.shape) + " does not match parameter '" + name + "' " +
                           shape_str(p.shape));
      auto [it_m, fresh_m] = m_.try_emplace(name, Tensor<Scalar>(p.shape, Scalar(0)));
      auto [it_v, fresh_v] = v_.try_emplace(name, Tensor<Scalar>(p.shape, Scalar(0)));
      auto& m = it_m->second.data;
      auto& v = it_v->second.data;
      m = b1 * m + (Scalar(1) - b1) * clip * grad.data;
      v = b2 * v + (Scalar(1) - b2) * (clip * grad.data).cwiseAbs2();
      p.data.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
    return norm;
  }

  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::map<std::string, Tensor<Scalar>>& first_moments() const { return m_; }

 private:
  AdamConfig cfg_;
  std::map<std::string, Tensor<Scalar>> m_, v_;
  long t_ = 0;
};

/// momentum <- m * momentum + (1 - m) * online, tensor by tensor.
template <typename Scalar>
void ema_update(ParameterSet<Scalar>& momentum, const ParameterSet<Scalar>& online, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw InvalidInput("ema_update: coefficient must lie in [0, 1]");
  if (momentum.trainable()) throw InternalError("ema_update: momentum set must not be trainable");
  if (momentum.tensors().size() != online.tensors().size())
    throw InvalidInput("ema_update: parameter sets differ in size");
  const Scalar a = static_cast<Scalar>(m), b = static_cast<Scalar>(1.0 - m);
  for (auto& [name, t] : momentum.tensors()) {
    const auto& src = online.at(name);
    if (src.shape != t.shape) throw InvalidInput("ema_update: shape mismatch for '" + name + "'");
    t.data = a * t.data + b * src.data;
  }
}

}  // namespace bisimlab::ad
