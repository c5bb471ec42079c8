#ifndef IPRM_HARNESS_OPTIM_HPP_
#define IPRM_HARNESS_OPTIM_HPP_

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "iprm/numerics/parameter.hpp"

namespace iprm::harness {

/// Adam with bias correction. Moments are kept per parameter in registry order.
template <class Real>
class Adam {
 public:
  struct State {
    std::uint64_t step = 0;
    std::vector<std::vector<Real>> m;
    std::vector<std::vector<Real>> v;
  };

  explicit Adam(std::vector<Parameter<Real>>& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params) {
      state_.m.emplace_back(p.value.numel(), Real(0));
      state_.v.emplace_back(p.value.numel(), Real(0));
    }
  }

  void step(double lr) {
    auto& params = *params_;
    if (params.size() != state_.m.size()) {
      throw std::logic_error("parameter list changed after the optimizer was created");
    }
    for (const auto& p : params) {
      if (!p.value.has_grad()) throw std::invalid_argument("parameter '" + p.name + "' has no gradient");
    }
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double c1 = 1.0 - std::pow(beta1_, t);
    const double c2 = 1.0 - std::pow(beta2_, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto w = params[i].value.mutable_data();
      const auto g = params[i].value.grad();
      auto& m = state_.m[i];
      auto& v = state_.v[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = static_cast<Real>(beta1_ * m[j] + (1.0 - beta1_) * gj);
        v[j] = static_cast<Real>(beta2_ * v[j] + (1.0 - beta2_) * gj * gj);
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        w[j] = static_cast<Real>(w[j] - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  const State& state() const { return state_; }

  void set_state(State s) {
    if (s.m.size() != state_.m.size() || s.v.size() != state_.v.size()) {
      throw std::invalid_argument("optimizer state has the wrong number of parameters");
    }
    for (std::size_t i = 0; i < s.m.size(); ++i) {
      if (s.m[i].size() != state_.m[i].size() || s.v[i].size() != state_.v[i].size()) {
        throw std::invalid_argument("optimizer state size mismatch for parameter " +
                                    (*params_)[i].name);
      }
    }
    state_ = std::move(s);
  }

 private:
  std::vector<Parameter<Real>>* params_;
  double beta1_, beta2_, eps_;
  State state_;
};

template <class Real>
double global_grad_norm(const std::vector<Parameter<Real>>& params) {
  double sq = 0;
  for (const auto& p : params) {
    for (Real g : p.value.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

/// Global-norm clipping. Returns the factor applied to every gradient.
template <class Real>
double clip_gradients(std::vector<Parameter<Real>>& params, double threshold) {
  const double norm = global_grad_norm(params);
  if (!(norm > threshold)) return 1.0;
  const double s = threshold / norm;
  for (auto& p : params) {
    if (!p.value.has_grad()) continue;
    for (auto& g : p.value.mutable_grad()) g = static_cast<Real>(g * s);
  }
  return s;
}

struct PlateauConfig {
  double factor = 0.5;
  double threshold = 1e-3;  // relative improvement over the best value
  std::size_t patience = 0;
};

/// Learning rate after observing the last entry of `history` (validation
/// accuracies, higher is better). An epoch improves when it beats the best
/// earlier value by a relative margin of `threshold`; once more than
/// `patience` consecutive epochs fail to improve, the rate is multiplied by
/// `factor` and the count restarts.
inline double lr_plateau_step(const std::vector<double>& history, double lr,
                              const PlateauConfig& cfg) {
  if (history.empty()) throw std::invalid_argument("plateau schedule needs a validation history");
  double best = history.front();
  std::size_t bad = 0;
  bool reduce_now = false;
  for (std::size_t i = 1; i < history.size(); ++i) {
    reduce_now = false;
    if (history[i] > best * (1.0 + cfg.threshold)) {
      best = history[i];
      bad = 0;
    } else if (++bad > cfg.patience) {
      reduce_now = true;
      bad = 0;
    }
  }
  return reduce_now ? lr * cfg.factor : lr;
}

}  // namespace iprm::harness

#endif  // IPRM_HARNESS_OPTIM_HPP_
