#ifndef IPRM_NUMERICS_PARAMETER_HPP_
#define IPRM_NUMERICS_PARAMETER_HPP_

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "iprm/numerics/ops.hpp"
#include "iprm/numerics/tensor.hpp"
#include "iprm/random.hpp"

namespace iprm {

template <class Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
};

/// Owns every trainable tensor of a model under a unique dotted name.
/// Enumeration order is registration order.
template <class Real>
class ParameterRegistry {
 public:
  explicit ParameterRegistry(std::uint64_t seed = 0) : rng_(seed) {}

  ParameterRegistry(const ParameterRegistry&) = delete;
  ParameterRegistry& operator=(const ParameterRegistry&) = delete;
  ParameterRegistry(ParameterRegistry&&) = default;
  ParameterRegistry& operator=(ParameterRegistry&&) = default;

  Tensor<Real> add(const std::string& name, Tensor<Real> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    value.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back({name, value});
    return value;
  }

  /// Glorot uniform weights scaled by `gain`.
  Tensor<Real> add_glorot(const std::string& name, std::size_t fan_in, std::size_t fan_out, double gain = 1.0) {
    const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<Real> v(fan_in * fan_out);
    for (auto& x : v) x = static_cast<Real>(rng_.uniform(-a, a));
    return add(name, Tensor<Real>({fan_in, fan_out}, std::move(v)));
  }

  Tensor<Real> add_normal(const std::string& name, Shape shape, double stddev = 1.0) {
    std::vector<Real> v(numel(shape));
    for (auto& x : v) x = static_cast<Real>(rng_.normal() * stddev);
    return add(name, Tensor<Real>(std::move(shape), std::move(v)));
  }

  Tensor<Real> add_constant(const std::string& name, Shape shape, Real value) {
    return add(name, Tensor<Real>::full(std::move(shape), value));
  }

  const std::vector<Parameter<Real>>& parameters() const { return params_; }
  std::vector<Parameter<Real>>& parameters() { return params_; }

  const Parameter<Real>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[it->second];
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  /// Total number of trainable scalars.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

 private:
  Rng rng_;
  std::vector<Parameter<Real>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Affine map x W + b over the last axis.
template <class Real>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterRegistry<Real>& reg, const std::string& name, std::size_t in,
         std::size_t out, double gain = 1.0)
      : weight_(reg.add_glorot(name + ".weight", in, out, gain)),
        bias_(reg.add_constant(name + ".bias", {out}, Real(0))) {}

  Tensor<Real> operator()(const Tensor<Real>& x) const { return add(matmul(x, weight_), bias_); }

  const Tensor<Real>& weight() const { return weight_; }
  const Tensor<Real>& bias() const { return bias_; }
  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }

 private:
  Tensor<Real> weight_;
  Tensor<Real> bias_;
};

}  // namespace iprm

#endif  // IPRM_NUMERICS_PARAMETER_HPP_
