#ifndef IPRM_BASELINES_HPP_
#define IPRM_BASELINES_HPP_

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iprm/numerics/ops.hpp"
#include "iprm/numerics/parameter.hpp"

namespace iprm {

enum class BaselineVariant { kCross, kConcat };

struct BaselineConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 512;
  std::size_t n_heads = 4;
  BaselineVariant variant = BaselineVariant::kConcat;
  std::size_t d_l = 512;
  std::size_t d_v = 512;
  std::size_t d_out = 512;

  void validate() const {
    if (n_layers == 0 || d_model == 0 || n_heads == 0) {
      throw std::invalid_argument("baseline n_layers, d_model and n_heads must be positive");
    }
    if (d_model % n_heads != 0) {
      throw std::invalid_argument("d_model " + std::to_string(d_model) +
                                  " is not divisible by n_heads " + std::to_string(n_heads));
    }
  }
};

template <class Real>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterRegistry<Real>& reg, const std::string& name, std::size_t d)
      : gamma_(reg.add_constant(name + ".gamma", {d}, Real(1))),
        beta_(reg.add_constant(name + ".beta", {d}, Real(0))) {}

  Tensor<Real> operator()(const Tensor<Real>& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Tensor<Real> gamma_, beta_;
};

template <class Real>
struct MultiHeadOutput {
  Tensor<Real> output;                // [b, n_q, d]
  std::vector<Tensor<Real>> weights;  // per head [b, n_q, n_k]
};

/// Scaled dot-product attention with heads taken as contiguous feature slices.
template <class Real>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterRegistry<Real>& reg, const std::string& name, std::size_t d,
                     std::size_t heads)
      : heads_(heads),
        q_(reg, name + ".q", d, d),
        k_(reg, name + ".k", d, d),
        v_(reg, name + ".v", d, d),
        o_(reg, name + ".o", d, d) {}

  MultiHeadOutput<Real> operator()(const Tensor<Real>& x_q, const Tensor<Real>& x_kv,
                                   const std::optional<Tensor<Real>>& key_mask = std::nullopt) const {
    const std::size_t d = q_.out_features(), dh = d / heads_;
    const Tensor<Real> q = q_(x_q), k = k_(x_kv), v = v_(x_kv);
    const Real scale_by = Real(1) / std::sqrt(static_cast<Real>(dh));
    MultiHeadOutput<Real> out;
    std::vector<Tensor<Real>> per_head;
    for (std::size_t h = 0; h < heads_; ++h) {
      const Tensor<Real> qh = slice(q, -1, h * dh, dh);
      const Tensor<Real> kh = slice(k, -1, h * dh, dh);
      const Tensor<Real> vh = slice(v, -1, h * dh, dh);
      const Tensor<Real> a = softmax_lastdim(scale(bmm(qh, transpose_last2(kh)), scale_by), key_mask);
      per_head.push_back(bmm(a, vh));
      out.weights.push_back(a);
    }
    out.output = o_(heads_ == 1 ? per_head.front() : concat(per_head, -1));
    return out;
  }

  std::size_t heads() const { return heads_; }
  const Linear<Real>& q() const { return q_; }
  const Linear<Real>& k() const { return k_; }
  const Linear<Real>& v() const { return v_; }
  const Linear<Real>& o() const { return o_; }

 private:
  std::size_t heads_ = 1;
  Linear<Real> q_, k_, v_, o_;
};

/// Pre-norm transformer block. For self-attention pass x as the context.
template <class Real>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterRegistry<Real>& reg, const std::string& name, std::size_t d,
                   std::size_t heads, bool cross)
      : cross_(cross),
        norm_q_(reg, name + ".norm_q", d),
        attn_(reg, name + ".attn", d, heads),
        norm_ff_(reg, name + ".norm_ff", d),
        ff1_(reg, name + ".ff1", d, 4 * d),
        ff2_(reg, name + ".ff2", 4 * d, d) {
    if (cross_) norm_kv_ = LayerNorm<Real>(reg, name + ".norm_kv", d);
  }

  Tensor<Real> operator()(const Tensor<Real>& x, const Tensor<Real>& context,
                          const std::optional<Tensor<Real>>& key_mask,
                          std::vector<Tensor<Real>>* weights = nullptr) const {
    const Tensor<Real> xn = norm_q_(x);
    auto att = attn_(xn, cross_ ? norm_kv_(context) : xn, key_mask);
    if (weights) weights->insert(weights->end(), att.weights.begin(), att.weights.end());
    const Tensor<Real> h = add(x, att.output);
    return add(h, ff2_(relu(ff1_(norm_ff_(h)))));
  }

 private:
  bool cross_ = false;
  LayerNorm<Real> norm_q_, norm_kv_;
  MultiHeadAttention<Real> attn_;
  LayerNorm<Real> norm_ff_;
  Linear<Real> ff1_, ff2_;
};

template <class Real>
struct BaselineOutput {
  Tensor<Real> y_s;                   // [b, d_out]
  std::vector<Tensor<Real>> weights;  // every head of every layer
};

/// Transformer reasoning stacks compared against IPRM.
/// kConcat: self-attention over [summary; language; visual], pooled at the
/// summary token. kCross: language tokens query the visual tokens, pooled by
/// a masked mean over language positions.
template <class Real>
class Baseline {
 public:
  Baseline(ParameterRegistry<Real>& reg, BaselineConfig config, const std::string& prefix = "baseline")
      : cfg_(config) {
    cfg_.validate();
    const std::size_t d = cfg_.d_model;
    lang_in_ = Linear<Real>(reg, prefix + ".lang_in", cfg_.d_l, d);
    vis_in_ = Linear<Real>(reg, prefix + ".vis_in", cfg_.d_v, d);
    const bool cross = cfg_.variant == BaselineVariant::kCross;
    if (!cross) {
      summary_ = reg.add_normal(prefix + ".summary", {1, 1, d}, 0.02);
      lang_type_ = reg.add_normal(prefix + ".lang_type", {d}, 0.02);
      vis_type_ = reg.add_normal(prefix + ".vis_type", {d}, 0.02);
    }
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      blocks_.emplace_back(reg, prefix + ".layer" + std::to_string(l), d, cfg_.n_heads, cross);
    }
    final_norm_ = LayerNorm<Real>(reg, prefix + ".final_norm", d);
    out_ = Linear<Real>(reg, prefix + ".out", d, cfg_.d_out);
  }

  const BaselineConfig& config() const { return cfg_; }

  BaselineOutput<Real> forward(const Tensor<Real>& x_v, const Tensor<Real>& x_l,
                               const std::optional<Tensor<Real>>& lang_mask = std::nullopt,
                               const std::optional<Tensor<Real>>& vis_mask = std::nullopt) const {
    const std::size_t b = x_l.dim(0), n_l = x_l.dim(1), n_v = x_v.dim(1), d = cfg_.d_model;
    if (x_v.dim(0) != b) throw ShapeError("batch size differs across baseline inputs");
    BaselineOutput<Real> out;
    const Tensor<Real> lang = lang_in_(x_l);
    const Tensor<Real> vis = vis_in_(x_v);
    Tensor<Real> pooled;
    if (cfg_.variant == BaselineVariant::kConcat) {
      Tensor<Real> x = concat<Real>(
          {broadcast_to(summary_, {b, 1, d}), add(lang, lang_type_), add(vis, vis_type_)}, 1);
      std::optional<Tensor<Real>> mask;
      if (lang_mask || vis_mask) {
        mask = concat<Real>({Tensor<Real>::zeros({b, 1, 1}),
                             lang_mask ? lang_mask->detach() : Tensor<Real>::zeros({b, 1, n_l}),
                             vis_mask ? vis_mask->detach() : Tensor<Real>::zeros({b, 1, n_v})},
                            -1);
      }
      for (const auto& blk : blocks_) x = blk(x, x, mask, &out.weights);
      pooled = reshape(slice(final_norm_(x), 1, 0, 1), {b, d});
    } else {
      Tensor<Real> x = lang;
      for (const auto& blk : blocks_) x = blk(x, vis, vis_mask, &out.weights);
      x = final_norm_(x);
      std::vector<Real> w(b * n_l, Real(0));
      for (std::size_t i = 0; i < b; ++i) {
        std::size_t valid = 0;
        for (std::size_t j = 0; j < n_l; ++j) valid += !lang_mask || lang_mask->data()[i * n_l + j] == Real(0);
        for (std::size_t j = 0; j < n_l; ++j) {
          const bool keep = !lang_mask || lang_mask->data()[i * n_l + j] == Real(0);
          w[i * n_l + j] = keep ? Real(1) / static_cast<Real>(valid) : Real(0);
        }
      }
      pooled = sum_axis(mul(x, Tensor<Real>({b, n_l, 1}, std::move(w))), 1);
    }
    out.y_s = out_(pooled);
    return out;
  }

 private:
  BaselineConfig cfg_;
  Linear<Real> lang_in_, vis_in_;
  Tensor<Real> summary_, lang_type_, vis_type_;
  std::vector<TransformerBlock<Real>> blocks_;
  LayerNorm<Real> final_norm_;
  Linear<Real> out_;
};

}  // namespace iprm

#endif  // IPRM_BASELINES_HPP_
