#ifndef IPRM_ATTENTION_HPP_
#define IPRM_ATTENTION_HPP_

#include <algorithm>
#include <optional>
#include <string>

#include "iprm/numerics/ops.hpp"
#include "iprm/numerics/parameter.hpp"

namespace iprm {

template <class Real>
struct AttentionOutput {
  Tensor<Real> output;   // [..., n_q, D_v]
  Tensor<Real> weights;  // [..., n_q, n_k], rows sum to one
};

template <class Real>
struct DualAttentionOutput {
  Tensor<Real> primary;
  Tensor<Real> secondary;
  Tensor<Real> weights;
};

namespace detail {

/// score_ij = score_proj(q_i * k_j). Keys are either shared by all queries
/// (k: [..., n_k, D]) or specific to each query (k: [..., n_q, n_k, D]).
template <class Real>
Tensor<Real> modulated_scores(const Tensor<Real>& q, const Tensor<Real>& k,
                              const Linear<Real>& score_proj) {
  if (q.rank() < 2) throw ShapeError("attention query must be at least rank 2");
  if (q.dim(-1) != k.dim(-1)) {
    throw ShapeError("attention feature-dim mismatch: query " + to_string(q.shape()) +
                     " vs key " + to_string(k.shape()));
  }
  if (score_proj.in_features() != q.dim(-1) || score_proj.out_features() != 1) {
    throw ShapeError("score projection must map D_k -> 1");
  }
  const bool per_query = k.rank() == q.rank() + 1;
  if (!per_query && k.rank() != q.rank()) {
    throw ShapeError("attention key rank incompatible with query: " + to_string(q.shape()) +
                     " vs " + to_string(k.shape()));
  }
  const std::size_t lead = q.rank() - 2;
  if (!std::equal(q.shape().begin(), q.shape().begin() + lead, k.shape().begin())) {
    throw ShapeError("attention batch dims differ: " + to_string(q.shape()) + " vs " +
                     to_string(k.shape()));
  }
  const std::size_t n_q = q.dim(-2), d = q.dim(-1);
  const std::size_t n_k = k.dim(-2);
  if (per_query && k.dim(-3) != n_q) {
    throw ShapeError("per-query keys must have one key set per query");
  }

  Shape qs(q.shape().begin(), q.shape().begin() + lead);
  qs.insert(qs.end(), {n_q, 1, d});
  Tensor<Real> k4 = k;
  if (!per_query) {
    Shape ks(k.shape().begin(), k.shape().begin() + lead);
    ks.insert(ks.end(), {1, n_k, d});
    k4 = reshape(k, ks);
  }
  Tensor<Real> prod = mul(reshape(q, qs), k4);  // [..., n_q, n_k, d]
  Tensor<Real> s = score_proj(prod);            // [..., n_q, n_k, 1]
  Shape ss = prod.shape();
  ss.pop_back();
  return reshape(s, ss);
}

}  // namespace detail

/// Linear-modulated attention. Each (query, key) score is a learned scalar
/// projection of their elementwise product; mask entries of 1 block a pair.
/// The output is the attention-weighted sum of values over the key axis.
template <class Real>
AttentionOutput<Real> modulated_attention(const Tensor<Real>& q, const Tensor<Real>& k,
                                          const Tensor<Real>& v,
                                          const Linear<Real>& score_proj,
                                          const std::optional<Tensor<Real>>& mask = std::nullopt) {
  if (v.dim(-2) != k.dim(-2)) {
    throw ShapeError("attention key/value count mismatch: " + to_string(k.shape()) + " vs " +
                     to_string(v.shape()));
  }
  Tensor<Real> weights = softmax_lastdim(detail::modulated_scores(q, k, score_proj), mask);
  return {bmm(weights, v), weights};
}

/// One set of attention weights applied to two value sets sharing the key axis.
template <class Real>
DualAttentionOutput<Real> attention_with_secondary_values(
    const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v_primary,
    const Tensor<Real>& v_secondary, const Linear<Real>& score_proj,
    const std::optional<Tensor<Real>>& mask = std::nullopt) {
  if (v_secondary.dim(-2) != v_primary.dim(-2)) {
    throw ShapeError("secondary values must share the key axis with primary values");
  }
  auto att = modulated_attention(q, k, v_primary, score_proj, mask);
  return {att.output, bmm(att.weights, v_secondary), att.weights};
}

}  // namespace iprm

#endif  // IPRM_ATTENTION_HPP_
