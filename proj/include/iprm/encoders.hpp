#ifndef IPRM_ENCODERS_HPP_
#define IPRM_ENCODERS_HPP_

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iprm/numerics/ops.hpp"
#include "iprm/numerics/parameter.hpp"
#include "iprm/synth/scene.hpp"

namespace iprm {

template <class Real>
struct EncodedQuestion {
  Tensor<Real> x_l;                  // [b, n_l, d_l]
  Tensor<Real> l_s;                  // [b, d_l]
  std::optional<Tensor<Real>> mask;  // [b, 1, n_l], 1 = padding; absent when nothing is padded
  std::vector<std::size_t> lengths;
};

template <class Real>
struct EncodedScene {
  Tensor<Real> x_v;                  // [b, n_v, d_v]
  std::optional<Tensor<Real>> mask;  // [b, 1, n_v], 1 = padding
  std::vector<std::size_t> counts;
};

namespace detail {

/// [b, 1, n] padding mask plus a [b, n, 1] validity column; mask is empty
/// when every row is full length.
template <class Real>
std::pair<std::optional<Tensor<Real>>, Tensor<Real>> padding(const std::vector<std::size_t>& lens,
                                                             std::size_t n) {
  const std::size_t b = lens.size();
  std::vector<Real> pad(b * n, Real(0)), valid(b * n, Real(1));
  bool any = false;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = lens[i]; j < n; ++j) {
      pad[i * n + j] = Real(1);
      valid[i * n + j] = Real(0);
      any = true;
    }
  }
  std::optional<Tensor<Real>> mask;
  if (any) mask = Tensor<Real>({b, 1, n}, std::move(pad));
  return {mask, Tensor<Real>({b, n, 1}, std::move(valid))};
}

}  // namespace detail

/// Bidirectional gated recurrent encoder over question tokens. Each direction
/// has d_l / 2 hidden units; x_l concatenates both directions per token and
/// l_s concatenates the two final states.
template <class Real>
class QuestionEncoder {
 public:
  QuestionEncoder() = default;
  QuestionEncoder(ParameterRegistry<Real>& reg, std::size_t vocab_size, std::size_t d_l,
                  const std::string& prefix = "question")
      : vocab_(vocab_size), hidden_(d_l / 2) {
    if (d_l < 2 || d_l % 2 != 0) throw std::invalid_argument("d_l must be even and >= 2");
    embed_ = reg.add_normal(prefix + ".embedding", {vocab_size, hidden_});
    for (int dir = 0; dir < 2; ++dir) {
      const std::string p = prefix + (dir == 0 ? ".fwd" : ".bwd");
      in_[dir] = Linear<Real>(reg, p + ".input", hidden_, 3 * hidden_);
      rec_[dir] = Linear<Real>(reg, p + ".recurrent", hidden_, 3 * hidden_);
    }
  }

  EncodedQuestion<Real> operator()(const std::vector<std::vector<std::int64_t>>& questions) const {
    const std::size_t b = questions.size();
    if (b == 0) throw std::invalid_argument("empty question batch");
    EncodedQuestion<Real> out;
    std::size_t n = 0;
    for (const auto& q : questions) {
      if (q.empty()) throw std::invalid_argument("empty question");
      out.lengths.push_back(q.size());
      n = std::max(n, q.size());
    }
    std::vector<std::int64_t> ids(b * n, 0);
    for (std::size_t i = 0; i < b; ++i) {
      std::copy(questions[i].begin(), questions[i].end(), ids.begin() + i * n);
    }
    auto [mask, valid] = detail::padding<Real>(out.lengths, n);
    out.mask = mask;
    const Tensor<Real> emb = embedding(embed_, ids, {b, n});

    const std::size_t h = hidden_;
    std::vector<Tensor<Real>> states[2];
    Tensor<Real> finals[2];
    for (int dir = 0; dir < 2; ++dir) {
      const Tensor<Real> gates_in = in_[dir](emb);  // [b, n, 3h]
      Tensor<Real> state = Tensor<Real>::zeros({b, h});
      states[dir].resize(n);
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t t = dir == 0 ? s : n - 1 - s;
        const Tensor<Real> gi = reshape(slice(gates_in, 1, t, 1), {b, 3 * h});
        const Tensor<Real> gh = rec_[dir](state);
        const Tensor<Real> r = sigmoid(add(slice(gi, -1, 0, h), slice(gh, -1, 0, h)));
        const Tensor<Real> z = sigmoid(add(slice(gi, -1, h, h), slice(gh, -1, h, h)));
        const Tensor<Real> cand = tanh(add(slice(gi, -1, 2 * h, h), mul(r, slice(gh, -1, 2 * h, h))));
        const Tensor<Real> next = add(cand, mul(z, sub(state, cand)));
        if (mask) {
          const Tensor<Real> m = reshape(slice(valid, 1, t, 1), {b, 1});
          state = add(state, mul(m, sub(next, state)));
        } else {
          state = next;
        }
        states[dir][t] = reshape(state, {b, 1, h});
      }
      finals[dir] = state;
    }
    out.x_l = concat<Real>({concat(states[0], 1), concat(states[1], 1)}, -1);
    out.l_s = concat<Real>({finals[0], finals[1]}, -1);
    return out;
  }

  std::size_t vocab_size() const { return vocab_; }

 private:
  std::size_t vocab_ = 0;
  std::size_t hidden_ = 0;
  Tensor<Real> embed_;
  Linear<Real> in_[2], rec_[2];
};

/// Object tokens: four attribute embeddings of d_v / 8 each, concatenated
/// with tanh of a learned projection of (x, y) to d_v / 2.
template <class Real>
class SceneEncoder {
 public:
  SceneEncoder() = default;
  SceneEncoder(ParameterRegistry<Real>& reg, std::size_t d_v, const std::string& prefix = "scene")
      : d_v_(d_v) {
    if (d_v < 8 || d_v % 8 != 0) throw std::invalid_argument("d_v must be a positive multiple of 8");
    for (int a = 0; a < synth::kNumAttributes; ++a) {
      attr_[a] = reg.add_normal(prefix + "." + std::string(synth::kAttributeNames[a]),
                                {static_cast<std::size_t>(synth::attribute_cardinality(a)), d_v / 8});
    }
    coords_ = Linear<Real>(reg, prefix + ".coords", 2, d_v / 2);
  }

  EncodedScene<Real> operator()(const std::vector<synth::Scene>& scenes) const {
    const std::size_t b = scenes.size();
    if (b == 0) throw std::invalid_argument("empty scene batch");
    EncodedScene<Real> out;
    std::size_t n = 1;
    for (const auto& s : scenes) {
      out.counts.push_back(s.objects.size());
      n = std::max(n, s.objects.size());
    }
    std::vector<std::int64_t> ids[synth::kNumAttributes];
    for (auto& v : ids) v.assign(b * n, 0);
    std::vector<Real> xy(b * n * 2, Real(0));
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < scenes[i].objects.size(); ++j) {
        const auto& o = scenes[i].objects[j];
        if (!(o.x >= 0 && o.x <= 1 && o.y >= 0 && o.y <= 1)) {
          throw std::invalid_argument("object coordinates must lie in [0, 1]");
        }
        for (int a = 0; a < synth::kNumAttributes; ++a) ids[a][i * n + j] = o.attrs[a];
        xy[(i * n + j) * 2] = static_cast<Real>(o.x);
        xy[(i * n + j) * 2 + 1] = static_cast<Real>(o.y);
      }
    }
    std::vector<Tensor<Real>> parts;
    for (int a = 0; a < synth::kNumAttributes; ++a) parts.push_back(embedding(attr_[a], ids[a], {b, n}));
    parts.push_back(tanh(coords_(Tensor<Real>({b, n, 2}, std::move(xy)))));
    auto [mask, valid] = detail::padding<Real>(out.counts, n);
    out.mask = mask;
    out.x_v = concat(parts, -1);
    if (mask) out.x_v = mul(out.x_v, valid);
    return out;
  }

  std::size_t d_v() const { return d_v_; }

 private:
  std::size_t d_v_ = 0;
  Tensor<Real> attr_[synth::kNumAttributes];
  Linear<Real> coords_;
};

/// Answer head: Linear, tanh, Linear.
template <class Real>
class Classifier {
 public:
  Classifier() = default;
  Classifier(ParameterRegistry<Real>& reg, std::size_t d_m, std::size_t n_answers,
             const std::string& prefix = "classifier")
      : hidden_(reg, prefix + ".hidden", d_m, d_m), out_(reg, prefix + ".out", d_m, n_answers) {}

  Tensor<Real> operator()(const Tensor<Real>& y_s) const {
    if (y_s.rank() != 2 || y_s.dim(1) != hidden_.in_features()) {
      throw ShapeError("classifier input must be [b, " + std::to_string(hidden_.in_features()) +
                       "], got " + to_string(y_s.shape()));
    }
    return out_(tanh(hidden_(y_s)));
  }

 private:
  Linear<Real> hidden_, out_;
};

}  // namespace iprm

#endif  // IPRM_ENCODERS_HPP_
