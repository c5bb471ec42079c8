#ifndef IPRM_IPRM_HPP_
#define IPRM_IPRM_HPP_

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iprm/attention.hpp"
#include "iprm/config.hpp"
#include "iprm/numerics/ops.hpp"
#include "iprm/numerics/parameter.hpp"

namespace iprm {

template <class Real>
struct MemoryState {
  Tensor<Real> op;   // [b, n_op, d_m]
  Tensor<Real> res;  // [b, n_op, d_m]
};

/// Past memory snapshots, newest first.
template <class Real>
struct MemoryWindow {
  std::vector<Tensor<Real>> ops;
  std::vector<Tensor<Real>> results;

  std::size_t size() const { return ops.size(); }

  /// Prepends `state` and keeps at most `capacity` snapshots.
  void push(const MemoryState<Real>& state, std::size_t capacity) {
    ops.insert(ops.begin(), state.op);
    results.insert(results.begin(), state.res);
    if (ops.size() > capacity) {
      ops.resize(capacity);
      results.resize(capacity);
    }
  }
};

/// Per-sample attention maps collected during a forward pass.
struct ReasoningTrace {
  std::vector<std::vector<std::vector<double>>> lang_atts;  // [t][n_op][n_lang]
  std::vector<std::vector<std::vector<double>>> vis_atts;   // [t][n_op][n_vis]
  std::vector<double> pool_att;                             // [n_op]
  std::int64_t predicted_answer = -1;
};

template <class Real>
struct IprmOutput {
  Tensor<Real> y_s;  // [b, d_m]
  Tensor<Real> y_r;  // [b, n_op, d_m], the final memory result states
  MemoryState<Real> final_memory;
  std::vector<Tensor<Real>> lang_atts;  // per step [b, n_op, n_l]
  std::vector<Tensor<Real>> vis_atts;   // per step [b, n_op, n_v]
  std::vector<Tensor<Real>> comp_atts;  // per step [b, n_op, n_op * (1 + window)]
  Tensor<Real> pool_att;                // [b, 1, n_op]
  std::vector<std::size_t> window_sizes;  // retained snapshots after each step

  /// Extracts sample `b`, trimming padded language/visual positions.
  ReasoningTrace trace(std::size_t b, std::size_t n_lang, std::size_t n_vis) const {
    auto rows = [b](const Tensor<Real>& t, std::size_t keep) {
      const std::size_t n_q = t.dim(1), n_k = t.dim(2);
      std::vector<std::vector<double>> out(n_q);
      for (std::size_t q = 0; q < n_q; ++q) {
        for (std::size_t k = 0; k < keep; ++k) {
          out[q].push_back(static_cast<double>(t.data()[(b * n_q + q) * n_k + k]));
        }
      }
      return out;
    };
    ReasoningTrace tr;
    for (const auto& a : lang_atts) tr.lang_atts.push_back(rows(a, n_lang));
    for (const auto& a : vis_atts) tr.vis_atts.push_back(rows(a, n_vis));
    tr.pool_att = rows(pool_att, pool_att.dim(2)).front();
    return tr;
  }
};

/// Key/value projections of the language tokens; step independent.
template <class Real>
struct LanguageKeys {
  Tensor<Real> k;  // [b, n_l, d_m]
  Tensor<Real> v;  // [b, n_l, d_m]
};

/// Step-independent projections of the visual tokens.
template <class Real>
struct VisualKeys {
  Tensor<Real> reduced;  // W_V,k1(x_v): [b, n_v, d_m / r]
  Tensor<Real> v;        // W_V,v(x_v):  [b, n_v, d_m]
};

template <class Real>
struct CompositionOutput {
  Tensor<Real> m_op;
  Tensor<Real> m_res;
  std::optional<Tensor<Real>> a_op;  // absent when composition is disabled
};

/// Optional padding masks (1 = padding) for a batch.
template <class Real>
struct InputMasks {
  std::optional<Tensor<Real>> lang;  // [b, 1, n_l]
  std::optional<Tensor<Real>> vis;   // [b, 1, n_v]
};

struct ForwardOptions {
  /// Recompute the language keys/values at every step instead of once.
  bool recompute_language_kv = false;
};

namespace detail {

template <class F>
auto at_step(std::size_t step, F&& f) {
  const std::string where = "step " + std::to_string(step) + ": ";
  try {
    return f();
  } catch (const ShapeError& e) {
    throw ShapeError(where + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(where + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(where + e.what());
  }
}

}  // namespace detail

/// Core weights start at Glorot scale over sqrt(3). At full Glorot scale the
/// square maps preserve norm and the memory recurrence grows with depth.
inline constexpr double kCoreInitGain = 0.5773502691896258;

/// Iterative and parallel reasoning module. Weights are tied across steps
/// and shared by every parallel operation.
template <class Real>
class Iprm {
 public:
  Iprm(ParameterRegistry<Real>& reg, IprmConfig config, const std::string& prefix = "iprm")
      : cfg_(config) {
    cfg_.validate();
    const std::size_t dm = cfg_.d_m, dr = cfg_.reduced_dim();
    auto p = [&](const std::string& s) { return prefix + "." + s; };
    op_init_ = reg.add_normal(p("memory.op_init"), {kMemoryInitCapacity, dm}, kCoreInitGain);
    res_init_ = reg.add_normal(p("memory.res_init"), {kMemoryInitCapacity, dm}, kCoreInitGain);

    lang_q1_ = Linear<Real>(reg, p("formation.q1"), dm, dm, kCoreInitGain);
    lang_q2_ = Linear<Real>(reg, p("formation.q2"), dm, dm, kCoreInitGain);
    lang_k_ = Linear<Real>(reg, p("formation.k"), cfg_.d_l, dm, kCoreInitGain);
    lang_v_ = Linear<Real>(reg, p("formation.v"), cfg_.d_l, dm, kCoreInitGain);
    lang_score_ = Linear<Real>(reg, p("formation.score"), dm, 1, kCoreInitGain);

    vis_op_ = Linear<Real>(reg, p("execution.op"), dm, dr, kCoreInitGain);
    vis_res_ = Linear<Real>(reg, p("execution.res"), dm, dr, kCoreInitGain);
    vis_s_ = Linear<Real>(reg, p("execution.s"), 2 * dr, dr, kCoreInitGain);
    vis_k1_ = Linear<Real>(reg, p("execution.k1"), cfg_.d_v, dr, kCoreInitGain);
    vis_k2_ = Linear<Real>(reg, p("execution.k2"), 2 * dr, dr, kCoreInitGain);
    vis_k3_ = Linear<Real>(reg, p("execution.k3"), dr, dr, kCoreInitGain);
    vis_q_ = Linear<Real>(reg, p("execution.q"), dm, dr, kCoreInitGain);
    vis_v_ = Linear<Real>(reg, p("execution.v"), cfg_.d_v, dm, kCoreInitGain);
    vis_score_ = Linear<Real>(reg, p("execution.score"), dr, 1, kCoreInitGain);

    op_update_ = Linear<Real>(reg, p("composition.op_u"), dm, dm, kCoreInitGain);
    op_hidden_ = Linear<Real>(reg, p("composition.op_h"), dm, dm, kCoreInitGain);
    res_update_ = Linear<Real>(reg, p("composition.res_u"), dm, dm, kCoreInitGain);
    res_hidden_ = Linear<Real>(reg, p("composition.res_h"), dm, dm, kCoreInitGain);
    if (cfg_.composition) {
      op_q_ = Linear<Real>(reg, p("composition.op_q"), dm, dm, kCoreInitGain);
      op_k_ = Linear<Real>(reg, p("composition.op_k"), dm, dm, kCoreInitGain);
      op_v_ = Linear<Real>(reg, p("composition.op_v"), dm, dm, kCoreInitGain);
      if (cfg_.result_composition == ResultComposition::kProjectedValues) {
        res_v_ = Linear<Real>(reg, p("composition.res_v"), dm, dm, kCoreInitGain);
      }
      op_u2_ = Linear<Real>(reg, p("composition.op_u2"), dm, dm, kCoreInitGain);
      res_v2_ = Linear<Real>(reg, p("composition.res_v2"), dm, dm, kCoreInitGain);
      op_score_ = Linear<Real>(reg, p("composition.score"), dm, 1, kCoreInitGain);
    }

    pool_q_ = Linear<Real>(reg, p("pool.q"), cfg_.d_l, dm, kCoreInitGain);
    pool_k_ = Linear<Real>(reg, p("pool.k"), dm, dm, kCoreInitGain);
    pool_score_ = Linear<Real>(reg, p("pool.score"), dm, 1, kCoreInitGain);
  }

  const IprmConfig& config() const { return cfg_; }

  /// Learned initial memory rows [0, n_op) broadcast across the batch.
  MemoryState<Real> init_memory(std::size_t batch) const {
    if (cfg_.n_op > op_init_.dim(0)) {
      throw std::invalid_argument("n_op " + std::to_string(cfg_.n_op) +
                                  " exceeds memory init capacity " +
                                  std::to_string(op_init_.dim(0)));
    }
    const Shape shape{batch, cfg_.n_op, cfg_.d_m};
    auto rows = [&](const Tensor<Real>& init) {
      return broadcast_to(reshape(slice(init, 0, 0, cfg_.n_op), {1, cfg_.n_op, cfg_.d_m}), shape);
    };
    return {rows(op_init_), rows(res_init_)};
  }

  LanguageKeys<Real> project_language(const Tensor<Real>& x_l) const {
    if (x_l.rank() != 3 || x_l.dim(2) != cfg_.d_l) {
      throw ShapeError("language tokens must be [b, n_l, " + std::to_string(cfg_.d_l) +
                       "], got " + to_string(x_l.shape()));
    }
    return {lang_k_(x_l), lang_v_(x_l)};
  }

  VisualKeys<Real> project_visual(const Tensor<Real>& x_v) const {
    if (x_v.rank() != 3 || x_v.dim(2) != cfg_.d_v) {
      throw ShapeError("visual tokens must be [b, n_v, " + std::to_string(cfg_.d_v) +
                       "], got " + to_string(x_v.shape()));
    }
    return {vis_k1_(x_v), vis_v_(x_v)};
  }

  /// Retrieves new latent operations from language conditioned on m_op.
  AttentionOutput<Real> operation_formation(const LanguageKeys<Real>& lang,
                                            const Tensor<Real>& m_op,
                                            const std::optional<Tensor<Real>>& lang_mask =
                                                std::nullopt) const {
    Tensor<Real> q = lang_q2_(tanh(lang_q1_(m_op)));
    return modulated_attention(q, lang.k, lang.v, lang_score_, lang_mask);
  }

  AttentionOutput<Real> operation_formation(const Tensor<Real>& x_l, const Tensor<Real>& m_op,
                                            const std::optional<Tensor<Real>>& lang_mask =
                                                std::nullopt) const {
    return operation_formation(project_language(x_l), m_op, lang_mask);
  }

  /// Retrieves new results from the visual tokens. Each parallel operation
  /// attends over its own modulated key set.
  AttentionOutput<Real> operation_execution(const VisualKeys<Real>& vis, const Tensor<Real>& z_op,
                                            const Tensor<Real>& m_res,
                                            const std::optional<Tensor<Real>>& vis_mask =
                                                std::nullopt) const {
    const std::size_t b = z_op.dim(0), n_op = z_op.dim(1);
    const std::size_t n_v = vis.reduced.dim(1), dr = cfg_.reduced_dim();
    Tensor<Real> s = vis_s_(concat<Real>({vis_op_(z_op), vis_res_(m_res)}, -1));
    Tensor<Real> reduced = reshape(vis.reduced, {b, 1, n_v, dr});
    Tensor<Real> modulated = mul(reshape(s, {b, n_op, 1, dr}), reduced);
    Tensor<Real> base = broadcast_to(reduced, {b, n_op, n_v, dr});
    Tensor<Real> k = vis_k3_(apply(cfg_.phi, vis_k2_(concat<Real>({base, modulated}, -1))));
    Tensor<Real> q = vis_q_(z_op);
    return modulated_attention(q, k, vis.v, vis_score_, vis_mask);
  }

  AttentionOutput<Real> operation_execution(const Tensor<Real>& x_v, const Tensor<Real>& z_op,
                                            const Tensor<Real>& m_res,
                                            const std::optional<Tensor<Real>>& vis_mask =
                                                std::nullopt) const {
    return operation_execution(project_visual(x_v), z_op, m_res, vis_mask);
  }

  /// Identity block over the candidate keys, unmasked window keys.
  static Tensor<Real> composition_mask(std::size_t n_op, std::size_t n_keys) {
    std::vector<Real> m(n_op * n_keys, Real(0));
    for (std::size_t i = 0; i < n_op; ++i) m[i * n_keys + i] = Real(1);
    return Tensor<Real>({n_op, n_keys}, std::move(m));
  }

  /// Integrates new operations/results into memory and composes them with
  /// each other and with the windowed past states.
  CompositionOutput<Real> operation_composition(const Tensor<Real>& z_op,
                                                const Tensor<Real>& z_res,
                                                const MemoryWindow<Real>& window) const {
    if (window.size() == 0 || window.results.size() != window.size()) {
      throw std::invalid_argument("composition window must hold at least the previous state");
    }
    if (window.size() > cfg_.window_capacity()) {
      throw std::invalid_argument("composition window length " + std::to_string(window.size()) +
                                  " exceeds max(1, w) = " +
                                  std::to_string(cfg_.window_capacity()));
    }
    Tensor<Real> cand_op = add(op_update_(z_op), op_hidden_(window.ops.front()));
    Tensor<Real> cand_res = add(res_update_(z_res), res_hidden_(window.results.front()));
    if (!cfg_.composition) return {cand_op, cand_res, std::nullopt};

    std::vector<Tensor<Real>> op_tokens{cand_op};
    std::vector<Tensor<Real>> res_tokens{cand_res};
    op_tokens.insert(op_tokens.end(), window.ops.begin(), window.ops.end());
    res_tokens.insert(res_tokens.end(), window.results.begin(), window.results.end());
    Tensor<Real> op_all = concat(op_tokens, 1);
    Tensor<Real> res_all = concat(res_tokens, 1);

    const std::size_t n_op = z_op.dim(1);
    Tensor<Real> q = op_q_(cand_op);
    Tensor<Real> k = op_k_(op_all);
    Tensor<Real> v_op = op_v_(op_all);
    Tensor<Real> v_res = cfg_.result_composition == ResultComposition::kProjectedValues
                             ? res_v_(res_all)
                             : res_all;
    auto att = attention_with_secondary_values(q, k, v_op, v_res, op_score_,
                                               std::optional<Tensor<Real>>(composition_mask(
                                                   n_op, op_all.dim(1))));
    return {add(att.primary, op_u2_(cand_op)), add(att.secondary, res_v2_(cand_res)),
            att.weights};
  }

  /// Pools the final result states using the language summary as query.
  AttentionOutput<Real> pool_result(const Tensor<Real>& m_op, const Tensor<Real>& m_res,
                                    const Tensor<Real>& l_s) const {
    if (l_s.rank() != 2 || l_s.dim(1) != cfg_.d_l) {
      throw ShapeError("language summary must be [b, " + std::to_string(cfg_.d_l) + "], got " +
                       to_string(l_s.shape()));
    }
    const std::size_t b = l_s.dim(0);
    Tensor<Real> q = reshape(pool_q_(l_s), {b, 1, cfg_.d_m});
    auto att = modulated_attention(q, pool_k_(m_op), m_res, pool_score_);
    return {reshape(att.output, {b, cfg_.d_m}), att.weights};
  }

  IprmOutput<Real> forward(const Tensor<Real>& x_v, const Tensor<Real>& x_l,
                           const Tensor<Real>& l_s, const InputMasks<Real>& masks = {},
                           const ForwardOptions& options = {}) const {
    const std::size_t b = x_v.dim(0);
    if (x_l.dim(0) != b || l_s.dim(0) != b) {
      throw ShapeError("batch size differs across IPRM inputs");
    }
    IprmOutput<Real> out;
    MemoryState<Real> mem = init_memory(b);
    MemoryWindow<Real> window;
    window.push(mem, cfg_.window_capacity());

    LanguageKeys<Real> lang = project_language(x_l);
    const VisualKeys<Real> vis = project_visual(x_v);

    for (std::size_t t = 0; t < cfg_.t_steps; ++t) {
      detail::at_step(t, [&] {
        if (options.recompute_language_kv) lang = project_language(x_l);
        auto formed = operation_formation(lang, mem.op, masks.lang);
        auto executed = operation_execution(vis, formed.output, mem.res, masks.vis);
        auto composed = operation_composition(formed.output, executed.output, window);
        mem = {composed.m_op, composed.m_res};
        window.push(mem, cfg_.window_capacity());
        out.lang_atts.push_back(formed.weights);
        out.vis_atts.push_back(executed.weights);
        if (composed.a_op) out.comp_atts.push_back(*composed.a_op);
        out.window_sizes.push_back(window.size());
        return 0;
      });
    }

    auto pooled = pool_result(mem.op, mem.res, l_s);
    out.y_s = pooled.output;
    out.pool_att = pooled.weights;
    out.final_memory = mem;
    out.y_r = mem.res;
    return out;
  }

 private:
  IprmConfig cfg_;
  Tensor<Real> op_init_, res_init_;
  Linear<Real> lang_q1_, lang_q2_, lang_k_, lang_v_, lang_score_;
  Linear<Real> vis_op_, vis_res_, vis_s_, vis_k1_, vis_k2_, vis_k3_, vis_q_, vis_v_, vis_score_;
  Linear<Real> op_update_, op_hidden_, res_update_, res_hidden_;
  Linear<Real> op_q_, op_k_, op_v_, res_v_, op_u2_, res_v2_, op_score_;
  Linear<Real> pool_q_, pool_k_, pool_score_;
};

}  // namespace iprm

#endif  // IPRM_IPRM_HPP_
