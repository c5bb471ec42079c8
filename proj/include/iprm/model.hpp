#ifndef IPRM_MODEL_HPP_
#define IPRM_MODEL_HPP_

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iprm/baselines.hpp"
#include "iprm/encoders.hpp"
#include "iprm/iprm.hpp"
#include "iprm/synth/generator.hpp"

namespace iprm {

enum class ModelKind { kIprm, kCross, kConcat };

inline std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kIprm: return "iprm";
    case ModelKind::kCross: return "cross";
    case ModelKind::kConcat: return "concat";
  }
  return "?";
}

inline ModelKind model_kind_from_name(const std::string& s) {
  if (s == "iprm") return ModelKind::kIprm;
  if (s == "cross") return ModelKind::kCross;
  if (s == "concat") return ModelKind::kConcat;
  throw std::invalid_argument("unknown model kind '" + s + "' (expected iprm, cross or concat)");
}

/// End-to-end model settings. Language, visual and memory widths are all
/// `dim`; the iprm fields d_m, d_l and d_v are overwritten with it.
struct ModelConfig {
  ModelKind kind = ModelKind::kIprm;
  std::size_t dim = 64;
  IprmConfig iprm;
  std::size_t baseline_layers = 4;
  std::size_t baseline_heads = 4;
  std::uint64_t init_seed = 1;

  IprmConfig core() const {
    IprmConfig c = iprm;
    c.d_m = c.d_l = c.d_v = dim;
    return c;
  }

  BaselineConfig baseline() const {
    BaselineConfig b;
    b.n_layers = baseline_layers;
    b.n_heads = baseline_heads;
    b.d_model = b.d_l = b.d_v = b.d_out = dim;
    b.variant = kind == ModelKind::kCross ? BaselineVariant::kCross : BaselineVariant::kConcat;
    return b;
  }
};

struct Batch {
  std::vector<std::vector<std::int64_t>> questions;
  std::vector<synth::Scene> scenes;
  std::vector<std::int64_t> answers;

  std::size_t size() const { return questions.size(); }
};

inline Batch make_batch(const std::vector<synth::QASample>& data,
                        const std::vector<std::size_t>& indices) {
  const auto& vocab = synth::QuestionVocab::instance();
  Batch b;
  for (auto i : indices) {
    const auto& s = data.at(i);
    b.questions.push_back(vocab.encode(s.question));
    b.scenes.push_back(s.scene);
    b.answers.push_back(synth::answer_id(s.answer));
  }
  return b;
}

template <class Real>
struct ModelOutput {
  Tensor<Real> logits;  // [b, |answers|]
  std::optional<IprmOutput<Real>> iprm;
  EncodedQuestion<Real> question;
  EncodedScene<Real> scene;
};

/// Encoders, reasoning core and answer head sharing one parameter registry.
template <class Real>
class Model {
 public:
  explicit Model(ModelConfig config) : cfg_(std::move(config)), reg_(cfg_.init_seed) {
    const std::size_t d = cfg_.dim;
    question_ = QuestionEncoder<Real>(reg_, synth::QuestionVocab::instance().size(), d);
    scene_ = SceneEncoder<Real>(reg_, d);
    if (cfg_.kind == ModelKind::kIprm) {
      iprm_ = std::make_unique<Iprm<Real>>(reg_, cfg_.core());
    } else {
      baseline_ = std::make_unique<Baseline<Real>>(reg_, cfg_.baseline());
    }
    head_ = Classifier<Real>(reg_, d, synth::answer_vocabulary().size());
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterRegistry<Real>& registry() { return reg_; }
  const ParameterRegistry<Real>& registry() const { return reg_; }
  const Iprm<Real>* iprm() const { return iprm_.get(); }

  ModelOutput<Real> forward(const Batch& batch) const {
    ModelOutput<Real> out;
    out.question = question_(batch.questions);
    out.scene = scene_(batch.scenes);
    Tensor<Real> y_s;
    if (iprm_) {
      out.iprm = iprm_->forward(out.scene.x_v, out.question.x_l, out.question.l_s,
                                {out.question.mask, out.scene.mask});
      y_s = out.iprm->y_s;
    } else {
      y_s = baseline_->forward(out.scene.x_v, out.question.x_l, out.question.mask, out.scene.mask).y_s;
    }
    out.logits = head_(y_s);
    return out;
  }

  /// Arg-max answer id per sample.
  static std::vector<std::int64_t> predictions(const Tensor<Real>& logits) {
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    std::vector<std::int64_t> out(b);
    for (std::size_t i = 0; i < b; ++i) {
      const Real* row = logits.data().data() + i * c;
      out[i] = std::max_element(row, row + c) - row;
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  ParameterRegistry<Real> reg_;
  QuestionEncoder<Real> question_;
  SceneEncoder<Real> scene_;
  std::unique_ptr<Iprm<Real>> iprm_;
  std::unique_ptr<Baseline<Real>> baseline_;
  Classifier<Real> head_;
};

}  // namespace iprm

#endif  // IPRM_MODEL_HPP_
