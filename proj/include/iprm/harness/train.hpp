#ifndef IPRM_HARNESS_TRAIN_HPP_
#define IPRM_HARNESS_TRAIN_HPP_

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iprm/harness/optim.hpp"
#include "iprm/model.hpp"

namespace iprm::harness {

struct TrainConfig {
  double lr = 1e-4;
  double clip = 8.0;
  double plateau_factor = 0.5;
  double plateau_threshold = 1e-3;
  std::size_t patience = 0;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 30;
  std::uint64_t seed = 0;
  bool shuffle = true;
  double min_lr = 1e-6;

  PlateauConfig plateau() const { return {plateau_factor, plateau_threshold, patience}; }

  void validate() const {
    if (!(lr > 0) || !(clip > 0) || !(plateau_factor > 0 && plateau_factor < 1) ||
        plateau_threshold < 0 || batch_size == 0) {
      throw std::invalid_argument(
          "train config needs lr > 0, clip > 0, 0 < plateau_factor < 1, plateau_threshold >= 0, "
          "batch_size > 0");
    }
  }
};

/// Raised when the loss becomes non-finite during training.
class TrainingAborted : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct Bucket {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  bool operator==(const Bucket&) const = default;
};

struct EvalResult {
  Bucket overall;
  std::map<std::string, Bucket> per_family;
  std::map<std::size_t, Bucket> per_length;
  std::vector<std::int64_t> predictions;

  double accuracy() const { return overall.accuracy(); }
  bool operator==(const EvalResult&) const = default;
};

inline nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json fam = nlohmann::json::object(), len = nlohmann::json::object();
  for (const auto& [k, b] : r.per_family) fam[k] = {{"correct", b.correct}, {"total", b.total}, {"accuracy", b.accuracy()}};
  for (const auto& [k, b] : r.per_length) {
    len[std::to_string(k)] = {{"correct", b.correct}, {"total", b.total}, {"accuracy", b.accuracy()}};
  }
  return {{"accuracy", r.accuracy()},
          {"correct", r.overall.correct},
          {"total", r.overall.total},
          {"per_family", fam},
          {"per_length", len}};
}

/// Exact-match accuracy, bucketed by family and program length.
template <class Real>
EvalResult evaluate(const Model<Real>& model, const std::vector<synth::QASample>& data,
                    std::size_t batch_size = 128) {
  NoGradGuard guard;
  EvalResult r;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = make_batch(data, idx);
    const auto pred = Model<Real>::predictions(model.forward(batch).logits);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& s = data[idx[i]];
      const bool ok = pred[i] == batch.answers[i];
      for (Bucket* b : {&r.overall, &r.per_family[std::string(synth::family_name(s.family))],
                        &r.per_length[s.program.length()]}) {
        b->correct += ok;
        ++b->total;
      }
      r.predictions.push_back(pred[i]);
    }
  }
  return r;
}

/// Fraction of the most frequent answer; the accuracy of always guessing it.
inline double majority_baseline(const std::vector<synth::QASample>& train,
                                const std::vector<synth::QASample>& eval) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : train) ++counts[s.answer];
  if (counts.empty() || eval.empty()) return 0.0;
  auto best = std::max_element(counts.begin(), counts.end(),
                               [](const auto& a, const auto& b) { return a.second < b.second; });
  std::size_t hit = 0;
  for (const auto& s : eval) hit += s.answer == best->first;
  return static_cast<double>(hit) / static_cast<double>(eval.size());
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double val_accuracy = 0;
  double lr = 0;
  double mean_grad_norm = 0;
  std::map<std::string, double> val_per_family;
  std::map<std::size_t, double> val_per_length;

  bool operator==(const EpochRecord&) const = default;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json fam = nlohmann::json::object(), len = nlohmann::json::object();
  for (const auto& [k, v] : r.val_per_family) fam[k] = v;
  for (const auto& [k, v] : r.val_per_length) len[std::to_string(k)] = v;
  return {{"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"train_accuracy", r.train_accuracy},
          {"val_accuracy", r.val_accuracy},
          {"lr", r.lr},
          {"mean_grad_norm", r.mean_grad_norm},
          {"val_per_family", fam},
          {"val_per_length", len}};
}

inline EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.train_loss = j.at("train_loss").get<double>();
  r.train_accuracy = j.at("train_accuracy").get<double>();
  r.val_accuracy = j.at("val_accuracy").get<double>();
  r.lr = j.at("lr").get<double>();
  r.mean_grad_norm = j.at("mean_grad_norm").get<double>();
  for (const auto& [k, v] : j.at("val_per_family").items()) r.val_per_family[k] = v.get<double>();
  for (const auto& [k, v] : j.at("val_per_length").items()) {
    r.val_per_length[std::stoul(k)] = v.get<double>();
  }
  return r;
}

/// Everything needed to continue a run: optimizer moments, data-order RNG,
/// schedule position and history.
template <class Real>
struct TrainSession {
  explicit TrainSession(Model<Real>& m, const TrainConfig& cfg)
      : model(&m), config(cfg), adam(m.registry().parameters()), rng(cfg.seed), lr(cfg.lr) {
    cfg.validate();
  }

  Model<Real>* model;
  TrainConfig config;
  Adam<Real> adam;
  Rng rng;
  double lr;
  std::size_t epoch = 0;  // completed epochs
  std::vector<EpochRecord> history;

  std::vector<double> val_history() const {
    std::vector<double> v;
    for (const auto& r : history) v.push_back(r.val_accuracy);
    return v;
  }

  bool finished() const { return epoch >= config.max_epochs || lr < config.min_lr; }

  /// One pass over `train` followed by validation and the schedule update.
  EpochRecord run_epoch(const std::vector<synth::QASample>& train,
                        const std::vector<synth::QASample>& val) {
    if (train.empty()) throw std::invalid_argument("training set is empty");
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    if (config.shuffle) rng.shuffle(order);
    auto& params = model->registry().parameters();
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    double loss_sum = 0, norm_sum = 0;
    std::size_t correct = 0, steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      const Batch batch = make_batch(
          train, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(start + n)));
      model->registry().zero_grad();
      const auto out = model->forward(batch);
      const Tensor<Real> loss = cross_entropy(out.logits, batch.answers);
      const double lv = static_cast<double>(loss.item());
      loss.backward();
      const double norm = global_grad_norm(params);
      if (!std::isfinite(lv) || !std::isfinite(norm)) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << rec.epoch << " step " << steps
           << " (loss " << lv << ", lr " << lr << ", grad norm " << norm << ")";
        throw TrainingAborted(os.str());
      }
      clip_gradients(params, config.clip);
      adam.step(lr);
      const auto pred = Model<Real>::predictions(out.logits);
      for (std::size_t i = 0; i < n; ++i) correct += pred[i] == batch.answers[i];
      loss_sum += lv * static_cast<double>(n);
      norm_sum += norm;
      ++steps;
    }
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    rec.mean_grad_norm = norm_sum / static_cast<double>(steps);
    const EvalResult ev = evaluate(*model, val.empty() ? train : val);
    rec.val_accuracy = ev.accuracy();
    for (const auto& [k, b] : ev.per_family) rec.val_per_family[k] = b.accuracy();
    for (const auto& [k, b] : ev.per_length) rec.val_per_length[k] = b.accuracy();
    history.push_back(rec);
    ++epoch;
    lr = lr_plateau_step(val_history(), lr, config.plateau());
    return rec;
  }

  /// Runs epochs until max_epochs or the learning-rate floor. The callback
  /// sees every record and whether it is the best validation so far.
  void run(const std::vector<synth::QASample>& train, const std::vector<synth::QASample>& val,
           const std::function<void(const EpochRecord&, bool)>& on_epoch = {}) {
    while (!finished()) {
      double best = -1;
      for (const auto& r : history) best = std::max(best, r.val_accuracy);
      const EpochRecord rec = run_epoch(train, val);
      if (on_epoch) on_epoch(rec, rec.val_accuracy > best);
    }
  }
};

/// Trains from scratch and returns the metric history.
template <class Real>
std::vector<EpochRecord> train(Model<Real>& model, const std::vector<synth::QASample>& train_set,
                               const std::vector<synth::QASample>& val_set, const TrainConfig& cfg) {
  TrainSession<Real> session(model, cfg);
  session.run(train_set, val_set);
  return session.history;
}

}  // namespace iprm::harness

#endif  // IPRM_HARNESS_TRAIN_HPP_
