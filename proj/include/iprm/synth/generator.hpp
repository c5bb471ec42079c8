#ifndef IPRM_SYNTH_GENERATOR_HPP_
#define IPRM_SYNTH_GENERATOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iprm/random.hpp"
#include "iprm/synth/program.hpp"
#include "iprm/synth/scene.hpp"

namespace iprm::synth {

enum class Family { kChain = 0, kParallel = 1, kLogical = 2, kCounting = 3 };
inline constexpr std::array<std::string_view, 4> kFamilyNames{"chain", "parallel", "logical",
                                                              "counting"};

inline std::string_view family_name(Family f) { return kFamilyNames[static_cast<int>(f)]; }

inline Family family_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kFamilyNames.size(); ++i) {
    if (kFamilyNames[i] == name) return static_cast<Family>(i);
  }
  throw std::invalid_argument("unknown question family '" + std::string(name) + "'");
}

inline std::vector<Family> all_families() {
  return {Family::kChain, Family::kParallel, Family::kLogical, Family::kCounting};
}

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };
inline constexpr std::array<std::string_view, 3> kSplitNames{"train", "val", "test"};

inline std::string_view split_name(Split s) { return kSplitNames[static_cast<int>(s)]; }

inline Split split_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kSplitNames.size(); ++i) {
    if (kSplitNames[i] == name) return static_cast<Split>(i);
  }
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

/// Split encoded in the low two bits of every scene seed.
inline Split split_of_seed(std::uint64_t seed) { return static_cast<Split>(seed & 3u); }

inline constexpr std::size_t kMinProgramLength = 2;
inline constexpr std::size_t kMaxProgramLength = 12;
inline constexpr int kQuestionResamples = 200;

struct QASample {
  Scene scene;
  std::vector<std::string> question;
  Program program;
  std::string answer;
  Split split = Split::kTrain;
  Family family = Family::kChain;

  bool operator==(const QASample&) const = default;
};

/// Raised when no acceptable question exists for a scene within the budget.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed question vocabulary; id 0 is padding.
class QuestionVocab {
 public:
  static const QuestionVocab& instance() {
    static const QuestionVocab v;
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }

  std::int64_t id(std::string_view tok) const {
    auto it = ids_.find(std::string(tok));
    if (it == ids_.end()) {
      throw std::out_of_range("token '" + std::string(tok) + "' not in question vocabulary");
    }
    return it->second;
  }

  std::vector<std::int64_t> encode(const std::vector<std::string>& words) const {
    std::vector<std::int64_t> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(id(w));
    return out;
  }

 private:
  QuestionVocab() {
    tokens_ = {"<pad>", "?",    "what",   "is",   "the",    "of",   "how",    "many",
               "are",   "there", "a",     "and",  "or",     "more", "fewer",  "than",
               "as",    "most",  "common", "among", "with",  "same", "left",  "right",
               "in",    "front", "behind", "object"};
    for (auto n : kAttributeNames) tokens_.emplace_back(n);
    for (int a = 0; a < kNumAttributes; ++a) {
      for (std::size_t v = 0; v < attribute_cardinality(a); ++v) {
        tokens_.emplace_back(attribute_value_name(a, static_cast<int>(v)));
      }
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<std::int64_t>(i);
  }

  std::vector<std::string> tokens_;
  std::map<std::string, std::int64_t> ids_;
};

namespace detail {

using Words = std::vector<std::string>;

inline void append(Words& w, std::initializer_list<std::string_view> more) {
  for (auto m : more) w.emplace_back(m);
}

inline void append(Words& w, const Words& more) { w.insert(w.end(), more.begin(), more.end()); }

/// Noun phrase (without article) describing the object set produced by node.
inline Words noun_phrase(const Program& p, int node) {
  std::array<int, kNumAttributes> fixed;
  fixed.fill(-1);
  std::vector<std::pair<int, int>> dynamic;  // (attr, max_occurring node)
  int cur = node;
  while (p.nodes[cur].fn == Fn::kFilter) {
    const auto& n = p.nodes[cur];
    if (n.inputs.size() == 2) {
      dynamic.emplace_back(n.attr, n.inputs[1]);
    } else {
      fixed[n.attr] = n.value;
    }
    cur = n.inputs[0];
  }
  Words w;
  for (int a : {kSize, kColor, kMaterial}) {
    if (fixed[a] >= 0) w.emplace_back(attribute_value_name(a, fixed[a]));
  }
  w.emplace_back(fixed[kShape] >= 0 ? attribute_value_name(kShape, fixed[kShape]) : "object");
  for (auto [attr, src] : dynamic) {
    const auto& m = p.nodes[src];
    append(w, {"with", "the", "most", "common", kAttributeNames[attr], "among", "the"});
    append(w, noun_phrase(p, m.inputs[0]));
  }
  const auto& base = p.nodes[cur];
  if (base.fn == Fn::kRelate) {
    switch (base.value) {
      case kLeft: append(w, {"left", "of", "the"}); break;
      case kRight: append(w, {"right", "of", "the"}); break;
      case kFront: append(w, {"in", "front", "of", "the"}); break;
      default: append(w, {"behind", "the"}); break;
    }
    append(w, noun_phrase(p, base.inputs[0]));
  } else if (base.fn == Fn::kSameAttr) {
    append(w, {"with", "the", "same", kAttributeNames[base.attr], "as", "the"});
    append(w, noun_phrase(p, base.inputs[0]));
  }
  return w;
}

}  // namespace detail

/// Template surface form of a program whose output node is a question root.
inline std::vector<std::string> render_question(const Program& p) {
  using detail::append;
  using detail::noun_phrase;
  const int root = static_cast<int>(p.nodes.size()) - 1;
  const auto& n = p.nodes[root];
  detail::Words w;
  auto exist_clause = [&](int node) {
    const auto& e = p.nodes[node];
    if (e.fn != Fn::kExist) throw ProgramError("logical clause must be exist");
    append(w, {"a"});
    append(w, noun_phrase(p, e.inputs[0]));
  };
  switch (n.fn) {
    case Fn::kQueryAttr:
      append(w, {"what", "is", "the", kAttributeNames[n.attr], "of", "the"});
      append(w, noun_phrase(p, n.inputs[0]));
      break;
    case Fn::kCount:
      append(w, {"how", "many"});
      append(w, noun_phrase(p, n.inputs[0]));
      append(w, {"are", "there"});
      break;
    case Fn::kExist:
      append(w, {"is", "there"});
      exist_clause(root);
      break;
    case Fn::kAnd:
    case Fn::kOr:
      append(w, {"is", "there"});
      exist_clause(n.inputs[0]);
      append(w, {n.fn == Fn::kAnd ? "and" : "or"});
      exist_clause(n.inputs[1]);
      break;
    case Fn::kCompareCount:
      append(w, {"are", "there"});
      append(w, {n.value == kGreater ? "more" : n.value == kLess ? "fewer" : "as"});
      if (n.value == kEqual) append(w, {"many"});
      append(w, noun_phrase(p, n.inputs[0]));
      append(w, {n.value == kEqual ? "as" : "than"});
      append(w, noun_phrase(p, n.inputs[1]));
      break;
    case Fn::kMaxOccurring:
      append(w, {"what", "is", "the", "most", "common", kAttributeNames[n.attr], "among", "the"});
      append(w, noun_phrase(p, n.inputs[0]));
      break;
    default: throw ProgramError("program root " + std::string(fn_name(n.fn)) + " is not a question");
  }
  w.emplace_back("?");
  return w;
}

namespace detail {

inline std::vector<int> matching(const Scene& s, const std::vector<int>& pool, int attr, int value) {
  std::vector<int> out;
  for (int o : pool) {
    if (s.objects[o].attrs[attr] == value) out.push_back(o);
  }
  return out;
}

inline std::vector<int> all_objects(const Scene& s) {
  std::vector<int> v(s.objects.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<int>(i);
  return v;
}

/// Random attribute subset that singles out `target` within `pool`.
/// Returns the attributes in the order they should be filtered.
inline std::optional<std::vector<int>> unique_description(Rng& rng, const Scene& s,
                                                          const std::vector<int>& pool, int target,
                                                          bool allow_empty) {
  std::vector<int> order{kShape, kColor, kSize, kMaterial};
  rng.shuffle(order);
  std::vector<int> chosen;
  std::vector<int> remaining = pool;
  if (allow_empty && remaining.size() == 1 && rng.coin(0.5)) return chosen;
  for (int a : order) {
    if (remaining.size() == 1) {
      if (!rng.coin(0.25)) break;
      chosen.push_back(a);
      continue;
    }
    auto next = matching(s, remaining, a, s.objects[target].attrs[a]);
    if (next.size() < remaining.size()) {
      chosen.push_back(a);
      remaining = std::move(next);
    }
  }
  if (remaining.size() != 1) return std::nullopt;
  return chosen;
}

inline int add_filters(Program& p, int input, const Scene& s, int target,
                       const std::vector<int>& attrs) {
  for (int a : attrs) input = p.add({Fn::kFilter, a, s.objects[target].attrs[a], {input}});
  return input;
}

inline int add_random_filters(Program& p, Rng& rng, int input, const Scene& s, int min_n,
                              int max_n) {
  std::vector<int> order{kShape, kColor, kSize, kMaterial};
  rng.shuffle(order);
  const int n = rng.between(min_n, max_n);
  // Anchoring values on an existing object keeps non-empty sets common.
  const auto& ref = s.objects[rng.below(s.objects.size())];
  const bool anchored = rng.coin(0.7);
  for (int i = 0; i < n; ++i) {
    const int a = order[i];
    const int v = anchored ? ref.attrs[a] : static_cast<int>(rng.below(attribute_cardinality(a)));
    input = p.add({Fn::kFilter, a, v, {input}});
  }
  return input;
}

inline std::optional<Program> draw_chain(Rng& rng, const Scene& s) {
  Program p;
  const int scene = p.add({Fn::kScene, -1, -1, {}});
  const auto everyone = all_objects(s);
  int current = static_cast<int>(rng.below(s.objects.size()));
  auto desc = unique_description(rng, s, everyone, current, false);
  if (!desc) return std::nullopt;
  int node = add_filters(p, scene, s, current, *desc);
  std::vector<int> last_desc = *desc;
  const int hops = rng.between(0, 3);
  for (int h = 0; h < hops; ++h) {
    std::vector<int> pool;
    int hop_node;
    if (rng.coin(0.8)) {
      const int rel = static_cast<int>(rng.below(4));
      hop_node = p.add({Fn::kRelate, -1, rel, {node}});
      const auto& t = s.objects[current];
      for (int o : everyone) {
        const auto& c = s.objects[o];
        const bool keep = rel == kLeft    ? c.x < t.x
                          : rel == kRight ? c.x > t.x
                          : rel == kFront ? c.y > t.y
                                          : c.y < t.y;
        if (keep) pool.push_back(o);
      }
    } else {
      const int attr = static_cast<int>(rng.below(kNumAttributes));
      hop_node = p.add({Fn::kSameAttr, attr, -1, {node}});
      for (int o : everyone) {
        if (o != current && s.objects[o].attrs[attr] == s.objects[current].attrs[attr]) {
          pool.push_back(o);
        }
      }
    }
    if (pool.empty()) return std::nullopt;
    current = pool[rng.below(pool.size())];
    desc = unique_description(rng, s, pool, current, true);
    if (!desc) return std::nullopt;
    node = add_filters(p, hop_node, s, current, *desc);
    last_desc = *desc;
  }
  std::vector<int> unused;
  for (int a = 0; a < kNumAttributes; ++a) {
    if (std::find(last_desc.begin(), last_desc.end(), a) == last_desc.end()) unused.push_back(a);
  }
  if (unused.empty()) return std::nullopt;
  p.add({Fn::kQueryAttr, unused[rng.below(unused.size())], -1, {node}});
  return p;
}

inline std::optional<Program> draw_parallel(Rng& rng, const Scene& s) {
  Program p;
  const int scene = p.add({Fn::kScene, -1, -1, {}});
  const bool composed = rng.coin(0.5);
  const int n_filters = composed ? rng.between(0, 1) : rng.between(1, 2);
  int set = add_random_filters(p, rng, scene, s, n_filters, n_filters);
  std::vector<int> used;
  for (const auto& n : p.nodes) {
    if (n.fn == Fn::kFilter) used.push_back(n.attr);
  }
  std::vector<int> free_attrs;
  for (int a = 0; a < kNumAttributes; ++a) {
    if (std::find(used.begin(), used.end(), a) == used.end()) free_attrs.push_back(a);
  }
  const int attr = free_attrs[rng.below(free_attrs.size())];
  const int most = p.add({Fn::kMaxOccurring, attr, -1, {set}});
  if (!composed) return p;
  int chosen = p.add({Fn::kFilter, attr, -1, {scene, most}});
  if (rng.coin(0.5)) {
    int other = static_cast<int>(rng.below(kNumAttributes - 1));
    if (other >= attr) ++other;
    chosen = p.add({Fn::kFilter, other,
                    static_cast<int>(rng.below(attribute_cardinality(other))), {chosen}});
  }
  p.add({rng.coin(0.7) ? Fn::kCount : Fn::kExist, -1, -1, {chosen}});
  return p;
}

inline std::optional<Program> draw_logical(Rng& rng, const Scene& s) {
  Program p;
  const int scene = p.add({Fn::kScene, -1, -1, {}});
  const int a = p.add({Fn::kExist, -1, -1, {add_random_filters(p, rng, scene, s, 1, 3)}});
  const int b = p.add({Fn::kExist, -1, -1, {add_random_filters(p, rng, scene, s, 1, 3)}});
  p.add({rng.coin(0.5) ? Fn::kAnd : Fn::kOr, -1, -1, {a, b}});
  return p;
}

inline std::optional<Program> draw_counting(Rng& rng, const Scene& s) {
  Program p;
  const int scene = p.add({Fn::kScene, -1, -1, {}});
  if (rng.coin(0.3)) {
    const int a = add_random_filters(p, rng, scene, s, 1, 2);
    const int b = add_random_filters(p, rng, scene, s, 1, 2);
    p.add({Fn::kCompareCount, -1, static_cast<int>(rng.below(3)), {a, b}});
    return p;
  }
  int base = scene;
  if (rng.coin(0.3)) {
    const int anchor = static_cast<int>(rng.below(s.objects.size()));
    auto desc = unique_description(rng, s, all_objects(s), anchor, false);
    if (!desc) return std::nullopt;
    base = p.add({Fn::kRelate, -1, static_cast<int>(rng.below(4)),
                  {add_filters(p, scene, s, anchor, *desc)}});
  }
  p.add({Fn::kCount, -1, -1, {add_random_filters(p, rng, base, s, 1, 3)}});
  return p;
}

}  // namespace detail

/// Draws a question of `family` about `scene` whose oracle answer is
/// unambiguous, whose length is within [2, 12], and which `accept` allows.
template <class Accept>
QASample gen_question(Rng& rng, const Scene& scene, Family family, Accept&& accept) {
  for (int attempt = 0; attempt < kQuestionResamples; ++attempt) {
    std::optional<Program> p;
    switch (family) {
      case Family::kChain: p = detail::draw_chain(rng, scene); break;
      case Family::kParallel: p = detail::draw_parallel(rng, scene); break;
      case Family::kLogical: p = detail::draw_logical(rng, scene); break;
      case Family::kCounting: p = detail::draw_counting(rng, scene); break;
    }
    if (!p) continue;
    const std::size_t len = p->length();
    if (len < kMinProgramLength || len > kMaxProgramLength) continue;
    std::string answer = oracle_answer(scene, *p);
    if (answer == kAmbiguousAnswer || !accept(answer)) continue;
    QASample s;
    s.scene = scene;
    s.question = render_question(*p);
    s.program = std::move(*p);
    s.answer = std::move(answer);
    s.family = family;
    s.split = split_of_seed(scene.seed);
    return s;
  }
  throw GenerationError("no valid " + std::string(family_name(family)) + " question after " +
                        std::to_string(kQuestionResamples) + " resamples");
}

inline QASample gen_question(Rng& rng, const Scene& scene, Family family) {
  return gen_question(rng, scene, family, [](const std::string&) { return true; });
}

/// Largest share any single answer may take within a family. Families whose
/// answers are binary cannot go below one half.
inline double answer_cap(Family f) { return f == Family::kLogical ? 0.5 : 0.4; }

inline std::uint64_t sample_seed(std::uint64_t master, Split split, std::uint64_t index,
                                 std::uint64_t attempt) {
  const std::uint64_t h =
      splitmix64(master ^ splitmix64((index << 16) ^ attempt ^ (static_cast<std::uint64_t>(split) << 62)));
  return (h & ~std::uint64_t{3}) | static_cast<std::uint64_t>(split);
}

/// Generates `n` samples of one split. Families rotate by index; per-family
/// answer quotas keep every answer at or below answer_cap of its family.
inline std::vector<QASample> generate_split(std::uint64_t master_seed, Split split, std::size_t n,
                                            const std::vector<Family>& families) {
  if (families.empty()) throw std::invalid_argument("at least one family is required");
  std::map<Family, std::size_t> target;
  for (std::size_t i = 0; i < n; ++i) ++target[families[i % families.size()]];
  std::map<Family, std::map<std::string, std::size_t>> used;
  std::vector<QASample> out;
  out.reserve(n);
  constexpr std::uint64_t kAttempts = 1000;
  for (std::size_t i = 0; i < n; ++i) {
    const Family fam = families[i % families.size()];
    const auto quota = static_cast<std::size_t>(
        std::ceil(answer_cap(fam) * static_cast<double>(target[fam]) - 1e-9));
    auto& counts = used[fam];
    bool done = false;
    for (std::uint64_t attempt = 0; attempt < kAttempts && !done; ++attempt) {
      const std::uint64_t seed = sample_seed(master_seed, split, i, attempt);
      Rng rng(seed);
      Scene scene = gen_scene(rng, static_cast<std::size_t>(rng.between(3, 10)), seed);
      try {
        QASample s = gen_question(rng, scene, fam, [&](const std::string& a) {
          return counts[a] < quota;
        });
        ++counts[s.answer];
        out.push_back(std::move(s));
        done = true;
      } catch (const GenerationError&) {
      }
    }
    if (!done) {
      throw GenerationError("sample " + std::to_string(i) + " of split " +
                            std::string(split_name(split)) + " could not be generated");
    }
  }
  return out;
}

}  // namespace iprm::synth

#endif  // IPRM_SYNTH_GENERATOR_HPP_
