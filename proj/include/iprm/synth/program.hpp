#ifndef IPRM_SYNTH_PROGRAM_HPP_
#define IPRM_SYNTH_PROGRAM_HPP_

#include <algorithm>
#include <array>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iprm/synth/scene.hpp"

namespace iprm::synth {

enum class Fn {
  kScene,
  kFilter,
  kRelate,
  kSameAttr,
  kCount,
  kExist,
  kQueryAttr,
  kMaxOccurring,
  kAnd,
  kOr,
  kCompareCount,
};

enum Relation : int { kLeft = 0, kRight = 1, kFront = 2, kBehind = 3 };
enum Comparison : int { kGreater = 0, kLess = 1, kEqual = 2 };

inline constexpr std::array<std::string_view, 11> kFnNames{
    "scene", "filter_attr", "relate", "same_attr", "count", "exist",
    "query_attr", "max_occurring_attr", "and", "or", "compare_count"};
inline constexpr std::array<std::string_view, 4> kRelationNames{"left", "right", "front",
                                                                "behind"};
inline constexpr std::array<std::string_view, 3> kComparisonNames{"greater", "less", "equal"};

inline std::string_view fn_name(Fn fn) { return kFnNames[static_cast<std::size_t>(fn)]; }

inline Fn fn_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kFnNames.size(); ++i) {
    if (kFnNames[i] == name) return static_cast<Fn>(i);
  }
  throw std::out_of_range("unknown program function '" + std::string(name) + "'");
}

/// One primitive. `attr` and `value` are interpreted per function:
/// filter_attr uses (attr, value) or, with a second input, takes its value
/// from that input; relate stores a Relation in `value`; compare_count
/// stores a Comparison in `value`.
struct ProgramNode {
  Fn fn = Fn::kScene;
  int attr = -1;
  int value = -1;
  std::vector<int> inputs;

  bool operator==(const ProgramNode&) const = default;
};

struct Program {
  std::vector<ProgramNode> nodes;  // topologically ordered; last node is the output

  int add(ProgramNode n) {
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
  }

  /// Number of primitives, not counting the scene source.
  std::size_t length() const {
    return static_cast<std::size_t>(std::count_if(
        nodes.begin(), nodes.end(), [](const ProgramNode& n) { return n.fn != Fn::kScene; }));
  }

  bool operator==(const Program&) const = default;
};

class ProgramError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::string_view kAmbiguousAnswer = "<ambiguous>";

/// Answer tokens: yes/no, counts 0..10, then every attribute value.
inline const std::vector<std::string>& answer_vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v{"yes", "no"};
    for (int i = 0; i <= static_cast<int>(kMaxObjects); ++i) v.push_back(std::to_string(i));
    for (int a = 0; a < kNumAttributes; ++a) {
      for (std::size_t i = 0; i < attribute_cardinality(a); ++i) {
        v.emplace_back(attribute_value_name(a, static_cast<int>(i)));
      }
    }
    return v;
  }();
  return vocab;
}

inline std::int64_t answer_id(std::string_view answer) {
  const auto& v = answer_vocabulary();
  auto it = std::find(v.begin(), v.end(), answer);
  if (it == v.end()) throw std::out_of_range("unknown answer '" + std::string(answer) + "'");
  return it - v.begin();
}

namespace detail {

enum class ValueType { kObjects, kNumber, kBool, kAttrValue };

struct Value {
  ValueType type = ValueType::kObjects;
  std::vector<int> objects;
  int number = 0;
  bool flag = false;
  int attr = -1;
  int attr_value = -1;
  bool ambiguous = false;
};

inline void expect_inputs(const ProgramNode& n, std::size_t count, std::size_t index) {
  if (n.inputs.size() != count) {
    throw ProgramError("node " + std::to_string(index) + " (" + std::string(fn_name(n.fn)) +
                       ") expects " + std::to_string(count) + " inputs, got " +
                       std::to_string(n.inputs.size()));
  }
}

inline void expect_attr(const ProgramNode& n, std::size_t index) {
  if (n.attr < 0 || n.attr >= kNumAttributes) {
    throw ProgramError("node " + std::to_string(index) + " (" + std::string(fn_name(n.fn)) +
                       ") has no valid attribute");
  }
}

}  // namespace detail

/// Symbolic executor. Returns an answer token, or kAmbiguousAnswer when a
/// uniqueness premise fails (relating/querying a non-singleton set) or a
/// most-frequent value is tied or undefined. Throws ProgramError for
/// ill-typed programs.
inline std::string oracle_answer(const Scene& scene, const Program& program) {
  using detail::Value;
  using detail::ValueType;
  if (program.nodes.empty()) throw ProgramError("empty program");
  std::vector<Value> vals(program.nodes.size());
  auto input = [&](const ProgramNode& n, std::size_t slot, ValueType want,
                   std::size_t index) -> const Value& {
    const int src = n.inputs[slot];
    if (src < 0 || static_cast<std::size_t>(src) >= index) {
      throw ProgramError("node " + std::to_string(index) + " refers to node " +
                         std::to_string(src) + " which is not earlier in the program");
    }
    if (vals[src].type != want) {
      throw ProgramError("node " + std::to_string(index) + " (" + std::string(fn_name(n.fn)) +
                         ") input " + std::to_string(slot) + " has the wrong type");
    }
    return vals[src];
  };
  auto singleton = [&](const Value& v, Value& out) {
    if (v.ambiguous || v.objects.size() != 1) {
      out.ambiguous = true;
      return -1;
    }
    return v.objects.front();
  };

  for (std::size_t i = 0; i < program.nodes.size(); ++i) {
    const ProgramNode& n = program.nodes[i];
    Value& out = vals[i];
    switch (n.fn) {
      case Fn::kScene: {
        detail::expect_inputs(n, 0, i);
        out.type = ValueType::kObjects;
        for (std::size_t o = 0; o < scene.objects.size(); ++o) {
          out.objects.push_back(static_cast<int>(o));
        }
        break;
      }
      case Fn::kFilter: {
        detail::expect_attr(n, i);
        if (n.inputs.size() != 1 && n.inputs.size() != 2) detail::expect_inputs(n, 1, i);
        const Value& in = input(n, 0, ValueType::kObjects, i);
        int want = n.value;
        out.ambiguous = in.ambiguous;
        if (n.inputs.size() == 2) {
          const Value& dyn = input(n, 1, ValueType::kAttrValue, i);
          if (dyn.attr != n.attr) {
            throw ProgramError("node " + std::to_string(i) + " filters " +
                               std::string(kAttributeNames[n.attr]) + " by a " +
                               std::string(kAttributeNames[dyn.attr]) + " value");
          }
          want = dyn.attr_value;
          out.ambiguous = out.ambiguous || dyn.ambiguous;
        } else if (n.value < 0 || static_cast<std::size_t>(n.value) >=
                                      attribute_cardinality(n.attr)) {
          throw ProgramError("node " + std::to_string(i) + " has an invalid filter value");
        }
        out.type = ValueType::kObjects;
        for (int o : in.objects) {
          if (scene.objects[o].attrs[n.attr] == want) out.objects.push_back(o);
        }
        break;
      }
      case Fn::kRelate: {
        detail::expect_inputs(n, 1, i);
        if (n.value < 0 || n.value > kBehind) throw ProgramError("invalid relation");
        out.type = ValueType::kObjects;
        const int t = singleton(input(n, 0, ValueType::kObjects, i), out);
        if (t < 0) break;
        const auto& target = scene.objects[t];
        for (std::size_t o = 0; o < scene.objects.size(); ++o) {
          const auto& c = scene.objects[o];
          const bool keep = n.value == kLeft    ? c.x < target.x
                            : n.value == kRight ? c.x > target.x
                            : n.value == kFront ? c.y > target.y
                                                : c.y < target.y;
          if (keep) out.objects.push_back(static_cast<int>(o));
        }
        break;
      }
      case Fn::kSameAttr: {
        detail::expect_inputs(n, 1, i);
        detail::expect_attr(n, i);
        out.type = ValueType::kObjects;
        const int t = singleton(input(n, 0, ValueType::kObjects, i), out);
        if (t < 0) break;
        for (std::size_t o = 0; o < scene.objects.size(); ++o) {
          if (static_cast<int>(o) != t &&
              scene.objects[o].attrs[n.attr] == scene.objects[t].attrs[n.attr]) {
            out.objects.push_back(static_cast<int>(o));
          }
        }
        break;
      }
      case Fn::kCount: {
        detail::expect_inputs(n, 1, i);
        const Value& in = input(n, 0, ValueType::kObjects, i);
        out.type = ValueType::kNumber;
        out.number = static_cast<int>(in.objects.size());
        out.ambiguous = in.ambiguous;
        break;
      }
      case Fn::kExist: {
        detail::expect_inputs(n, 1, i);
        const Value& in = input(n, 0, ValueType::kObjects, i);
        out.type = ValueType::kBool;
        out.flag = !in.objects.empty();
        out.ambiguous = in.ambiguous;
        break;
      }
      case Fn::kQueryAttr: {
        detail::expect_inputs(n, 1, i);
        detail::expect_attr(n, i);
        out.type = ValueType::kAttrValue;
        out.attr = n.attr;
        const int t = singleton(input(n, 0, ValueType::kObjects, i), out);
        if (t >= 0) out.attr_value = scene.objects[t].attrs[n.attr];
        break;
      }
      case Fn::kMaxOccurring: {
        detail::expect_inputs(n, 1, i);
        detail::expect_attr(n, i);
        const Value& in = input(n, 0, ValueType::kObjects, i);
        out.type = ValueType::kAttrValue;
        out.attr = n.attr;
        out.ambiguous = in.ambiguous;
        std::vector<int> counts(attribute_cardinality(n.attr), 0);
        for (int o : in.objects) ++counts[scene.objects[o].attrs[n.attr]];
        const int best = *std::max_element(counts.begin(), counts.end());
        if (best == 0 || std::count(counts.begin(), counts.end(), best) > 1) {
          out.ambiguous = true;
        } else {
          out.attr_value =
              static_cast<int>(std::find(counts.begin(), counts.end(), best) - counts.begin());
        }
        break;
      }
      case Fn::kAnd:
      case Fn::kOr: {
        detail::expect_inputs(n, 2, i);
        const Value& a = input(n, 0, ValueType::kBool, i);
        const Value& b = input(n, 1, ValueType::kBool, i);
        out.type = ValueType::kBool;
        out.flag = n.fn == Fn::kAnd ? (a.flag && b.flag) : (a.flag || b.flag);
        out.ambiguous = a.ambiguous || b.ambiguous;
        break;
      }
      case Fn::kCompareCount: {
        detail::expect_inputs(n, 2, i);
        if (n.value < 0 || n.value > kEqual) throw ProgramError("invalid comparison");
        const Value& a = input(n, 0, ValueType::kObjects, i);
        const Value& b = input(n, 1, ValueType::kObjects, i);
        const auto na = a.objects.size(), nb = b.objects.size();
        out.type = ValueType::kBool;
        out.flag = n.value == kGreater ? na > nb : n.value == kLess ? na < nb : na == nb;
        out.ambiguous = a.ambiguous || b.ambiguous;
        break;
      }
    }
  }

  const Value& result = vals.back();
  if (result.ambiguous) return std::string(kAmbiguousAnswer);
  switch (result.type) {
    case ValueType::kBool: return result.flag ? "yes" : "no";
    case ValueType::kNumber: return std::to_string(result.number);
    case ValueType::kAttrValue:
      return std::string(attribute_value_name(result.attr, result.attr_value));
    case ValueType::kObjects: break;
  }
  throw ProgramError("program output is an object set, not an answer");
}

}  // namespace iprm::synth

#endif  // IPRM_SYNTH_PROGRAM_HPP_
