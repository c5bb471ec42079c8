#ifndef IPRM_SYNTH_DATASET_IO_HPP_
#define IPRM_SYNTH_DATASET_IO_HPP_

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iprm/synth/generator.hpp"

namespace iprm::synth {

/// Malformed dataset content; the message carries the 1-based line number.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline nlohmann::json to_json(const QASample& s) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : s.scene.objects) {
    objects.push_back({{"shape", kShapes[o.shape()]},
                       {"color", kColors[o.color()]},
                       {"size", kSizes[o.size()]},
                       {"material", kMaterials[o.material()]},
                       {"x", o.x},
                       {"y", o.y}});
  }
  nlohmann::json program = nlohmann::json::array();
  for (const auto& n : s.program.nodes) {
    nlohmann::json j{{"fn", fn_name(n.fn)}, {"inputs", n.inputs}};
    if (n.attr >= 0) j["attr"] = kAttributeNames[n.attr];
    if (n.value >= 0) {
      if (n.fn == Fn::kRelate) {
        j["value"] = kRelationNames[n.value];
      } else if (n.fn == Fn::kCompareCount) {
        j["value"] = kComparisonNames[n.value];
      } else {
        j["value"] = attribute_value_name(n.attr, n.value);
      }
    }
    program.push_back(std::move(j));
  }
  return {{"split", split_name(s.split)},
          {"seed", s.scene.seed},
          {"family", family_name(s.family)},
          {"objects", std::move(objects)},
          {"question", s.question},
          {"program", std::move(program)},
          {"answer", s.answer}};
}

namespace detail {

template <std::size_t N>
int index_in(const std::array<std::string_view, N>& names, const std::string& v,
             const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == v) return static_cast<int>(i);
  }
  throw std::out_of_range(std::string("unknown ") + what + " '" + v + "'");
}

}  // namespace detail

inline QASample from_json(const nlohmann::json& j) {
  QASample s;
  s.split = split_from_name(j.at("split").get<std::string>());
  s.scene.seed = j.at("seed").get<std::uint64_t>();
  s.family = family_from_name(j.at("family").get<std::string>());
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    for (int a = 0; a < kNumAttributes; ++a) {
      obj.attrs[a] = attribute_value_from_name(
          a, o.at(std::string(kAttributeNames[a])).get<std::string>());
    }
    obj.x = o.at("x").get<double>();
    obj.y = o.at("y").get<double>();
    s.scene.objects.push_back(obj);
  }
  s.question = j.at("question").get<std::vector<std::string>>();
  for (const auto& n : j.at("program")) {
    ProgramNode node;
    node.fn = fn_from_name(n.at("fn").get<std::string>());
    node.inputs = n.at("inputs").get<std::vector<int>>();
    if (n.contains("attr")) node.attr = attribute_from_name(n.at("attr").get<std::string>());
    if (n.contains("value")) {
      const auto v = n.at("value").get<std::string>();
      if (node.fn == Fn::kRelate) {
        node.value = detail::index_in(kRelationNames, v, "relation");
      } else if (node.fn == Fn::kCompareCount) {
        node.value = detail::index_in(kComparisonNames, v, "comparison");
      } else {
        if (node.attr < 0) throw std::out_of_range("filter value without attribute");
        node.value = attribute_value_from_name(node.attr, v);
      }
    }
    s.program.nodes.push_back(std::move(node));
  }
  s.answer = j.at("answer").get<std::string>();
  answer_id(s.answer);
  if (split_of_seed(s.scene.seed) != s.split) {
    throw std::invalid_argument("seed does not belong to split " + std::string(split_name(s.split)));
  }
  return s;
}

inline void write_dataset(const std::vector<QASample>& samples, std::ostream& os) {
  for (const auto& s : samples) os << to_json(s).dump() << '\n';
}

inline void write_dataset(const std::vector<QASample>& samples, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_dataset(samples, os);
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

inline std::vector<QASample> read_dataset(std::istream& is) {
  std::vector<QASample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw DatasetError(lineno, e.what());
    }
  }
  return out;
}

inline std::vector<QASample> read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset '" + path + "'");
  return read_dataset(is);
}

}  // namespace iprm::synth

#endif  // IPRM_SYNTH_DATASET_IO_HPP_
