#ifndef IPRM_CLI_GRID_HPP_
#define IPRM_CLI_GRID_HPP_

#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "iprm/model.hpp"

namespace iprm::cli {

class GridError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One ablation cell: the axis assignments and the resulting model config.
struct GridCell {
  std::vector<std::pair<std::string, std::string>> settings;
  ModelConfig model;

  std::string label() const {
    std::string s;
    for (const auto& [k, v] : settings) s += (s.empty() ? "" : " ") + k + "=" + v;
    return s;
  }
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline std::size_t grid_count(const std::string& axis, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (v.empty() || pos != v.size() || v.front() == '-') {
    throw GridError("axis '" + axis + "': '" + v + "' is not a non-negative integer");
  }
  return static_cast<std::size_t>(n);
}

inline void apply_axis(ModelConfig& m, const std::string& axis, const std::string& v) {
  if (axis == "nop") {
    m.iprm.n_op = grid_count(axis, v);
  } else if (axis == "t") {
    m.iprm.t_steps = grid_count(axis, v);
  } else if (axis == "r") {
    m.iprm.r = grid_count(axis, v);
  } else if (axis == "w") {
    m.iprm.w = grid_count(axis, v);
  } else if (axis == "dim") {
    m.dim = grid_count(axis, v);
  } else if (axis == "opc") {
    if (v != "on" && v != "off") throw GridError("axis 'opc': expected on or off, got '" + v + "'");
    m.iprm.composition = v == "on";
  } else if (axis == "model") {
    try {
      m.kind = model_kind_from_name(v);
    } catch (const std::exception& e) {
      throw GridError("axis 'model': " + std::string(e.what()));
    }
  } else {
    throw GridError("unknown grid axis '" + axis + "' (expected nop, t, opc, r, w, dim or model)");
  }
}

}  // namespace detail

/// Expands "nop=1,3;t=1,9;opc=on,off" into the cartesian product over `base`.
/// Cells are ordered with the last axis varying fastest.
inline std::vector<GridCell> parse_grid(const std::string& spec, const ModelConfig& base) {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& part : detail::split(spec, ';')) {
    if (part.empty()) throw GridError("empty axis in grid '" + spec + "'");
    const auto eq = part.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw GridError("axis '" + part + "' must look like name=v1,v2");
    }
    const std::string name = part.substr(0, eq);
    for (const auto& [seen, _] : axes) {
      if (seen == name) throw GridError("axis '" + name + "' given twice");
    }
    auto values = detail::split(part.substr(eq + 1), ',');
    if (values.empty()) throw GridError("axis '" + name + "' has no values");
    for (const auto& v : values) {
      if (v.empty()) throw GridError("axis '" + name + "' has an empty value");
      ModelConfig probe = base;
      detail::apply_axis(probe, name, v);
    }
    axes.emplace_back(name, std::move(values));
  }
  if (axes.empty()) throw GridError("grid is empty");

  std::vector<GridCell> cells{GridCell{{}, base}};
  for (const auto& [name, values] : axes) {
    std::vector<GridCell> next;
    for (const auto& c : cells) {
      for (const auto& v : values) {
        GridCell n = c;
        n.settings.emplace_back(name, v);
        detail::apply_axis(n.model, name, v);
        next.push_back(std::move(n));
      }
    }
    cells = std::move(next);
  }
  for (const auto& c : cells) {
    try {
      c.model.core().validate();
    } catch (const std::exception& e) {
      throw GridError("cell '" + c.label() + "' is invalid: " + e.what());
    }
  }
  return cells;
}

}  // namespace iprm::cli

#endif  // IPRM_CLI_GRID_HPP_
