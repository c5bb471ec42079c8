#ifndef IPRM_CONFIG_FILE_HPP_
#define IPRM_CONFIG_FILE_HPP_

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "iprm/harness/train.hpp"
#include "iprm/model.hpp"

namespace iprm {

/// Parse failure with the 1-based line and offending field.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::size_t line, const std::string& field, const std::string& what)
      : std::invalid_argument("config line " + std::to_string(line) +
                              (field.empty() ? "" : " (" + field + ")") + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct RunConfig {
  ModelConfig model;
  harness::TrainConfig train;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("'" + v + "' is not a valid number");
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw std::invalid_argument("'" + v + "' is not a boolean (true/false/on/off)");
}

}  // namespace detail

/// Applies one `key = value` entry of `section` to cfg.
inline void apply_setting(RunConfig& cfg, const std::string& section, const std::string& key,
                          const std::string& value) {
  using detail::parse_bool;
  using detail::parse_number;
  auto& m = cfg.model;
  auto& t = cfg.train;
  if (section == "model") {
    if (key == "kind") m.kind = model_kind_from_name(value);
    else if (key == "dim") m.dim = parse_number<std::size_t>(value);
    else if (key == "n_op") m.iprm.n_op = parse_number<std::size_t>(value);
    else if (key == "t_steps") m.iprm.t_steps = parse_number<std::size_t>(value);
    else if (key == "r") m.iprm.r = parse_number<std::size_t>(value);
    else if (key == "w") m.iprm.w = parse_number<std::size_t>(value);
    else if (key == "composition") m.iprm.composition = parse_bool(value);
    else if (key == "result_composition") {
      if (value == "projected") m.iprm.result_composition = ResultComposition::kProjectedValues;
      else if (value == "raw") m.iprm.result_composition = ResultComposition::kRawStates;
      else throw std::invalid_argument("expected projected or raw");
    } else if (key == "phi") {
      if (value == "tanh") m.iprm.phi = Nonlinearity::kTanh;
      else if (value == "relu") m.iprm.phi = Nonlinearity::kRelu;
      else throw std::invalid_argument("expected tanh or relu");
    } else if (key == "baseline_layers") m.baseline_layers = parse_number<std::size_t>(value);
    else if (key == "baseline_heads") m.baseline_heads = parse_number<std::size_t>(value);
    else if (key == "init_seed") m.init_seed = parse_number<std::uint64_t>(value);
    else throw std::invalid_argument("unknown key");
  } else if (section == "train") {
    if (key == "lr") t.lr = parse_number<double>(value);
    else if (key == "clip") t.clip = parse_number<double>(value);
    else if (key == "plateau_factor") t.plateau_factor = parse_number<double>(value);
    else if (key == "plateau_threshold") t.plateau_threshold = parse_number<double>(value);
    else if (key == "patience") t.patience = parse_number<std::size_t>(value);
    else if (key == "batch_size") t.batch_size = parse_number<std::size_t>(value);
    else if (key == "max_epochs") t.max_epochs = parse_number<std::size_t>(value);
    else if (key == "seed") t.seed = parse_number<std::uint64_t>(value);
    else if (key == "shuffle") t.shuffle = parse_bool(value);
    else if (key == "min_lr") t.min_lr = parse_number<double>(value);
    else throw std::invalid_argument("unknown key");
  } else {
    throw std::invalid_argument("unknown section [" + section + "]");
  }
}

/// Flat `key = value` lines grouped under [model] and [train]; `#` starts a
/// comment. Keys not given keep their defaults.
inline RunConfig parse_config(std::istream& is, RunConfig cfg = {}) {
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(lineno, "", "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train") {
        throw ConfigError(lineno, "", "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(lineno, "", "expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(lineno, key, "setting outside a section");
    try {
      apply_setting(cfg, section, key, value);
    } catch (const std::exception& e) {
      throw ConfigError(lineno, section + "." + key, e.what());
    }
  }
  try {
    cfg.model.core().validate();
    if (cfg.model.kind != ModelKind::kIprm) cfg.model.baseline().validate();
    cfg.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(lineno, "", std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path + "'");
  return parse_config(is);
}

inline std::string to_text(const RunConfig& cfg) {
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  std::ostringstream os;
  os.precision(17);
  os << "[model]\n"
     << "kind = " << model_kind_name(m.kind) << "\n"
     << "dim = " << m.dim << "\n"
     << "n_op = " << m.iprm.n_op << "\n"
     << "t_steps = " << m.iprm.t_steps << "\n"
     << "r = " << m.iprm.r << "\n"
     << "w = " << m.iprm.w << "\n"
     << "composition = " << (m.iprm.composition ? "true" : "false") << "\n"
     << "result_composition = "
     << (m.iprm.result_composition == ResultComposition::kRawStates ? "raw" : "projected") << "\n"
     << "phi = " << (m.iprm.phi == Nonlinearity::kRelu ? "relu" : "tanh") << "\n"
     << "baseline_layers = " << m.baseline_layers << "\n"
     << "baseline_heads = " << m.baseline_heads << "\n"
     << "init_seed = " << m.init_seed << "\n"
     << "\n[train]\n"
     << "lr = " << t.lr << "\n"
     << "clip = " << t.clip << "\n"
     << "plateau_factor = " << t.plateau_factor << "\n"
     << "plateau_threshold = " << t.plateau_threshold << "\n"
     << "patience = " << t.patience << "\n"
     << "batch_size = " << t.batch_size << "\n"
     << "max_epochs = " << t.max_epochs << "\n"
     << "seed = " << t.seed << "\n"
     << "shuffle = " << (t.shuffle ? "true" : "false") << "\n"
     << "min_lr = " << t.min_lr << "\n";
  return os.str();
}

}  // namespace iprm

#endif  // IPRM_CONFIG_FILE_HPP_
