#ifndef IPRM_HARNESS_CHECKPOINT_HPP_
#define IPRM_HARNESS_CHECKPOINT_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iprm/config_file.hpp"
#include "iprm/harness/train.hpp"

namespace iprm::harness {

inline constexpr char kCheckpointMagic[8] = {'I', 'P', 'R', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Decoded checkpoint contents.
/// Layout (all integers little-endian):
///   magic[8] "IPRMCKPT", u32 version,
///   str config_text, str history_json, str rng_state, f64 lr, u64 epoch,
///   u32 n_params, n_params x { str name, u32 rank, u64 dims[rank], f32 values[] },
///   u64 adam_step, u32 n_moments, n_moments x { f32 m[], f32 v[] } in parameter order.
/// str = u64 byte length followed by bytes.
struct Checkpoint {
  std::string config_text;
  std::vector<EpochRecord> history;
  std::string rng_state;
  double lr = 0;
  std::uint64_t epoch = 0;
  std::vector<NamedArray> params;
  std::uint64_t adam_step = 0;
  std::vector<std::vector<float>> adam_m, adam_v;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_str(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void put_floats(std::ostream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("truncated checkpoint");
  return v;
}

inline std::string get_str(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ull << 32)) throw CheckpointError("corrupt string length in checkpoint");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError("truncated checkpoint");
  return s;
}

inline std::vector<float> get_floats(std::istream& is, std::size_t n) {
  std::vector<float> v(n);
  if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
    throw CheckpointError("truncated checkpoint");
  }
  return v;
}

template <class Real>
std::vector<float> to_f32(std::span<const Real> v) {
  return std::vector<float>(v.begin(), v.end());
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& c, std::ostream& os) {
  using namespace detail;
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put_str(os, c.config_text);
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : c.history) hist.push_back(to_json(r));
  put_str(os, hist.dump());
  put_str(os, c.rng_state);
  put<double>(os, c.lr);
  put<std::uint64_t>(os, c.epoch);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.params.size()));
  for (const auto& p : c.params) {
    put_str(os, p.name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) put<std::uint64_t>(os, d);
    put_floats(os, p.values);
  }
  put<std::uint64_t>(os, c.adam_step);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.adam_m.size()));
  for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
    put_floats(os, c.adam_m[i]);
    put_floats(os, c.adam_v[i]);
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  using namespace detail;
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.config_text = get_str(is);
  try {
    for (const auto& r : nlohmann::json::parse(get_str(is))) c.history.push_back(epoch_record_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt history in checkpoint: ") + e.what());
  }
  c.rng_state = get_str(is);
  c.lr = get<double>(is);
  c.epoch = get<std::uint64_t>(is);
  const auto n = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray a;
    a.name = get_str(is);
    const auto rank = get<std::uint32_t>(is);
    if (rank > 8) throw CheckpointError("corrupt rank for parameter " + a.name);
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(get<std::uint64_t>(is));
    a.values = get_floats(is, numel(a.shape));
    c.params.push_back(std::move(a));
  }
  c.adam_step = get<std::uint64_t>(is);
  const auto moments = get<std::uint32_t>(is);
  if (moments != 0 && moments != n) throw CheckpointError("optimizer moment count does not match parameters");
  for (std::uint32_t i = 0; i < moments; ++i) {
    c.adam_m.push_back(get_floats(is, c.params[i].values.size()));
    c.adam_v.push_back(get_floats(is, c.params[i].values.size()));
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  // Write-then-rename keeps an existing checkpoint intact on failure.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw CheckpointError("cannot open '" + tmp + "' for writing");
    write_checkpoint(c, os);
    if (!os) throw CheckpointError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError("cannot move checkpoint into place at '" + path + "'");
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

/// Captures model parameters only.
template <class Real>
Checkpoint capture(const Model<Real>& model, const RunConfig& cfg) {
  Checkpoint c;
  c.config_text = to_text(cfg);
  c.lr = cfg.train.lr;
  for (const auto& p : model.registry().parameters()) {
    c.params.push_back({p.name, p.value.shape(), detail::to_f32(p.value.data())});
  }
  return c;
}

/// Captures parameters plus the optimizer/data-order state of a session.
template <class Real>
Checkpoint capture(const TrainSession<Real>& s, const RunConfig& cfg) {
  Checkpoint c = capture(*s.model, cfg);
  c.history = s.history;
  c.rng_state = s.rng.state();
  c.lr = s.lr;
  c.epoch = s.epoch;
  c.adam_step = s.adam.state().step;
  for (std::size_t i = 0; i < s.adam.state().m.size(); ++i) {
    c.adam_m.push_back(detail::to_f32<Real>(s.adam.state().m[i]));
    c.adam_v.push_back(detail::to_f32<Real>(s.adam.state().v[i]));
  }
  return c;
}

/// Copies stored parameter values into a model built from the same config.
template <class Real>
void restore(Model<Real>& model, const Checkpoint& c) {
  auto& params = model.registry().parameters();
  if (params.size() != c.params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(c.params.size()) + " parameters, model has " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != c.params[i].name || params[i].value.shape() != c.params[i].shape) {
      throw CheckpointError("parameter " + std::to_string(i) + " mismatch: checkpoint '" + c.params[i].name +
                            "' " + to_string(c.params[i].shape) + " vs model '" + params[i].name + "' " +
                            to_string(params[i].value.shape()));
    }
    auto dst = params[i].value.mutable_data();
    std::copy(c.params[i].values.begin(), c.params[i].values.end(), dst.begin());
  }
}

template <class Real>
void restore(TrainSession<Real>& s, const Checkpoint& c) {
  restore(*s.model, c);
  s.history = c.history;
  if (!c.rng_state.empty()) s.rng.set_state(c.rng_state);
  s.lr = c.lr;
  s.epoch = c.epoch;
  if (!c.adam_m.empty()) {
    typename Adam<Real>::State st;
    st.step = c.adam_step;
    for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
      st.m.emplace_back(c.adam_m[i].begin(), c.adam_m[i].end());
      st.v.emplace_back(c.adam_v[i].begin(), c.adam_v[i].end());
    }
    s.adam.set_state(std::move(st));
  }
}

inline RunConfig config_of(const Checkpoint& c) {
  std::istringstream is(c.config_text);
  return parse_config(is);
}

}  // namespace iprm::harness

#endif  // IPRM_HARNESS_CHECKPOINT_HPP_
