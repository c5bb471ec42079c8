#ifndef IPRM_CLI_TRACE_HPP_
#define IPRM_CLI_TRACE_HPP_

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iprm/model.hpp"
#include "iprm/synth/generator.hpp"

namespace iprm::cli {

inline constexpr int kTraceVersion = 1;

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TraceObject {
  std::string label;  // "large red metal cube"
  double x = 0, y = 0;

  bool operator==(const TraceObject&) const = default;
};

/// One evaluated sample's attention maps, ready for display.
///   lang_atts[t][op][token], vis_atts[t][op][object], pool_att[op].
struct TraceFile {
  int version = kTraceVersion;
  std::vector<std::string> question;
  std::vector<TraceObject> objects;
  std::vector<std::vector<std::vector<double>>> lang_atts;
  std::vector<std::vector<std::vector<double>>> vis_atts;
  std::vector<double> pool_att;
  std::string predicted;
  std::string gold;

  std::size_t t_steps() const { return lang_atts.size(); }
  std::size_t n_op() const { return pool_att.size(); }

  bool operator==(const TraceFile&) const = default;
};

/// Throws TraceError unless every dimension agrees and each row sums to 1.
inline void validate(const TraceFile& tf, double tol = 1e-5) {
  if (tf.version != kTraceVersion) {
    throw TraceError("unsupported trace version " + std::to_string(tf.version));
  }
  if (tf.vis_atts.size() != tf.lang_atts.size()) throw TraceError("step count differs across attention kinds");
  auto check_row = [&](const std::vector<double>& row, std::size_t len, const std::string& where) {
    if (row.size() != len) {
      throw TraceError(where + ": row has " + std::to_string(row.size()) + " entries, expected " +
                       std::to_string(len));
    }
    double s = 0;
    for (double v : row) s += v;
    if (std::abs(s - 1.0) > tol) throw TraceError(where + ": row sums to " + std::to_string(s));
  };
  for (std::size_t t = 0; t < tf.t_steps(); ++t) {
    if (tf.lang_atts[t].size() != tf.n_op() || tf.vis_atts[t].size() != tf.n_op()) {
      throw TraceError("step " + std::to_string(t) + ": op count differs from pooling weights");
    }
    for (std::size_t o = 0; o < tf.n_op(); ++o) {
      const std::string where = "step " + std::to_string(t) + " op " + std::to_string(o);
      check_row(tf.lang_atts[t][o], tf.question.size(), where + " language");
      check_row(tf.vis_atts[t][o], tf.objects.size(), where + " visual");
    }
  }
  check_row(tf.pool_att, tf.n_op(), "pooling");
}

inline std::string object_label(const synth::SceneObject& o) {
  std::string s;
  for (int a : {synth::kSize, synth::kColor, synth::kMaterial, synth::kShape}) {
    if (!s.empty()) s += " ";
    s += synth::attribute_value_name(a, o.attrs[a]);
  }
  return s;
}

/// Runs the model on one sample and collects its trace.
template <class Real>
TraceFile trace_sample(const Model<Real>& model, const synth::QASample& sample) {
  if (!model.iprm()) throw TraceError("traces need an iprm model");
  NoGradGuard guard;
  const Batch batch = make_batch({sample}, {0});
  const auto out = model.forward(batch);
  const ReasoningTrace rt = out.iprm->trace(0, sample.question.size(), sample.scene.objects.size());
  TraceFile tf;
  tf.question = sample.question;
  for (const auto& o : sample.scene.objects) tf.objects.push_back({object_label(o), o.x, o.y});
  tf.lang_atts = rt.lang_atts;
  tf.vis_atts = rt.vis_atts;
  tf.pool_att = rt.pool_att;
  tf.predicted = synth::answer_vocabulary().at(static_cast<std::size_t>(Model<Real>::predictions(out.logits)[0]));
  tf.gold = sample.answer;
  return tf;
}

inline nlohmann::json to_json(const TraceFile& tf) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : tf.objects) objs.push_back({{"label", o.label}, {"x", o.x}, {"y", o.y}});
  return {{"version", tf.version},   {"question", tf.question}, {"objects", objs},
          {"lang_atts", tf.lang_atts}, {"vis_atts", tf.vis_atts}, {"pool_att", tf.pool_att},
          {"predicted", tf.predicted}, {"gold", tf.gold}};
}

inline TraceFile trace_from_json(const nlohmann::json& j) {
  try {
    TraceFile tf;
    tf.version = j.at("version").get<int>();
    tf.question = j.at("question").get<std::vector<std::string>>();
    for (const auto& o : j.at("objects")) {
      tf.objects.push_back({o.at("label").get<std::string>(), o.at("x").get<double>(), o.at("y").get<double>()});
    }
    tf.lang_atts = j.at("lang_atts").get<decltype(tf.lang_atts)>();
    tf.vis_atts = j.at("vis_atts").get<decltype(tf.vis_atts)>();
    tf.pool_att = j.at("pool_att").get<std::vector<double>>();
    tf.predicted = j.at("predicted").get<std::string>();
    tf.gold = j.at("gold").get<std::string>();
    validate(tf);
    return tf;
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(std::string("malformed trace: ") + e.what());
  }
}

inline void save_trace(const TraceFile& tf, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw TraceError("cannot write '" + path + "'");
  os << to_json(tf).dump(1) << "\n";
}

inline TraceFile load_trace(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw TraceError("cannot open trace '" + path + "'");
  try {
    return trace_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw TraceError(std::string("malformed trace: ") + e.what());
  }
}

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// White to dark blue by attention mass.
inline std::string shade(double w) {
  w = std::clamp(w, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(255 * (1 - w) + 8 * w));
  const int g = static_cast<int>(std::lround(255 * (1 - w) + 48 * w));
  const int b = static_cast<int>(std::lround(255 * (1 - w) + 107 * w));
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace detail

/// Step x token grid for one parallel operation.
inline std::string render_language_svg(const TraceFile& tf, std::size_t op) {
  using namespace detail;
  const double cell = 28, left = 70, top = 90;
  const double w = left + cell * static_cast<double>(tf.question.size()) + 20;
  const double h = top + cell * static_cast<double>(tf.t_steps()) + 20;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\"" << fmt(h)
     << "\" font-family=\"monospace\" font-size=\"11\">\n";
  os << "<text x=\"4\" y=\"14\">language attention, op " << op << "</text>\n";
  for (std::size_t k = 0; k < tf.question.size(); ++k) {
    const double x = left + cell * static_cast<double>(k) + cell / 2;
    os << "<text transform=\"translate(" << fmt(x) << "," << fmt(top - 6) << ") rotate(-60)\">"
       << escape(tf.question[k]) << "</text>\n";
  }
  for (std::size_t t = 0; t < tf.t_steps(); ++t) {
    const double y = top + cell * static_cast<double>(t);
    os << "<text x=\"4\" y=\"" << fmt(y + cell / 2 + 4) << "\">step " << t << "</text>\n";
    for (std::size_t k = 0; k < tf.question.size(); ++k) {
      const double a = tf.lang_atts[t][op][k];
      os << "<rect x=\"" << fmt(left + cell * static_cast<double>(k)) << "\" y=\"" << fmt(y) << "\" width=\""
         << fmt(cell) << "\" height=\"" << fmt(cell) << "\" fill=\"" << shade(a)
         << "\" stroke=\"#999\"><title>" << fmt(a) << "</title></rect>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

/// Object positions with fill intensity equal to attention mass, one panel
/// per parallel operation for step `t`.
inline std::string render_visual_svg(const TraceFile& tf, std::size_t t) {
  using namespace detail;
  const double panel = 160, gap = 12, top = 24;
  const double w = gap + (panel + gap) * static_cast<double>(tf.n_op());
  const double h = top + panel + 2 * gap;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\"" << fmt(h)
     << "\" font-family=\"monospace\" font-size=\"11\">\n";
  os << "<text x=\"4\" y=\"14\">visual attention, step " << t << "</text>\n";
  for (std::size_t o = 0; o < tf.n_op(); ++o) {
    const double px = gap + (panel + gap) * static_cast<double>(o);
    os << "<rect x=\"" << fmt(px) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(panel) << "\" height=\""
       << fmt(panel) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    os << "<text x=\"" << fmt(px + 4) << "\" y=\"" << fmt(top + panel + 14) << "\">op " << o << "</text>\n";
    for (std::size_t k = 0; k < tf.objects.size(); ++k) {
      const auto& ob = tf.objects[k];
      const double a = tf.vis_atts[t][o][k];
      os << "<circle cx=\"" << fmt(px + ob.x * panel) << "\" cy=\"" << fmt(top + ob.y * panel)
         << "\" r=\"8\" fill=\"" << shade(a) << "\" stroke=\"#222\"><title>" << escape(ob.label) << " "
         << fmt(a) << "</title></circle>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

/// Creates `dir` if needed and writes trace.json plus lang_op<k>.svg and vis_step<t>.svg into `dir`.
/// Returns the written file names.
inline std::vector<std::string> write_trace_bundle(const TraceFile& tf, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw TraceError("cannot create '" + dir + "': " + ec.message());
  std::vector<std::string> files;
  auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream os(dir + "/" + name);
    if (!os) throw TraceError("cannot write '" + dir + "/" + name + "'");
    os << text;
    files.push_back(name);
  };
  save_trace(tf, dir + "/trace.json");
  files.push_back("trace.json");
  for (std::size_t o = 0; o < tf.n_op(); ++o) put("lang_op" + std::to_string(o) + ".svg", render_language_svg(tf, o));
  for (std::size_t t = 0; t < tf.t_steps(); ++t) put("vis_step" + std::to_string(t) + ".svg", render_visual_svg(tf, t));
  return files;
}

}  // namespace iprm::cli

#endif  // IPRM_CLI_TRACE_HPP_
