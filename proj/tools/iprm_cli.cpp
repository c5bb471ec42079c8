// iprm: dataset generation, training, evaluation, ablation grids and traces.

#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "iprm/cli/grid.hpp"
#include "iprm/cli/trace.hpp"
#include "iprm/config_file.hpp"
#include "iprm/harness/checkpoint.hpp"
#include "iprm/harness/train.hpp"
#include "iprm/synth/dataset_io.hpp"

namespace fs = std::filesystem;
using namespace iprm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

/// Bad flag values that CLI11 cannot check by itself.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Missing or unreadable inputs.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<synth::QASample> load_split(const std::string& path) {
  if (!fs::exists(path)) throw DataError("dataset '" + path + "' does not exist");
  return synth::read_dataset(path);
}

/// --data may be a directory with train/val files or a single file.
std::string split_path(const std::string& data, const std::string& split) {
  if (fs::is_directory(data)) return (fs::path(data) / (split + ".jsonl")).string();
  if (split == "train") return data;
  throw DataError("'" + data + "' is not a dataset directory");
}

std::vector<synth::Family> parse_families(const std::string& list) {
  std::vector<synth::Family> out;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    try {
      out.push_back(synth::family_from_name(name));
    } catch (const std::exception&) {
      throw UsageError("unknown question family '" + name + "' (expected chain, parallel, logical or counting)");
    }
  }
  if (out.empty()) throw UsageError("--families is empty");
  return out;
}

void print_histograms(const std::string& split, const std::vector<synth::QASample>& data) {
  std::map<std::string, std::size_t> fam;
  std::map<std::size_t, std::size_t> len;
  for (const auto& s : data) {
    ++fam[std::string(synth::family_name(s.family))];
    ++len[s.program.length()];
  }
  std::cout << split << ": " << data.size() << " samples\n  family:";
  for (const auto& [k, v] : fam) std::cout << " " << k << "=" << v;
  std::cout << "\n  length:";
  for (const auto& [k, v] : len) std::cout << " " << k << "=" << v;
  std::cout << "\n";
}

// gen-data ---------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::size_t n_train = 20000, n_val = 2000, n_test = 2000;
  std::uint64_t seed = 1;
  std::string families = "chain,parallel,logical,counting";
};

int cmd_gen_data(const GenArgs& a) {
  const auto fams = parse_families(a.families);
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw DataError("cannot create '" + a.out + "': " + ec.message());
  const std::pair<synth::Split, std::size_t> plan[] = {
      {synth::Split::kTrain, a.n_train}, {synth::Split::kVal, a.n_val}, {synth::Split::kTest, a.n_test}};
  for (const auto& [split, n] : plan) {
    const auto data = synth::generate_split(a.seed, split, n, fams);
    const std::string name(synth::split_name(split));
    synth::write_dataset(data, (fs::path(a.out) / (name + ".jsonl")).string());
    print_histograms(name, data);
  }
  return kExitOk;
}

// train -------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out_ckpt;
  std::string model;
  std::string resume;
  std::string metrics;
  std::size_t max_epochs = 0;
};

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return {};
  if (!fs::exists(path)) throw DataError("config '" + path + "' does not exist");
  return parse_config_file(path);
}

int cmd_train(const TrainArgs& a) {
  const auto train_set = load_split(split_path(a.data, "train"));
  std::vector<synth::QASample> val_set;
  if (fs::is_directory(a.data) && fs::exists(split_path(a.data, "val"))) val_set = load_split(split_path(a.data, "val"));
  if (train_set.empty()) throw DataError("training set '" + split_path(a.data, "train") + "' is empty");

  std::optional<harness::Checkpoint> resume;
  RunConfig rc;
  if (!a.resume.empty()) {
    resume = harness::load_checkpoint(a.resume);
    rc = harness::config_of(*resume);
  } else {
    rc = load_run_config(a.config);
    if (!a.model.empty()) rc.model.kind = model_kind_from_name(a.model);
  }
  if (a.max_epochs > 0) rc.train.max_epochs = a.max_epochs;

  Model<float> model(rc.model);
  harness::TrainSession<float> session(model, rc.train);
  if (resume) harness::restore(session, *resume);

  const std::string metrics = a.metrics.empty() ? a.out_ckpt + ".metrics.jsonl" : a.metrics;
  std::ofstream log(metrics, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write metrics to '" + metrics + "'");

  std::cout << "model " << model_kind_name(rc.model.kind) << ", " << model.registry().scalar_count()
            << " parameters, " << train_set.size() << " train / " << val_set.size() << " val samples\n";
  session.run(train_set, val_set, [&](const harness::EpochRecord& r, bool best) {
    log << harness::to_json(r).dump() << "\n" << std::flush;
    std::cout << "epoch " << r.epoch << "  loss " << std::fixed << std::setprecision(4) << r.train_loss
              << "  train " << r.train_accuracy << "  val " << r.val_accuracy << "  lr " << std::defaultfloat
              << r.lr << (best ? "  *" : "") << "\n";
    const auto c = harness::capture(session, rc);
    if (best) harness::save_checkpoint(c, a.out_ckpt);
    harness::save_checkpoint(c, a.out_ckpt + ".last");
  });
  if (!fs::exists(a.out_ckpt)) harness::save_checkpoint(harness::capture(session, rc), a.out_ckpt);
  return kExitOk;
}

// eval --------------------------------------------------------------------

std::unique_ptr<Model<float>> load_model(const std::string& path) {
  if (!fs::exists(path)) throw DataError("checkpoint '" + path + "' does not exist");
  const auto c = harness::load_checkpoint(path);
  auto model = std::make_unique<Model<float>>(harness::config_of(c).model);
  harness::restore(*model, c);
  return model;
}

void print_report(const harness::EvalResult& r, bool json_lines) {
  if (json_lines) {
    std::cout << harness::to_json(r).dump() << "\n";
    return;
  }
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "overall   " << r.accuracy() << "  (" << r.overall.correct << "/" << r.overall.total << ")\n";
  for (const auto& [k, b] : r.per_family) {
    std::cout << "family    " << std::left << std::setw(10) << k << std::right << b.accuracy() << "  ("
              << b.correct << "/" << b.total << ")\n";
  }
  for (const auto& [k, b] : r.per_length) {
    std::cout << "length    " << std::left << std::setw(10) << k << std::right << b.accuracy() << "  ("
              << b.correct << "/" << b.total << ")\n";
  }
}

int cmd_eval(const std::string& ckpt, const std::string& data, bool json_lines) {
  const auto model = load_model(ckpt);
  const auto samples = load_split(data);
  print_report(harness::evaluate(*model, samples), json_lines);
  return kExitOk;
}

// ablate ------------------------------------------------------------------

struct AblateArgs {
  std::string data;
  std::string grid;
  std::string config;
  std::string out;
  std::size_t jobs = 0;
};

nlohmann::json run_cell(const cli::GridCell& cell, const RunConfig& base,
                        const std::vector<synth::QASample>& train_set,
                        const std::vector<synth::QASample>& val_set) {
  Model<float> model(cell.model);
  const auto history = harness::train(model, train_set, val_set, base.train);
  double best = 0;
  for (const auto& r : history) best = std::max(best, r.val_accuracy);
  nlohmann::json row;
  for (const auto& [k, v] : cell.settings) row[k] = v;
  row["params"] = model.registry().scalar_count();
  row["epochs"] = history.size();
  row["val_accuracy"] = best;
  return row;
}

/// Runs every cell, at most `jobs` at a time in forked children.
std::vector<nlohmann::json> run_cells(const std::vector<cli::GridCell>& cells, const RunConfig& base,
                                      const std::vector<synth::QASample>& train_set,
                                      const std::vector<synth::QASample>& val_set, std::size_t jobs) {
  std::vector<nlohmann::json> rows(cells.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      rows[i] = run_cell(cells[i], base, train_set, val_set);
      std::cerr << "cell " << i + 1 << "/" << cells.size() << " done: " << cells[i].label() << "\n";
    }
    return rows;
  }
  struct Child {
    pid_t pid;
    int fd;
    std::size_t cell;
  };
  std::vector<Child> running;
  auto reap = [&](Child c) {
    std::string text;
    char buf[4096];
    ssize_t n;
    while ((n = read(c.fd, buf, sizeof(buf))) > 0 || (n < 0 && errno == EINTR)) {
      if (n > 0) text.append(buf, static_cast<std::size_t>(n));
    }
    close(c.fd);
    int status = 0;
    waitpid(c.pid, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : kExitNumerical;
      throw harness::TrainingAborted("ablation cell '" + cells[c.cell].label() + "' failed with status " +
                                     std::to_string(code));
    }
    rows[c.cell] = nlohmann::json::parse(text);
    std::cerr << "cell " << c.cell + 1 << "/" << cells.size() << " done: " << cells[c.cell].label() << "\n";
  };
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (running.size() >= jobs) {
      reap(running.front());
      running.erase(running.begin());
    }
    int fds[2];
    if (pipe(fds) != 0) throw std::runtime_error("pipe failed");
    std::cout.flush();
    std::cerr.flush();
    const pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      close(fds[0]);
      int code = 0;
      try {
        const std::string out = run_cell(cells[i], base, train_set, val_set).dump();
        for (std::size_t off = 0; off < out.size();) {
          const ssize_t n = write(fds[1], out.data() + off, out.size() - off);
          if (n <= 0) break;
          off += static_cast<std::size_t>(n);
        }
      } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        code = kExitNumerical;
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        code = kExitData;
      }
      close(fds[1]);
      _exit(code);
    }
    close(fds[1]);
    running.push_back({pid, fds[0], i});
  }
  for (const auto& c : running) reap(c);
  return rows;
}

int cmd_ablate(const AblateArgs& a) {
  const RunConfig base = load_run_config(a.config);
  std::vector<cli::GridCell> cells;
  try {
    cells = cli::parse_grid(a.grid, base.model);
  } catch (const cli::GridError& e) {
    throw UsageError(std::string("--grid: ") + e.what());
  }
  const auto train_set = load_split(split_path(a.data, "train"));
  const auto val_set = load_split(split_path(a.data, "val"));

  std::size_t jobs = a.jobs;
  if (jobs == 0) {
    const char* env = std::getenv("IPRM_NUM_THREADS");
    jobs = env ? static_cast<std::size_t>(std::max(1L, std::strtol(env, nullptr, 10))) : 1;
  }
  const auto rows = run_cells(cells, base, train_set, val_set, jobs);

  std::vector<std::string> axes;
  for (const auto& [k, _] : cells.front().settings) axes.push_back(k);
  for (const auto& k : axes) std::cout << std::left << std::setw(8) << k;
  std::cout << std::setw(10) << "params" << "val_acc\n";
  for (const auto& row : rows) {
    for (const auto& k : axes) std::cout << std::setw(8) << row[k].get<std::string>();
    std::cout << std::setw(10) << row["params"].get<std::size_t>() << std::fixed << std::setprecision(4)
              << row["val_accuracy"].get<double>() << "\n";
  }
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw DataError("cannot write '" + a.out + "'");
    for (const auto& row : rows) os << row.dump() << "\n";
  }
  return kExitOk;
}

// trace -------------------------------------------------------------------

int cmd_trace(const std::string& ckpt, const std::string& data, std::size_t index, const std::string& out_dir) {
  const auto model = load_model(ckpt);
  const auto samples = load_split(data);
  if (index >= samples.size()) {
    throw UsageError("--index " + std::to_string(index) + " out of range (dataset has " +
                     std::to_string(samples.size()) + " samples)");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create '" + out_dir + "': " + ec.message());
  const auto tf = cli::trace_sample(*model, samples[index]);
  for (const auto& f : cli::write_trace_bundle(tf, out_dir)) std::cout << (fs::path(out_dir) / f).string() << "\n";
  std::cout << "predicted " << tf.predicted << ", gold " << tf.gold << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative and parallel reasoning: data, training, evaluation and traces"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate train/val/test splits of the synthetic task");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--n-train", gen.n_train, "Training samples");
  g->add_option("--n-val", gen.n_val, "Validation samples");
  g->add_option("--n-test", gen.n_test, "Test samples");
  g->add_option("--seed", gen.seed, "Master seed");
  g->add_option("--families", gen.families, "Comma-separated question families");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model; writes the best-validation checkpoint");
  t->add_option("--data", tr.data, "Dataset directory (train.jsonl, val.jsonl) or training file")->required();
  t->add_option("--config", tr.config, "Run config file");
  t->add_option("--out-ckpt", tr.out_ckpt, "Best checkpoint path; the latest goes to <path>.last")->required();
  t->add_option("--model", tr.model, "iprm, cross or concat (overrides the config)")
      ->check(CLI::IsMember({"iprm", "cross", "concat"}));
  t->add_option("--resume", tr.resume, "Continue from a checkpoint (usually <out-ckpt>.last)");
  t->add_option("--metrics", tr.metrics, "Per-epoch JSON lines (default <out-ckpt>.metrics.jsonl)");
  t->add_option("--max-epochs", tr.max_epochs, "Override the configured epoch limit (also when resuming)");

  std::string ev_ckpt, ev_data;
  bool ev_json = false;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  e->add_option("--data", ev_data, "Dataset file")->required();
  e->add_flag("--json-lines", ev_json, "Print one JSON record instead of a table");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train one model per grid cell and tabulate validation accuracy");
  a->add_option("--data", ab.data, "Dataset directory")->required();
  a->add_option("--grid", ab.grid, "Axes, e.g. \"nop=1,6;t=1,9;opc=on,off\"")->required();
  a->add_option("--config", ab.config, "Base run config");
  a->add_option("--out", ab.out, "Write per-cell JSON lines here");
  a->add_option("--jobs", ab.jobs, "Cells trained concurrently (default IPRM_NUM_THREADS or 1)");

  std::string tc_ckpt, tc_data, tc_out;
  std::size_t tc_index = 0;
  auto* tcmd = app.add_subcommand("trace", "Export attention traces and heatmaps for one sample");
  tcmd->add_option("--ckpt", tc_ckpt, "Checkpoint (iprm model)")->required();
  tcmd->add_option("--data", tc_data, "Dataset file")->required();
  tcmd->add_option("--index", tc_index, "Sample index")->required();
  tcmd->add_option("--out-dir", tc_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev_ckpt, ev_data, ev_json);
    if (*a) return cmd_ablate(ab);
    if (*tcmd) return cmd_trace(tc_ckpt, tc_data, tc_index, tc_out);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
