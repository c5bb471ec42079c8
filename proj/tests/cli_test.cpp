#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "iprm/cli/grid.hpp"
#include "iprm/cli/trace.hpp"
#include "iprm/harness/checkpoint.hpp"
#include "iprm/synth/dataset_io.hpp"

namespace fs = std::filesystem;

namespace iprm::cli {
namespace {

struct Run {
  int code;
  std::string out;
};

/// Runs the CLI with `args`, capturing stdout and stderr together.
Run cli(const std::string& args) {
  const std::string cmd = std::string(IPRM_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  std::array<char, 4096> buf;
  while (std::size_t n = fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
  const int status = pclose(p);
  return {WEXITSTATUS(status), out};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("iprm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir / name) << text; }

  /// Small dataset plus a tiny model config.
  void tiny_setup(std::size_t n_train = 500) {
    ASSERT_EQ(cli("gen-data --out " + path("d") + " --n-train " + std::to_string(n_train) +
                  " --n-val 100 --n-test 100 --seed 5")
                  .code,
              0);
    write("tiny.cfg",
          "[model]\ndim = 16\nn_op = 2\nt_steps = 2\nw = 1\n\n[train]\nlr = 1e-3\nmax_epochs = 3\nbatch_size = 32\n");
  }

  fs::path dir;
};

TEST_F(CliTest, GenDataEmptyTrainSplit) {
  const auto r = cli("gen-data --out " + path("d") + " --n-train 0 --n-val 5 --n-test 5");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(path("d/train.jsonl")));
  EXPECT_TRUE(synth::read_dataset(path("d/train.jsonl")).empty());
  EXPECT_EQ(synth::read_dataset(path("d/val.jsonl")).size(), 5u);
}

TEST_F(CliTest, GenDataIsByteIdenticalAcrossRuns) {
  const std::string flags = " --n-train 200 --n-val 20 --n-test 20 --seed 9 --families chain,counting";
  ASSERT_EQ(cli("gen-data --out " + path("a") + flags).code, 0);
  ASSERT_EQ(cli("gen-data --out " + path("b") + flags).code, 0);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST_F(CliTest, GenDataHistogramsMatchRescan) {
  const auto r = cli("gen-data --out " + path("d") + " --n-train 300 --n-val 40 --n-test 40 --seed 2");
  ASSERT_EQ(r.code, 0);
  std::istringstream is(r.out);
  std::string line, split;
  while (std::getline(is, line)) {
    if (line.find(": ") != std::string::npos && line.find("samples") != std::string::npos) {
      split = line.substr(0, line.find(':'));
      continue;
    }
    const bool fam = line.rfind("  family:", 0) == 0;
    const bool len = line.rfind("  length:", 0) == 0;
    if (!fam && !len) continue;
    std::map<std::string, std::size_t> printed, rescanned;
    std::istringstream fields(line.substr(line.find(':') + 1));
    std::string kv;
    while (fields >> kv) printed[kv.substr(0, kv.find('='))] = std::stoul(kv.substr(kv.find('=') + 1));
    for (const auto& s : synth::read_dataset(path("d/" + split + ".jsonl"))) {
      ++rescanned[fam ? std::string(synth::family_name(s.family)) : std::to_string(s.program.length())];
    }
    EXPECT_EQ(printed, rescanned) << split << (fam ? " family" : " length");
  }
}

TEST_F(CliTest, InvalidFamilyIsUsageError) {
  const auto r = cli("gen-data --out " + path("d") + " --families chain,riddles");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("riddles"), std::string::npos);
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("train --data x").code, 1);
}

TEST_F(CliTest, TinyTrainRunIsFastAndResumes) {
  tiny_setup();
  const auto t0 = std::chrono::steady_clock::now();
  auto r = cli("train --data " + path("d") + " --config " + path("tiny.cfg") + " --out-ckpt " + path("m.ckpt"));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_LT(secs, 120.0);
  EXPECT_TRUE(fs::exists(path("m.ckpt")));
  EXPECT_TRUE(fs::exists(path("m.ckpt.last")));

  r = cli("train --data " + path("d") + " --resume " + path("m.ckpt.last") + " --out-ckpt " + path("m.ckpt") +
          " --max-epochs 5");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("epoch 4 "), std::string::npos) << r.out;
  EXPECT_EQ(r.out.find("epoch 1 "), std::string::npos);
  std::ifstream log(path("m.ckpt.metrics.jsonl"));
  std::string line;
  std::size_t expect = 1;
  while (std::getline(log, line)) EXPECT_EQ(nlohmann::json::parse(line).at("epoch").get<std::size_t>(), expect++);
  EXPECT_EQ(expect, 6u);
}

TEST_F(CliTest, TrainErrors) {
  auto r = cli("train --data " + path("missing") + " --out-ckpt " + path("m.ckpt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("missing"), std::string::npos);
  tiny_setup(50);
  write("bad.cfg", "[model]\ndim = 16\n[train]\nlr = fast\n");
  r = cli("train --data " + path("d") + " --config " + path("bad.cfg") + " --out-ckpt " + path("m.ckpt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("config line 4 (train.lr)"), std::string::npos) << r.out;
}

TEST_F(CliTest, NonFiniteTrainingExitsWithNumericalCode) {
  tiny_setup(50);
  write("hot.cfg", "[model]\ndim = 16\nn_op = 2\nt_steps = 2\n[train]\nlr = 1e300\nclip = 1e300\nmax_epochs = 3\n");
  const auto r = cli("train --data " + path("d") + " --config " + path("hot.cfg") + " --out-ckpt " + path("m.ckpt"));
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_NE(r.out.find("grad norm"), std::string::npos);
}

TEST_F(CliTest, EvalOverfitModelIsPerfectAndRepeatable) {
  ASSERT_EQ(cli("gen-data --out " + path("d") + " --n-train 32 --n-val 0 --n-test 0 --seed 8").code, 0);
  write("overfit.cfg",
        "[model]\ndim = 16\nn_op = 2\nt_steps = 2\nw = 1\n[train]\nlr = 3e-3\nbatch_size = 4\n"
        "max_epochs = 200\npatience = 10\nseed = 3\n");
  auto r = cli("train --data " + path("d") + " --config " + path("overfit.cfg") + " --out-ckpt " + path("m.ckpt"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto a = cli("eval --ckpt " + path("m.ckpt") + " --data " + path("d/train.jsonl") + " --json-lines");
  ASSERT_EQ(a.code, 0) << a.out;
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j.at("accuracy").get<double>(), 1.0);
  std::size_t total = 0;
  for (const auto& [k, b] : j.at("per_length").items()) total += b.at("total").get<std::size_t>();
  EXPECT_EQ(total, 32u);
  EXPECT_EQ(cli("eval --ckpt " + path("m.ckpt") + " --data " + path("d/train.jsonl") + " --json-lines").out, a.out);
  const auto table = cli("eval --ckpt " + path("m.ckpt") + " --data " + path("d/train.jsonl"));
  EXPECT_NE(table.out.find("overall   1.0000  (32/32)"), std::string::npos) << table.out;
}

TEST_F(CliTest, EvalRejectsForeignCheckpoint) {
  tiny_setup(50);
  write("junk.ckpt", std::string("IPRMCKPT\x09\x00\x00\x00", 12));
  auto r = cli("eval --ckpt " + path("junk.ckpt") + " --data " + path("d/val.jsonl"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("version 9"), std::string::npos) << r.out;
  write("text.ckpt", "hello");
  EXPECT_EQ(cli("eval --ckpt " + path("text.ckpt") + " --data " + path("d/val.jsonl")).code, 2);
}

std::vector<nlohmann::json> read_rows(const std::string& p) {
  std::vector<nlohmann::json> rows;
  std::ifstream is(p);
  std::string line;
  while (std::getline(is, line)) rows.push_back(nlohmann::json::parse(line));
  return rows;
}

TEST_F(CliTest, AblateSingleCellEqualsTrainThenEval) {
  tiny_setup(200);
  auto r = cli("ablate --data " + path("d") + " --config " + path("tiny.cfg") + " --grid \"nop=2\" --out " +
               path("rows.jsonl"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto rows = read_rows(path("rows.jsonl"));
  ASSERT_EQ(rows.size(), 1u);
  ASSERT_EQ(cli("train --data " + path("d") + " --config " + path("tiny.cfg") + " --out-ckpt " + path("m.ckpt")).code, 0);
  const auto ev = nlohmann::json::parse(
      cli("eval --ckpt " + path("m.ckpt") + " --data " + path("d/val.jsonl") + " --json-lines").out);
  EXPECT_EQ(rows[0].at("val_accuracy").get<double>(), ev.at("accuracy").get<double>());
}

TEST_F(CliTest, AblateParameterCountConstantAndJobsMatchSequential) {
  tiny_setup(64);
  write("one.cfg", "[model]\ndim = 16\n[train]\nmax_epochs = 1\nbatch_size = 32\n");
  const std::string grid = " --grid \"nop=1,3;t=1,2;opc=on\"";
  auto r = cli("ablate --data " + path("d") + " --config " + path("one.cfg") + grid + " --out " + path("seq.jsonl"));
  ASSERT_EQ(r.code, 0) << r.out;
  r = cli("ablate --data " + path("d") + " --config " + path("one.cfg") + grid + " --jobs 2 --out " + path("par.jsonl"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto seq = read_rows(path("seq.jsonl"));
  ASSERT_EQ(seq.size(), 4u);
  EXPECT_EQ(seq, read_rows(path("par.jsonl")));
  for (const auto& row : seq) EXPECT_EQ(row.at("params"), seq.front().at("params"));
}

TEST_F(CliTest, AblateGridSyntaxErrors) {
  tiny_setup(20);
  for (const char* g : {"nop=", "nop=1;;t=2", "speed=1", "nop=1,x", "opc=maybe", "nop=1;nop=2", "r=3"}) {
    const auto r = cli("ablate --data " + path("d") + " --grid \"" + std::string(g) + "\"");
    EXPECT_EQ(r.code, 1) << g << "\n" << r.out;
  }
}

TEST_F(CliTest, TraceFilesAreConsistentAndRerenderIdentically) {
  tiny_setup(100);
  ASSERT_EQ(cli("train --data " + path("d") + " --config " + path("tiny.cfg") + " --out-ckpt " + path("m.ckpt")).code, 0);
  const auto r = cli("trace --ckpt " + path("m.ckpt") + " --data " + path("d/val.jsonl") + " --index 7 --out-dir " +
                     path("tr"));
  ASSERT_EQ(r.code, 0) << r.out;
  const TraceFile tf = load_trace(path("tr/trace.json"));
  const auto sample = synth::read_dataset(path("d/val.jsonl")).at(7);
  EXPECT_EQ(tf.t_steps(), 2u);
  EXPECT_EQ(tf.n_op(), 2u);
  EXPECT_EQ(tf.question, sample.question);
  EXPECT_EQ(tf.objects.size(), sample.scene.objects.size());
  EXPECT_NO_THROW(validate(tf));
  EXPECT_EQ(render_language_svg(tf, 1), slurp(dir / "tr" / "lang_op1.svg"));
  EXPECT_EQ(render_visual_svg(tf, 0), slurp(dir / "tr" / "vis_step0.svg"));
  write_trace_bundle(tf, path("tr2"));
  for (const auto& f : fs::directory_iterator(dir / "tr")) {
    EXPECT_EQ(slurp(f.path()), slurp(dir / "tr2" / f.path().filename())) << f.path();
  }
  EXPECT_EQ(cli("trace --ckpt " + path("m.ckpt") + " --data " + path("d/val.jsonl") + " --index 100 --out-dir " +
                path("tr3"))
                .code,
            1);
}

TEST(Grid, ExpandsCartesianProductLastAxisFastest) {
  const auto cells = parse_grid("nop=1,6;t=1,9;opc=on,off", ModelConfig{});
  ASSERT_EQ(cells.size(), 8u);
  EXPECT_EQ(cells[0].label(), "nop=1 t=1 opc=on");
  EXPECT_EQ(cells[1].label(), "nop=1 t=1 opc=off");
  EXPECT_EQ(cells[7].label(), "nop=6 t=9 opc=off");
  EXPECT_EQ(cells[7].model.iprm.n_op, 6u);
  EXPECT_EQ(cells[7].model.iprm.t_steps, 9u);
  EXPECT_FALSE(cells[7].model.iprm.composition);
  EXPECT_EQ(parse_grid("nop=1,3,6,9;t=1,3,6,9;opc=on,off;r=1,2,8;w=0,1,2", ModelConfig{}).size(), 288u);
  EXPECT_THROW(parse_grid("", ModelConfig{}), GridError);
}

TEST(Trace, ValidateCatchesBadRows) {
  TraceFile tf;
  tf.question = {"how", "many"};
  tf.objects = {{"a", 0.1, 0.2}};
  tf.lang_atts = {{{0.5, 0.5}}};
  tf.vis_atts = {{{1.0}}};
  tf.pool_att = {1.0};
  EXPECT_NO_THROW(validate(tf));
  auto bad = tf;
  bad.lang_atts[0][0][1] = 0.6;
  EXPECT_THROW(validate(bad), TraceError);
  bad = tf;
  bad.vis_atts[0][0].push_back(0.0);
  EXPECT_THROW(validate(bad), TraceError);
  EXPECT_EQ(trace_from_json(to_json(tf)), tf);
}

}  // namespace
}  // namespace iprm::cli
