#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "iprm/synth/dataset_io.hpp"

namespace iprm::synth {
namespace {

SceneObject obj(int shape, int color, int size, int material, double x, double y) {
  SceneObject o;
  o.attrs = {shape, color, size, material};
  o.x = x;
  o.y = y;
  return o;
}

Scene fixed_scene() {
  Scene s;
  s.objects = {obj(0, 0, 1, 1, 0.1, 0.1),   // large red metal cube
               obj(0, 2, 0, 0, 0.4, 0.8),   // small blue rubber cube
               obj(1, 3, 1, 0, 0.7, 0.3),   // large yellow rubber sphere
               obj(0, 1, 0, 1, 0.9, 0.6)};  // small green metal cube
  return s;
}

Program exist_pair(Fn op, int color_a, int shape_a, int color_b, int shape_b) {
  Program p;
  const int sc = p.add({Fn::kScene, -1, -1, {}});
  int a = p.add({Fn::kFilter, kColor, color_a, {sc}});
  a = p.add({Fn::kFilter, kShape, shape_a, {a}});
  a = p.add({Fn::kExist, -1, -1, {a}});
  int b = p.add({Fn::kFilter, kColor, color_b, {sc}});
  b = p.add({Fn::kFilter, kShape, shape_b, {b}});
  b = p.add({Fn::kExist, -1, -1, {b}});
  p.add({op, -1, -1, {a, b}});
  return p;
}

TEST(Scene, SameSeedSameScene) {
  Rng a(5), b(5);
  EXPECT_EQ(gen_scene(a, 7), gen_scene(b, 7));
}

TEST(Scene, PairwiseDistanceInvariant) {
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    auto s = gen_scene(rng, 10);
    for (std::size_t a = 0; a < s.objects.size(); ++a) {
      for (std::size_t b = a + 1; b < s.objects.size(); ++b) {
        ASSERT_GE(distance(s.objects[a], s.objects[b]), kMinObjectDistance);
      }
    }
  }
}

TEST(Scene, AttributeMarginalsUniform) {
  Rng rng(7);
  std::array<std::vector<int>, kNumAttributes> counts;
  for (int a = 0; a < kNumAttributes; ++a) counts[a].assign(attribute_cardinality(a), 0);
  std::size_t total = 0;
  while (total < 100000) {
    for (const auto& o : gen_scene(rng, 10).objects) {
      for (int a = 0; a < kNumAttributes; ++a) ++counts[a][o.attrs[a]];
      ++total;
    }
  }
  for (int a = 0; a < kNumAttributes; ++a) {
    const double expect = 1.0 / static_cast<double>(attribute_cardinality(a));
    for (int c : counts[a]) {
      EXPECT_NEAR(static_cast<double>(c) / static_cast<double>(total), expect, 0.02 * expect)
          << kAttributeNames[a];
    }
  }
}

TEST(Scene, ObjectCountBounds) {
  Rng rng(1);
  EXPECT_THROW(gen_scene(rng, 2), std::invalid_argument);
  EXPECT_THROW(gen_scene(rng, 11), std::invalid_argument);
}

TEST(Oracle, LogicTable) {
  const Scene s = fixed_scene();
  // red cube exists, blue sphere does not
  EXPECT_EQ(oracle_answer(s, exist_pair(Fn::kOr, 0, 0, 2, 1)), "yes");
  EXPECT_EQ(oracle_answer(s, exist_pair(Fn::kAnd, 0, 0, 2, 1)), "no");
  EXPECT_EQ(oracle_answer(s, exist_pair(Fn::kAnd, 0, 0, 2, 0)), "yes");
  EXPECT_EQ(oracle_answer(s, exist_pair(Fn::kOr, 4, 0, 2, 1)), "no");
}

TEST(Oracle, MaxOccurringMajority) {
  Scene s = fixed_scene();
  s.objects[1].attrs[kShape] = 0;
  Program p;
  const int sc = p.add({Fn::kScene, -1, -1, {}});
  p.add({Fn::kMaxOccurring, kShape, -1, {sc}});
  EXPECT_EQ(oracle_answer(s, p), "cube");  // 3 cubes + 1 sphere
  s.objects[0].attrs[kShape] = 1;
  EXPECT_EQ(oracle_answer(s, p), kAmbiguousAnswer);  // 2 vs 2 tie
}

TEST(Oracle, CountOfEmptyFilterIsZero) {
  Program p;
  const int sc = p.add({Fn::kScene, -1, -1, {}});
  const int f = p.add({Fn::kFilter, kColor, 5, {sc}});
  p.add({Fn::kCount, -1, -1, {f}});
  EXPECT_EQ(oracle_answer(fixed_scene(), p), "0");
}

TEST(Oracle, QueryUniqueObject) {
  Program p;
  const int sc = p.add({Fn::kScene, -1, -1, {}});
  const int f = p.add({Fn::kFilter, kShape, 1, {sc}});
  p.add({Fn::kQueryAttr, kColor, -1, {f}});
  EXPECT_EQ(oracle_answer(fixed_scene(), p), "yellow");
  p.nodes[1].value = 0;  // three cubes
  EXPECT_EQ(oracle_answer(fixed_scene(), p), kAmbiguousAnswer);
}

TEST(Oracle, RelateMatchesExhaustiveScan) {
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    Scene s = gen_scene(rng, static_cast<std::size_t>(rng.between(3, 10)));
    for (int rel = 0; rel < 4; ++rel) {
      const int t = static_cast<int>(rng.below(s.objects.size()));
      Program p;
      const int sc = p.add({Fn::kScene, -1, -1, {}});
      // Recolor so that t is the only color-1 object.
      Scene s2 = s;
      for (auto& o : s2.objects) o.attrs[kColor] = 0;
      s2.objects[t].attrs[kColor] = 1;
      const int f = p.add({Fn::kFilter, kColor, 1, {sc}});
      const int r = p.add({Fn::kRelate, -1, rel, {f}});
      p.add({Fn::kCount, -1, -1, {r}});
      int expect = 0;
      for (const auto& o : s2.objects) {
        const auto& c = s2.objects[t];
        if ((rel == kLeft && o.x < c.x) || (rel == kRight && o.x > c.x) ||
            (rel == kFront && o.y > c.y) || (rel == kBehind && o.y < c.y)) {
          ++expect;
        }
      }
      ASSERT_EQ(oracle_answer(s2, p), std::to_string(expect));
    }
  }
}

TEST(Oracle, SameAttrExcludesTarget) {
  Program p;
  const int sc = p.add({Fn::kScene, -1, -1, {}});
  const int f = p.add({Fn::kFilter, kColor, 0, {sc}});
  const int same = p.add({Fn::kSameAttr, kShape, -1, {f}});
  p.add({Fn::kCount, -1, -1, {same}});
  EXPECT_EQ(oracle_answer(fixed_scene(), p), "2");
}

TEST(Oracle, CompareCount) {
  Program p;
  const int sc = p.add({Fn::kScene, -1, -1, {}});
  const int a = p.add({Fn::kFilter, kShape, 0, {sc}});
  const int b = p.add({Fn::kFilter, kShape, 1, {sc}});
  p.add({Fn::kCompareCount, -1, kGreater, {a, b}});
  EXPECT_EQ(oracle_answer(fixed_scene(), p), "yes");
  p.nodes.back().value = kEqual;
  EXPECT_EQ(oracle_answer(fixed_scene(), p), "no");
}

TEST(Oracle, IllTypedProgramsThrow) {
  Program p;
  const int sc = p.add({Fn::kScene, -1, -1, {}});
  const int c = p.add({Fn::kCount, -1, -1, {sc}});
  p.add({Fn::kExist, -1, -1, {c}});
  EXPECT_THROW(oracle_answer(fixed_scene(), p), ProgramError);
  Program q;
  q.add({Fn::kScene, -1, -1, {}});
  EXPECT_THROW(oracle_answer(fixed_scene(), q), ProgramError);
  Program r;
  r.add({Fn::kScene, -1, -1, {}});
  r.add({Fn::kCount, -1, -1, {3}});
  EXPECT_THROW(oracle_answer(fixed_scene(), r), ProgramError);
}

TEST(Generator, StoredAnswersMatchOracle) {
  const auto data = generate_split(3, Split::kTrain, 10000, all_families());
  ASSERT_EQ(data.size(), 10000u);
  for (const auto& s : data) ASSERT_EQ(oracle_answer(s.scene, s.program), s.answer);
}

TEST(Generator, FamilyRotationAndQuestionVocabulary) {
  const auto data = generate_split(4, Split::kVal, 400, all_families());
  const auto& vocab = QuestionVocab::instance();
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(data[i].family, static_cast<Family>(i % 4));
    EXPECT_EQ(data[i].split, Split::kVal);
    EXPECT_NO_THROW(vocab.encode(data[i].question));
    EXPECT_EQ(render_question(data[i].program), data[i].question);
  }
  EXPECT_EQ(vocab.id("<pad>"), 0);
}

TEST(Generator, AnswerBalancePerFamily) {
  const auto data = generate_split(5, Split::kTrain, 8000, all_families());
  std::map<Family, std::map<std::string, int>> counts;
  std::map<Family, int> totals;
  for (const auto& s : data) {
    ++counts[s.family][s.answer];
    ++totals[s.family];
  }
  for (const auto& [fam, answers] : counts) {
    for (const auto& [a, c] : answers) {
      EXPECT_LE(static_cast<double>(c) / totals[fam], answer_cap(fam) + 1e-9)
          << family_name(fam) << " " << a;
    }
  }
  EXPECT_EQ(answer_cap(Family::kChain), 0.4);
}

TEST(Generator, ProgramLengthHistogram) {
  const auto data = generate_split(6, Split::kTrain, 8000, all_families());
  std::map<std::size_t, int> hist;
  for (const auto& s : data) ++hist[s.program.length()];
  EXPECT_EQ(hist.begin()->first, kMinProgramLength);
  EXPECT_EQ(hist.rbegin()->first, kMaxProgramLength);
  int long_mass = 0;
  for (const auto& [len, c] : hist) {
    if (len >= 8) long_mass += c;
  }
  EXPECT_GE(long_mass, 0.05 * 8000);
}

TEST(Generator, SplitsDisjointBySeed) {
  std::set<std::uint64_t> seen;
  for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (const auto& s : generate_split(8, sp, 500, all_families())) {
      EXPECT_EQ(split_of_seed(s.scene.seed), sp);
      EXPECT_TRUE(seen.insert(s.scene.seed).second);
    }
  }
}

TEST(Generator, DeterministicAndSceneReproducibleFromSeed) {
  const auto a = generate_split(9, Split::kTest, 200, all_families());
  const auto b = generate_split(9, Split::kTest, 200, all_families());
  EXPECT_EQ(a, b);
  for (const auto& s : a) {
    Rng rng(s.scene.seed);
    const auto n = static_cast<std::size_t>(rng.between(3, 10));
    EXPECT_EQ(gen_scene(rng, n, s.scene.seed), s.scene);
  }
}

TEST(Generator, SingleFamilyAndUnknownName) {
  for (const auto& s : generate_split(1, Split::kTrain, 50, {Family::kLogical})) {
    EXPECT_EQ(s.family, Family::kLogical);
  }
  EXPECT_THROW(family_from_name("bogus"), std::invalid_argument);
}

TEST(DatasetIo, RoundTripIsExact) {
  const auto data = generate_split(10, Split::kTrain, 300, all_families());
  std::stringstream ss;
  write_dataset(data, ss);
  EXPECT_EQ(read_dataset(ss), data);
}

TEST(DatasetIo, EmptyInputIsEmptyDataset) {
  std::stringstream ss;
  EXPECT_TRUE(read_dataset(ss).empty());
}

TEST(DatasetIo, MalformedLineReportsLineNumber) {
  const auto data = generate_split(11, Split::kTrain, 3, all_families());
  std::stringstream ss;
  write_dataset(data, ss);
  std::string text = ss.str();
  text.insert(text.find('\n') + 1, "{\"split\": \"train\"}\n");
  std::stringstream bad(text);
  try {
    read_dataset(bad);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(std::string(e.what()).rfind("line 2:", 0), 0u);
  }
}

TEST(DatasetIo, FileRevalidatesAgainstOracle) {
  const std::string path = ::testing::TempDir() + "/synth_1k.jsonl";
  write_dataset(generate_split(12, Split::kTest, 1000, all_families()), path);
  const auto back = read_dataset(path);
  ASSERT_EQ(back.size(), 1000u);
  int mismatches = 0;
  for (const auto& s : back) mismatches += oracle_answer(s.scene, s.program) != s.answer;
  EXPECT_EQ(mismatches, 0);
}

TEST(AnswerVocabulary, CoversAllOracleOutputs) {
  const auto& v = answer_vocabulary();
  EXPECT_EQ(v.size(), 2u + 11u + 14u);
  EXPECT_EQ(answer_id("yes"), 0);
  EXPECT_THROW(answer_id("maybe"), std::out_of_range);
}

}  // namespace
}  // namespace iprm::synth
