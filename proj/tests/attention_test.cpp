#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "iprm/attention.hpp"
#include "iprm/numerics/gradcheck.hpp"
#include "oracles.hpp"

namespace iprm {
namespace {

using testing::lin;
using testing::loop_attention;
using testing::rows_of;
using testing::max_abs_diff;
using testing::random_readout;
using testing::random_tensor;
using testing::row;
using testing::Vec;
using T = Tensor<double>;

class AttentionTest : public ::testing::Test {
 protected:
  AttentionTest() : reg(11), proj(reg, "score", 4, 1) {
    reg.get("score.bias").value.node()->data[0] = 0.3;
  }
  ParameterRegistry<double> reg;
  Linear<double> proj;
  Rng rng{12};
};

TEST_F(AttentionTest, SingleKeyReturnsItsValue) {
  auto q = random_tensor({1, 1, 4}, rng);
  auto v = random_tensor({1, 1, 3}, rng);
  auto att = modulated_attention(q, q, v, proj);
  EXPECT_EQ(att.weights.item(), 1.0);
  EXPECT_EQ(max_abs_diff(att.output.data(), v.data()), 0.0);
}

TEST_F(AttentionTest, IdenticalKeysSplitEvenly) {
  auto q = random_tensor({1, 1, 4}, rng);
  auto k1 = random_tensor({1, 1, 4}, rng);
  auto k = concat<double>({k1, k1}, 1);
  auto att = modulated_attention(q, k, random_tensor({1, 2, 3}, rng), proj);
  EXPECT_NEAR(att.weights.data()[0], 0.5, 1e-9);
  EXPECT_NEAR(att.weights.data()[1], 0.5, 1e-9);
}

TEST_F(AttentionTest, MatchesDoubleLoopOracle) {
  auto q = random_tensor({1, 2, 4}, rng);
  auto k = random_tensor({1, 3, 4}, rng);
  auto v = random_tensor({1, 3, 5}, rng);
  auto att = modulated_attention(q, k, v, proj);
  auto ref = loop_attention(rows_of(q), rows_of(k), rows_of(v), proj);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_LT(max_abs_diff(row(att.output, i), ref.out[i]), 1e-9);
    EXPECT_LT(max_abs_diff(row(att.weights, i), ref.weights[i]), 1e-9);
  }
}

TEST_F(AttentionTest, MaskedOracleAndBlockedWeights) {
  auto q = random_tensor({1, 2, 4}, rng);
  auto k = random_tensor({1, 3, 4}, rng);
  auto v = random_tensor({1, 3, 2}, rng);
  std::vector<Vec> m{{1, 0, 0}, {0, 1, 1}};
  T mask({2, 3}, {1, 0, 0, 0, 1, 1});
  auto att = modulated_attention(q, k, v, proj, std::optional<T>(mask));
  auto ref = loop_attention(rows_of(q), rows_of(k), rows_of(v), proj, &m);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_LT(max_abs_diff(row(att.output, i), ref.out[i]), 1e-9);
  }
  EXPECT_LT(att.weights.at({0, 0, 0}), 1e-12);
  EXPECT_LT(att.weights.at({0, 1, 2}), 1e-12);
  EXPECT_NEAR(att.weights.at({0, 1, 0}), 1.0, 1e-12);
}

TEST_F(AttentionTest, PerQueryKeysMatchLoopOracle) {
  auto q = random_tensor({1, 2, 4}, rng);
  auto k = random_tensor({1, 2, 3, 4}, rng);
  auto v = random_tensor({1, 3, 2}, rng);
  auto att = modulated_attention(q, k, v, proj);
  auto qs = rows_of(q);
  auto ks = rows_of(k);
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<Vec> my_keys(ks.begin() + 3 * i, ks.begin() + 3 * (i + 1));
    auto ref = loop_attention({qs[i]}, my_keys, rows_of(v), proj);
    EXPECT_LT(max_abs_diff(row(att.output, i), ref.out[0]), 1e-9);
  }
}

TEST_F(AttentionTest, RowsAreStochastic) {
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = rng.between(1, 3), nq = rng.between(1, 5), nk = rng.between(1, 7);
    auto att = modulated_attention(random_tensor({b, nq, 4}, rng, -3, 3),
                                   random_tensor({b, nk, 4}, rng, -3, 3),
                                   random_tensor({b, nk, 2}, rng), proj);
    for (std::size_t r = 0; r < b * nq; ++r) {
      auto w = row(att.weights, r);
      ASSERT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-6);
    }
  }
}

TEST_F(AttentionTest, KeyPermutationPermutesWeightColumns) {
  auto q = random_tensor({1, 2, 4}, rng);
  auto k = random_tensor({1, 4, 4}, rng);
  auto v = random_tensor({1, 4, 3}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<T> kp, vp;
  for (auto p : perm) {
    kp.push_back(slice(k, 1, p, 1));
    vp.push_back(slice(v, 1, p, 1));
  }
  auto a = modulated_attention(q, k, v, proj);
  auto b = modulated_attention(q, concat(kp, 1), concat(vp, 1), proj);
  EXPECT_LT(max_abs_diff(a.output.data(), b.output.data()), 1e-9);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(b.weights.at({0, i, j}), a.weights.at({0, i, perm[j]}), 1e-12);
    }
  }
}

TEST_F(AttentionTest, GradientCheckThroughAllInputsAndProjection) {
  auto q = random_tensor({2, 2, 4}, rng, -1, 1, true);
  auto k = random_tensor({2, 3, 4}, rng, -1, 1, true);
  auto v = random_tensor({2, 3, 2}, rng, -1, 1, true);
  T mask({2, 3}, {0, 1, 0, 0, 0, 0});
  auto f = [&](const T&) {
    return random_readout(modulated_attention(q, k, v, proj, std::optional<T>(mask)).output, 5);
  };
  for (const T& p : {q, k, v, proj.weight(), proj.bias()}) {
    EXPECT_LT(finite_difference_check<double>(f, p, 1e-5), 1e-6);
  }
}

TEST_F(AttentionTest, FeatureDimMismatchAndFullyMaskedRowAreErrors) {
  EXPECT_THROW(modulated_attention(random_tensor({1, 2, 4}, rng), random_tensor({1, 3, 5}, rng),
                                   random_tensor({1, 3, 2}, rng), proj),
               ShapeError);
  T mask({1, 2}, {1, 1});
  EXPECT_THROW(modulated_attention(random_tensor({1, 1, 4}, rng), random_tensor({1, 2, 4}, rng),
                                   random_tensor({1, 2, 2}, rng), proj, std::optional<T>(mask)),
               NumericalError);
}

TEST_F(AttentionTest, SecondaryValuesEqualPrimaryWhenIdentical) {
  auto q = random_tensor({1, 2, 4}, rng);
  auto k = random_tensor({1, 3, 4}, rng);
  auto v = random_tensor({1, 3, 3}, rng);
  auto out = attention_with_secondary_values(q, k, v, v, proj);
  EXPECT_EQ(max_abs_diff(out.primary.data(), out.secondary.data()), 0.0);
}

TEST_F(AttentionTest, SecondaryValuesSingleKey) {
  auto q = random_tensor({1, 2, 4}, rng);
  auto k = random_tensor({1, 1, 4}, rng);
  auto v1 = random_tensor({1, 1, 3}, rng);
  auto v2 = random_tensor({1, 1, 5}, rng);
  auto out = attention_with_secondary_values(q, k, v1, v2, proj);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(max_abs_diff(row(out.primary, i), row(v1, 0)), 0.0);
    EXPECT_EQ(max_abs_diff(row(out.secondary, i), row(v2, 0)), 0.0);
  }
}

TEST_F(AttentionTest, SecondaryValuesMatchLoopOracle) {
  auto q = random_tensor({1, 3, 4}, rng);
  auto k = random_tensor({1, 4, 4}, rng);
  auto v1 = random_tensor({1, 4, 2}, rng);
  auto v2 = random_tensor({1, 4, 6}, rng);
  auto out = attention_with_secondary_values(q, k, v1, v2, proj);
  auto ref = loop_attention(rows_of(q), rows_of(k), rows_of(v2), proj);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_LT(max_abs_diff(row(out.secondary, i), ref.out[i]), 1e-9);
  }
  EXPECT_THROW(attention_with_secondary_values(q, k, v1, random_tensor({1, 3, 2}, rng), proj),
               ShapeError);
}

}  // namespace
}  // namespace iprm
