#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "can/attention.hpp"
#include "can/ops.hpp"

using namespace can;

namespace {

Tensor64 pattern(std::size_t r, std::size_t c, double offset, double amp = 1.0) {
  std::vector<double> v(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = amp * std::sin(offset + static_cast<double>(i * c + j + 1));
  }
  return Tensor64({r, c}, std::move(v));
}

Tensor64 random64(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor64(std::move(shape), std::move(v));
}

AttentionParams<double> identity_params(std::size_t d) {
  return {1, Tensor64::identity(d), Tensor64::identity(d), Tensor64::identity(d), Tensor64::identity(d)};
}

void expect_near(std::span<const double> a, std::span<const double> b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

TEST(ProjectQkv, IdentityWeightsReturnInput) {
  const auto h = pattern(3, 4, 0.0);
  const auto qkv = project_qkv(h, identity_params(4), 0);
  EXPECT_EQ(qkv.q.to_vector(), h.to_vector());
  EXPECT_EQ(qkv.k.to_vector(), h.to_vector());
  EXPECT_EQ(qkv.v.to_vector(), h.to_vector());
}

TEST(ProjectQkv, ZeroInputGivesZeros) {
  std::mt19937_64 rng(1);
  const auto p = init_attention<double>(4, 2, rng);
  const auto qkv = project_qkv(Tensor64::zeros({3, 4}), p, 1);
  for (const auto* t : {&qkv.q, &qkv.k, &qkv.v}) {
    for (double v : t->data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(ProjectQkv, HandMultiply) {
  AttentionParams<double> p{1, Tensor64({2, 1}, {2, 3}), Tensor64({2, 1}, {1, 1}), Tensor64({2, 1}, {1, 1}),
                            Tensor64({1, 2}, {1, 1})};
  const auto qkv = project_qkv(Tensor64({1, 2}, {1, 0}), p, 0);
  EXPECT_EQ(qkv.q.shape(), (Shape{1, 1}));
  EXPECT_EQ(qkv.q.item(), 2.0);
}

TEST(ProjectQkv, HeadOutOfRangeThrows) {
  std::mt19937_64 rng(2);
  const auto p = init_attention<double>(4, 2, rng);
  EXPECT_ANY_THROW(project_qkv(Tensor64::zeros({3, 4}), p, 2));
}

TEST(ScaledDotAttention, SingleStepReturnsValue) {
  const Tensor64 v({1, 3}, {4, 5, 6});
  const auto out = scaled_dot_attention(Tensor64({1, 2}, {1, 2}), Tensor64({1, 2}, {3, 4}), v, false);
  EXPECT_EQ(out.to_vector(), v.to_vector());
}

TEST(ScaledDotAttention, IdenticalKeysAverageValues) {
  const auto q = pattern(3, 2, 0.0);
  const Tensor64 k({3, 2}, {0.4, -0.7, 0.4, -0.7, 0.4, -0.7});
  const Tensor64 v({3, 2}, {1, 2, 3, 4, 8, 6});
  const auto out = scaled_dot_attention(q, k, v, false);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_NEAR(out.at({r, 0}), 4.0, 1e-12);
    EXPECT_NEAR(out.at({r, 1}), 4.0, 1e-12);
  }
}

TEST(ScaledDotAttention, CausalFirstRowSeesOnlyItself) {
  const auto q = pattern(4, 3, 1.0);
  const auto k = pattern(4, 3, 2.0);
  const auto v = pattern(4, 3, 3.0);
  const auto out = scaled_dot_attention(q, k, v, true);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at({0, c}), v.at({0, c}));
}

TEST(MultiHeadAttention, SingleHeadIdentityReducesToScaledDot) {
  const auto h = pattern(4, 3, 0.5);
  const auto mha = multi_head_attention(h, identity_params(3), false);
  const auto ref = scaled_dot_attention(h, h, h, false);
  expect_near(mha.data(), ref.data(), 1e-12);
}

TEST(MultiHeadAttention, ZeroOutputProjection) {
  std::mt19937_64 rng(3);
  auto p = init_attention<double>(4, 2, rng);
  p.w_o = Tensor64::zeros({4, 4});
  const auto out = multi_head_attention(random64({2, 5, 4}, rng), p, false);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(MultiHeadAttention, TwoHeadsEqualComposedSingleHeads) {
  AttentionParams<double> p{2, pattern(4, 4, 10), pattern(4, 4, 20), pattern(4, 4, 30), pattern(4, 4, 40)};
  const auto x = pattern(3, 4, 0.0, 2.0);
  for (bool causal : {false, true}) {
    std::vector<Tensor64> heads;
    for (std::size_t i = 0; i < 2; ++i) {
      const auto qkv = project_qkv(x, p, i);
      heads.push_back(scaled_dot_attention(qkv.q, qkv.k, qkv.v, causal));
    }
    const auto composed = matmul(concat(heads, 1), p.w_o);
    expect_near(multi_head_attention(x, p, causal).data(), composed.data(), 1e-12);
  }
}

TEST(MultiHeadAttention, TwoHeadsMatchFrozenOracle) {
  AttentionParams<double> p{2, pattern(4, 4, 10), pattern(4, 4, 20), pattern(4, 4, 30), pattern(4, 4, 40)};
  const auto x = pattern(3, 4, 0.0, 2.0);
  const std::vector<double> bidirectional = {
      -0.22945967777798473, -0.04913771598345812, 0.17636123527607245, 0.239714480154289,
      0.08422862109424605,  0.13579202751167732,  0.0625088700718922,  -0.06824465423756672,
      0.16263686519650133,  -0.07485324231851684, -0.2435236240493039, -0.18829950889589284};
  const std::vector<double> causal = {
      0.10500439745466315, -0.3666918266778493,  -0.5012532764487474, -0.17496477550058745,
      0.14662405074235776, -0.12486361995012972, -0.2815522542985539, -0.1793830444896335,
      0.16263686519650133, -0.07485324231851684, -0.2435236240493039, -0.18829950889589284};
  expect_near(multi_head_attention(x, p, false).data(), bidirectional, 1e-12);
  expect_near(multi_head_attention(x, p, true).data(), causal, 1e-12);
}

TEST(MultiHeadAttention, FloatAgreesWithDouble) {
  std::mt19937_64 rng(4);
  const auto p64 = init_attention<double>(8, 2, rng);
  const AttentionParams<float> p32{2, p64.w_q.cast<float>(), p64.w_k.cast<float>(), p64.w_v.cast<float>(),
                                   p64.w_o.cast<float>()};
  const auto h = random64({3, 6, 8}, rng);
  const auto a = multi_head_attention(h, p64, true).to_vector();
  const auto b = multi_head_attention(h.cast<float>(), p32, true).to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4);
}

TEST(MultiHeadAttention, MismatchedWeightsThrow) {
  AttentionParams<double> p{2, Tensor64::zeros({4, 4}), Tensor64::zeros({4, 4}), Tensor64::zeros({4, 4}),
                            Tensor64::zeros({3, 4})};
  EXPECT_THROW(p.validate(), ShapeError);
  EXPECT_THROW(multi_head_attention(Tensor64::zeros({2, 4}), p, false), ShapeError);
  std::mt19937_64 rng(5);
  EXPECT_THROW(multi_head_attention(Tensor64::zeros({2, 5}), init_attention<double>(4, 2, rng), false), ShapeError);
}

TEST(AttentionProperties, PermutationEquivariantWithoutPositions) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = init_attention<double>(4, 2, rng);
    const auto h = random64({5, 4}, rng);
    std::vector<std::size_t> perm = {0, 1, 2, 3, 4};
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> permuted(20);
    for (std::size_t t = 0; t < 5; ++t) {
      for (std::size_t c = 0; c < 4; ++c) permuted[t * 4 + c] = h.at({perm[t], c});
    }
    const auto out = multi_head_attention(h, p, false);
    const auto out_perm = multi_head_attention(Tensor64({5, 4}, permuted), p, false);
    for (std::size_t t = 0; t < 5; ++t) {
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out_perm.at({t, c}), out.at({perm[t], c}), 1e-12);
    }
  }
}

TEST(AttentionProperties, CausalOutputIgnoresLaterSteps) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = init_attention<double>(4, 2, rng);
    const auto h = random64({6, 4}, rng);
    const std::size_t s = trial % 5;
    auto changed = h.to_vector();
    for (std::size_t t = s + 1; t < 6; ++t) {
      for (std::size_t c = 0; c < 4; ++c) changed[t * 4 + c] += 3.0 + static_cast<double>(c);
    }
    const auto a = multi_head_attention(h, p, true);
    const auto b = multi_head_attention(Tensor64({6, 4}, changed), p, true);
    for (std::size_t t = 0; t <= s; ++t) {
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(a.at({t, c}), b.at({t, c}));
    }
    bool later_changed = false;
    for (std::size_t t = s + 1; t < 6; ++t) later_changed |= a.at({t, 0}) != b.at({t, 0});
    EXPECT_TRUE(later_changed);
  }
}

TEST(AttentionProperties, WeightRowsAreProbabilityVectors) {
  std::mt19937_64 rng(8);
  const auto q = random64({2, 5, 3}, rng);
  const auto k = random64({2, 5, 3}, rng);
  for (bool causal : {false, true}) {
    const BasicTensor<double> mask = causal_mask<double>(5);
    const auto scores = mul_scalar(matmul(q, transpose(k)), 1.0 / std::sqrt(3.0));
    const auto w = causal ? softmax(scores, -1, &mask) : softmax(scores, -1);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t i = 0; i < 5; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
          const double v = w.at({b, i, j});
          EXPECT_GE(v, 0.0);
          if (causal && j > i) EXPECT_EQ(v, 0.0);
          row += v;
        }
        EXPECT_NEAR(row, 1.0, 1e-12);
      }
    }
  }
}

TEST(AttentionProperties, SensorsAreIndependentSequences) {
  std::mt19937_64 rng(9);
  const auto p = init_attention<double>(4, 2, rng);
  const auto h = random64({3, 5, 4}, rng);
  auto changed = h.to_vector();
  for (std::size_t i = 20; i < 40; ++i) changed[i] += 1.0;  // sensor 1 only
  const auto a = multi_head_attention(h, p, false);
  const auto b = multi_head_attention(Tensor64({3, 5, 4}, changed), p, false);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  for (std::size_t i = 40; i < 60; ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  const auto alone = multi_head_attention(slice(h, 0, 2, 1), p, false);
  expect_near(alone.data(), a.data().subspan(40, 20), 1e-12);
}

TEST(PositionalEncoding, PositionZeroIsSinCosOfZero) {
  const auto pe = positional_encoding<double>(4, 6);
  for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(pe.at({0, c}), c % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionalEncoding, ClosedForm) {
  const auto pe = positional_encoding<double>(5, 4);
  for (std::size_t pos = 0; pos < 5; ++pos) {
    for (std::size_t i = 0; i < 2; ++i) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, 2.0 * static_cast<double>(i) / 4.0);
      EXPECT_NEAR(pe.at({pos, 2 * i}), std::sin(angle), 1e-15);
      EXPECT_NEAR(pe.at({pos, 2 * i + 1}), std::cos(angle), 1e-15);
    }
  }
}

TEST(PositionalEncoding, BoundedAndDistinctRows) {
  const auto pe = positional_encoding<double>(16, 8);
  for (double v : pe.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  for (std::size_t a = 0; a < 16; ++a) {
    for (std::size_t b = a + 1; b < 16; ++b) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < 8; ++c) d2 += std::pow(pe.at({a, c}) - pe.at({b, c}), 2);
      EXPECT_GT(d2, 0.0) << a << " vs " << b;
    }
  }
}

TEST(PositionalEncoding, OverflowThrows) {
  const PositionalTable table(8, 4);
  EXPECT_EQ(table.rows<float>(8).shape(), (Shape{8, 4}));
  EXPECT_THROW(table.rows<float>(9), std::out_of_range);
}
