// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "aag/attention.hpp"
#include "aag/errors.hpp"
#include "aag/gradcheck.hpp"
#include "support.hpp"

namespace aag {
namespace {

using test::random_tensor;

Tensor identity(std::size_t d) {
  Tensor t(d, d);
  for (std::size_t i = 0; i < d; ++i) t(i, i) = 1.0;
  return t;
}

Tensor columns(const Tensor& t, std::size_t begin, std::size_t count) {
  Tensor out(t.rows(), count);
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = t(r, begin + c);
  return out;
}

// Single-head attention built from plain kernels, one head at a time.
Tensor reference_mha(const Tensor& q_in, const Tensor& kv_in, const MHAParams& p) {
  const std::size_t d = p.width(), h = p.n_heads, dh = d / h;
  const Tensor q = matmul(q_in, p.w_q.value);
  const Tensor k = matmul(kv_in, p.w_k.value);
  const Tensor v = matmul(kv_in, p.w_v.value);
  Tensor joined(q_in.rows(), d);
  for (std::size_t head = 0; head < h; ++head) {
    Tensor scores = matmul(columns(q, head * dh, dh), transpose(columns(k, head * dh, dh)));
    for (double& s : scores.data()) s /= std::sqrt(static_cast<double>(dh));
    const Tensor out = matmul(softmax(scores, 1), columns(v, head * dh, dh));
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < dh; ++c) joined(r, head * dh + c) = out(r, c);
  }
  return matmul(joined, p.w_o.value);
}

TEST(MultiHeadAttention, SingleKeyReturnsThatRow) {
  Rng rng(1);
  MHAParams p = make_mha("m", 4, 1, rng);
  for (Parameter* w : {&p.w_q, &p.w_k, &p.w_v, &p.w_o}) w->value = identity(4);
  std::mt19937_64 r(2);
  const Tensor q = random_tensor(3, 4, r);
  const Tensor kv = random_tensor(1, 4, r);
  Tape tape;
  const Tensor out = multi_head_attention(tape.constant(q), tape.constant(kv), p, AttentionScale::per_head).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out(i, j), kv(0, j));
}

TEST(MultiHeadAttention, TwoHeadsMatchHandAssembledReference) {
  PrecisionScope f64(Precision::f64);
  Rng rng(3);
  const MHAParams p = make_mha("m", 8, 2, rng);
  std::mt19937_64 r(4);
  const Tensor q = random_tensor(3, 8, r);
  const Tensor kv = random_tensor(3, 8, r);
  Tape tape;
  const Tensor got = multi_head_attention(tape.constant(q), tape.constant(kv), p, AttentionScale::per_head).value();
  const Tensor want = reference_mha(q, kv, p);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5 * std::max(1.0, std::abs(want[i])));
}

TEST(MultiHeadAttention, WidthMismatchIsDimensionError) {
  Rng rng(5);
  const MHAParams p = make_mha("m", 8, 2, rng);
  Tape tape;
  EXPECT_THROW(multi_head_attention(tape.constant(Tensor(2, 6)), tape.constant(Tensor(2, 8)), p,
                                    AttentionScale::per_head),
               DimensionError);
}

TEST(MultiHeadAttention, HeadsMustDivideWidth) {
  Rng rng(6);
  EXPECT_THROW(make_mha("m", 6, 4, rng), ConfigError);
}

TEST(MultiHeadAttention, RowsAreStochastic) {
  Rng rng(7);
  const MHAParams p = make_mha("m", 8, 4, rng);
  std::mt19937_64 r(8);
  AttentionTrace trace;
  Tape tape;
  multi_head_attention(tape.constant(random_tensor(5, 8, r, -3, 3)), tape.constant(random_tensor(7, 8, r, -3, 3)), p,
                       AttentionScale::full_d, &trace);
  ASSERT_EQ(trace.maps.size(), 4u);
  for (const Tensor& m : trace.maps) {
    EXPECT_EQ(m.rows(), 5u);
    EXPECT_EQ(m.cols(), 7u);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double total = 0;
      for (double v : m.row(i)) total += v;
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(MultiHeadAttention, SelfAttentionIsPermutationEquivariant) {
  PrecisionScope f64(Precision::f64);
  Rng rng(9);
  const MHAParams p = make_mha("m", 8, 2, rng);
  std::mt19937_64 r(10);
  const Tensor x = random_tensor(4, 8, r);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor px(4, 8);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) px(i, j) = x(perm[i], j);
  Tape tape;
  Var xv = tape.constant(x), pv = tape.constant(px);
  const Tensor out = multi_head_attention(xv, xv, p, AttentionScale::per_head).value();
  const Tensor pout = multi_head_attention(pv, pv, p, AttentionScale::per_head).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(pout(i, j), out(perm[i], j), 1e-12);
}

TEST(EncoderLayer, PreservesShape) {
  Rng rng(11);
  const EncoderLayer layer = make_encoder_layer("l", 8, 2, 32, rng);
  std::mt19937_64 r(12);
  for (std::size_t len : {1u, 2u, 16u}) {
    Tape tape;
    const Tensor out = encoder_layer_forward(tape.constant(random_tensor(len, 8, r)), layer, std::nullopt, {}).value();
    EXPECT_EQ(out.rows(), len);
    EXPECT_EQ(out.cols(), 8u);
  }
}

TEST(EncoderLayer, ZeroedOutputWeightsReduceToIdentity) {
  Rng rng(13);
  EncoderLayer layer = make_encoder_layer("l", 8, 2, 32, rng);
  layer.mha.w_o.value.fill(0.0);
  layer.ffn_out.weight.value.fill(0.0);
  layer.ffn_out.bias.value.fill(0.0);
  std::mt19937_64 r(14);
  const Tensor x = random_tensor(3, 8, r);
  Tape tape;
  EXPECT_EQ(encoder_layer_forward(tape.constant(x), layer, std::nullopt, {}).value(), x);
}

TEST(EncoderLayer, Deterministic) {
  Rng rng(15);
  const EncoderLayer layer = make_encoder_layer("l", 8, 2, 32, rng);
  std::mt19937_64 r(16);
  const Tensor x = random_tensor(3, 8, r);
  Tape a, b;
  EXPECT_EQ(encoder_layer_forward(a.constant(x), layer, std::nullopt, {}).value(),
            encoder_layer_forward(b.constant(x), layer, std::nullopt, {}).value());
}

TEST(EncoderLayer, GradientCheckSelfAndCross) {
  PrecisionScope f64(Precision::f64);
  Rng rng(17);
  EncoderLayer layer = make_encoder_layer("l", 8, 2, 32, rng);
  std::vector<Parameter*> params;
  append_parameters(layer, params);
  std::mt19937_64 r(18);
  const Tensor x = random_tensor(3, 8, r);
  const Tensor kv = random_tensor(2, 8, r);
  const Tensor w = random_tensor(3, 8, r);
  for (bool cross : {false, true}) {
    LossFn fn = [&](Tape& t) {
      std::optional<Var> k;
      if (cross) k = t.constant(kv);
      return sum(mul(encoder_layer_forward(t.constant(x), layer, k, {}), t.constant(w)));
    };
    EXPECT_LT(finite_diff_check(fn, params), 1e-4) << (cross ? "cross" : "self");
  }
}

TEST(EncoderStack, GradientCheckFullStack) {
  PrecisionScope f64(Precision::f64);
  Rng rng(19);
  EncoderStack stack = make_encoder_stack("s", 8, 2, 2, AttentionMode::cross, rng);
  EXPECT_EQ(stack.layers.size(), 2u);
  std::vector<Parameter*> params;
  append_parameters(stack, params);
  std::mt19937_64 r(20);
  const Tensor x = random_tensor(4, 8, r);
  const Tensor kv = random_tensor(4, 8, r);
  const Tensor w = random_tensor(4, 8, r);
  LossFn fn = [&](Tape& t) {
    return sum(mul(encoder_stack_forward(t.constant(x), stack, t.constant(kv), {}), t.constant(w)));
  };
  EXPECT_LT(finite_diff_check(fn, params), 1e-4);
}

TEST(EncoderStack, CrossModeRequiresKv) {
  Rng rng(21);
  const EncoderStack stack = make_encoder_stack("s", 8, 2, 1, AttentionMode::cross, rng);
  Tape tape;
  EXPECT_THROW(encoder_stack_forward(tape.constant(Tensor(1, 8)), stack, std::nullopt, {}), UsageError);
}

TEST(SinusoidalPe, KnownEntries) {
  PrecisionScope f64(Precision::f64);
  const Tensor pe = sinusoidal_pe(5, 6);
  for (std::size_t i = 0; i < 6; i += 2) {
    EXPECT_EQ(pe(0, i), 0.0);
    EXPECT_EQ(pe(0, i + 1), 1.0);
  }
  EXPECT_NEAR(pe(1, 0), 0.841471, 1e-6);
  EXPECT_NEAR(pe(3, 4), std::sin(3.0 / std::pow(10000.0, 4.0 / 6.0)), 1e-15);
  for (double v : pe.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(SinusoidalPe, OddWidthIsConfigError) { EXPECT_THROW(sinusoidal_pe(3, 5), ConfigError); }

TEST(PrependCls, EmptySequenceYieldsCls) {
  std::mt19937_64 r(22);
  const Parameter cls("cls", random_tensor(1, 4, r));
  Tape tape;
  EXPECT_EQ(prepend_cls(tape.constant(Tensor(0, 4)), cls).value(), cls.value);
}

TEST(PrependCls, RowsFollowUnchanged) {
  std::mt19937_64 r(23);
  const Parameter cls("cls", random_tensor(1, 4, r));
  const Tensor seq = random_tensor(3, 4, r);
  Tape tape;
  const Tensor out = prepend_cls(tape.constant(seq), cls).value();
  ASSERT_EQ(out.rows(), 4u);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out(0, j), cls.value(0, j));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out(i + 1, j), seq(i, j));
}

TEST(PrependCls, WidthMismatch) {
  const Parameter cls("cls", Tensor(1, 4));
  Tape tape;
  EXPECT_THROW(prepend_cls(tape.constant(Tensor(2, 3)), cls), DimensionError);
}

TEST(PrependCls, GradientReachesCls) {
  PrecisionScope f64(Precision::f64);
  std::mt19937_64 r(24);
  Rng rng(25);
  Parameter cls("cls", random_tensor(1, 8, r));
  const EncoderStack stack = make_encoder_stack("s", 8, 2, 1, AttentionMode::self, rng);
  const Tensor seq = random_tensor(3, 8, r);
  cls.zero_grad();
  Tape tape;
  Var out = encoder_stack_forward(prepend_cls(tape.constant(seq), cls), stack, std::nullopt, {});
  tape.backward(sum(mul(slice_rows(out, 0, 1), slice_rows(out, 0, 1))));
  double norm = 0;
  for (double g : cls.grad.data()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
  std::vector<Parameter*> params{&cls};
  LossFn fn = [&](Tape& t) {
    Var o = encoder_stack_forward(prepend_cls(t.constant(seq), cls), stack, std::nullopt, {});
    return sum(mul(slice_rows(o, 0, 1), slice_rows(o, 0, 1)));
  };
  EXPECT_LT(finite_diff_check(fn, params), 1e-4);
}

TEST(AttentionMaps, DumpRoundTripsAsF32) {
  Rng rng(26);
  const MHAParams p = make_mha("m", 8, 2, rng);
  std::mt19937_64 r(27);
  AttentionTrace trace;
  Tape tape;
  multi_head_attention(tape.constant(random_tensor(2, 8, r)), tape.constant(random_tensor(3, 8, r)), p,
                       AttentionScale::per_head, &trace);
  const auto path = test::scratch_dir("attn_maps") / "maps.bin";
  write_attention_maps(path, trace);
  const AttentionTrace back = read_attention_maps(path);
  ASSERT_EQ(back.maps.size(), trace.maps.size());
  for (std::size_t m = 0; m < back.maps.size(); ++m) {
    ASSERT_EQ(back.maps[m].shape(), trace.maps[m].shape());
    for (std::size_t i = 0; i < back.maps[m].size(); ++i)
      EXPECT_EQ(back.maps[m][i], static_cast<double>(static_cast<float>(trace.maps[m][i])));
  }
  EXPECT_EQ(std::filesystem::file_size(path), 4u + 2 * (8u + 6 * 4u));
}

}  // namespace
}  // namespace aag
