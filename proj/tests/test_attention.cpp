#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "crossfuse/attention.hpp"
#include "crossfuse/errors.hpp"
#include "crossfuse/model.hpp"
#include "crossfuse/ops.hpp"
#include "test_util.hpp"

using namespace crossfuse;
using testutil::random_tensor;

namespace {

Tensor identity(std::size_t n) {
  std::vector<float> v(n * n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0f;
  return Tensor({n, n}, std::move(v));
}

void zero_out(Tensor t) {
  for (float& x : t.mutable_data()) x = 0.0f;
}

}  // namespace

TEST(ScaledDot, SingleKeyReturnsValueRow) {
  Rng rng(1);
  const Tensor q = random_tensor({5, 4}, rng), k = random_tensor({1, 4}, rng), v = random_tensor({1, 4}, rng);
  const Tensor out = scaled_dot_attention(q, k, v);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t f = 0; f < 4; ++f) EXPECT_EQ(out.data()[i * 4 + f], v.data()[f]);
  }
}

TEST(ScaledDot, OrthogonalQueriesAverageValues) {
  const Tensor q({2, 2}, {1, 0, 2, 0});
  const Tensor k({3, 2}, {0, 1, 0, -2, 0, 3});
  Rng rng(2);
  const Tensor v = random_tensor({3, 3}, rng);
  const Tensor out = scaled_dot_attention(q, k, v);
  for (std::size_t f = 0; f < 3; ++f) {
    const double mean = (double(v.data()[f]) + v.data()[3 + f] + v.data()[6 + f]) / 3.0;
    EXPECT_NEAR(out.data()[f], mean, 1e-6);
    EXPECT_NEAR(out.data()[3 + f], mean, 1e-6);
  }
}

TEST(ScaledDot, MatchesDoubleReference) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor q = random_tensor({2, 2}, rng, -2, 2), k = random_tensor({2, 2}, rng, -2, 2),
                 v = random_tensor({2, 2}, rng, -2, 2);
    const auto ref = testutil::attention(testutil::to_matrix(q), testutil::to_matrix(k), testutil::to_matrix(v));
    EXPECT_LT(testutil::max_abs_diff(scaled_dot_attention(q, k, v), ref), 1e-6);
  }
}

TEST(ScaledDot, ShapeErrors) {
  EXPECT_THROW(scaled_dot_attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 4}), Tensor::zeros({2, 3})),
               DimensionError);
  EXPECT_THROW(scaled_dot_attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), Tensor::zeros({3, 3})),
               DimensionError);
}

TEST(MultiHead, IdentityProjectionsReduceToAttention) {
  Rng rng(4);
  AttentionParams p = AttentionParams::init(4, 1, rng);
  p.w_query[0] = p.w_key[0] = p.w_value[0] = p.w_out = identity(4);
  const Tensor q = random_tensor({3, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 4}, rng);
  const Tensor a = multi_head_attention(q, k, v, p), b = scaled_dot_attention(q, k, v);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-6);
}

TEST(MultiHead, MatchesDoubleReference) {
  Rng rng(5);
  const AttentionParams p = AttentionParams::init(8, 2, rng);
  const Tensor q = random_tensor({4, 8}, rng), k = random_tensor({6, 8}, rng), v = random_tensor({6, 8}, rng);
  const auto ref = testutil::multi_head(testutil::to_matrix(q), testutil::to_matrix(k), testutil::to_matrix(v), p);
  EXPECT_LT(testutil::max_abs_diff(multi_head_attention(q, k, v, p), ref), 1e-5);
}

TEST(MultiHead, PermutationProperties) {
  Rng rng(6);
  const AttentionParams p = AttentionParams::init(8, 2, rng);
  const Tensor q = random_tensor({5, 8}, rng), k = random_tensor({7, 8}, rng), v = random_tensor({7, 8}, rng);
  const Tensor base = multi_head_attention(q, k, v, p);
  const std::vector<std::size_t> qp = {3, 0, 4, 1, 2}, kp = {6, 2, 0, 5, 1, 3, 4};

  const Tensor permuted_q = multi_head_attention(testutil::permute_rows(q, qp), k, v, p);
  const Tensor expected = testutil::permute_rows(base, qp);
  for (std::size_t i = 0; i < base.numel(); ++i) EXPECT_NEAR(permuted_q.data()[i], expected.data()[i], 1e-5);

  const Tensor permuted_kv =
      multi_head_attention(q, testutil::permute_rows(k, kp), testutil::permute_rows(v, kp), p);
  for (std::size_t i = 0; i < base.numel(); ++i) EXPECT_NEAR(permuted_kv.data()[i], base.data()[i], 1e-5);
}

TEST(MultiHead, TraceRowsSumToOne) {
  Rng rng(7);
  const AttentionParams p = AttentionParams::init(8, 4, rng);
  const Tensor x = random_tensor({6, 8}, rng, -3, 3);
  AttentionTrace trace;
  multi_head_attention(x, x, x, p, &trace);
  ASSERT_EQ(trace.weights.size(), 4u);
  for (const auto& w : trace.weights) {
    for (std::size_t r = 0; r < 6; ++r) {
      double row = 0.0;
      for (std::size_t c = 0; c < 6; ++c) row += w.data()[r * 6 + c];
      EXPECT_NEAR(row, 1.0, 1e-6);
    }
  }
}

TEST(SelfAttention, ResidualIdentityAndShape) {
  Rng rng(8);
  AttentionParams p = AttentionParams::init(64, 4, rng);
  const ModalEmbedding a{random_tensor({25, 64}, rng), Modality::Audio};
  const ModalEmbedding v{random_tensor({64, 64}, rng), Modality::Video};
  const Tensor out = self_attention_block(a, v, p);
  EXPECT_EQ(out.shape(), (Shape{89, 64}));

  zero_out(p.w_out);
  const Tensor id = self_attention_block(a, v, p);
  const Tensor x = concat<float>({a.seq, v.seq}, 0);
  EXPECT_TRUE(std::equal(id.data().begin(), id.data().end(), x.data().begin()));
}

TEST(SelfAttention, ConcatOrderMatters) {
  Rng rng(9);
  const AttentionParams p = AttentionParams::init(8, 2, rng);
  const ModalEmbedding a{random_tensor({3, 8}, rng), Modality::Audio};
  const ModalEmbedding v{random_tensor({4, 8}, rng), Modality::Video};
  const Tensor av = self_attention_block(a, v, p);
  const Tensor va = self_attention_block(v, a, p);
  // Same multiset of rows, placed differently: row 0 is audio in one, video in the other.
  double diff = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) diff = std::max(diff, double(std::abs(av.data()[i] - va.data()[i])));
  EXPECT_GT(diff, 1e-3);
}

TEST(CrossAttention, SingleContextRowAndResidual) {
  Rng rng(10);
  AttentionParams p = AttentionParams::init(8, 2, rng);
  const ModalEmbedding query{random_tensor({5, 8}, rng), Modality::Video};
  const ModalEmbedding ctx{random_tensor({1, 8}, rng), Modality::Audio};
  const Tensor out = cross_attention_block(query, ctx, p);
  // Every query row receives the context row's value projections through W^O.
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < 2; ++h) heads.push_back(matmul(ctx.seq, p.w_value[h]));
  const Tensor injected = matmul(concat(heads, 1), p.w_out);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t f = 0; f < 8; ++f) {
      EXPECT_NEAR(out.data()[i * 8 + f], query.seq.data()[i * 8 + f] + injected.data()[f], 1e-6);
    }
  }
  zero_out(p.w_out);
  const Tensor id = cross_attention_block(query, ctx, p);
  EXPECT_TRUE(std::equal(id.data().begin(), id.data().end(), query.seq.data().begin()));
}

TEST(CrossAttention, MatchesCompositionReference) {
  Rng rng(11);
  const AttentionParams p = AttentionParams::init(8, 2, rng);
  const ModalEmbedding query{random_tensor({4, 8}, rng), Modality::Audio};
  const ModalEmbedding ctx{random_tensor({6, 8}, rng), Modality::Video};
  auto ref = testutil::multi_head(testutil::to_matrix(query.seq), testutil::to_matrix(ctx.seq),
                                  testutil::to_matrix(ctx.seq), p);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t f = 0; f < 8; ++f) ref[i][f] += query.seq.data()[i * 8 + f];
  }
  EXPECT_LT(testutil::max_abs_diff(cross_attention_block(query, ctx, p), ref), 1e-5);
  EXPECT_THROW(cross_attention_block(query, {random_tensor({2, 6}, rng), Modality::Video}, p), DimensionError);
}

TEST(Fusion, LogitShapeIndependentOfSequenceLengths) {
  FusionModelConfig cfg;
  cfg.common_dim = 8;
  cfg.heads = 2;
  const FusionModel m = FusionModel::create(cfg, 1);
  Rng rng(12);
  for (std::size_t sa : {1u, 3u, 25u}) {
    for (std::size_t sv : {1u, 7u}) {
      const Tensor logits = fusion_forward({random_tensor({sa, 8}, rng), Modality::Audio},
                                           {random_tensor({sv, 8}, rng), Modality::Video}, m);
      EXPECT_EQ(logits.shape(), (Shape{3}));
      for (float x : logits.data()) EXPECT_TRUE(std::isfinite(x));
    }
  }
}

TEST(Fusion, OnlyClassifierBiasGivesBias) {
  FusionModelConfig cfg;
  cfg.common_dim = 8;
  cfg.heads = 2;
  const FusionModel m = FusionModel::create(cfg, 2);
  for (const auto& p : m.parameters()) zero_out(p.tensor);
  Tensor b = m.head.back().bias;
  b.mutable_data()[0] = 0.5f;
  b.mutable_data()[1] = -1.0f;
  b.mutable_data()[2] = 2.0f;
  Rng rng(13);
  const Tensor logits = fusion_forward({random_tensor({4, 8}, rng), Modality::Audio},
                                       {random_tensor({5, 8}, rng), Modality::Video}, m);
  EXPECT_EQ(std::vector<float>(logits.data().begin(), logits.data().end()), (std::vector<float>{0.5f, -1.0f, 2.0f}));
}

TEST(Fusion, ZeroedOutputProjectionsLeaveOnlyResidualPaths) {
  FusionModelConfig cfg;
  cfg.common_dim = 8;
  cfg.heads = 2;
  FusionModel m = FusionModel::create(cfg, 3);
  for (auto* att : {&m.self_attention, &m.cross_video_query, &m.cross_audio_query}) zero_out(att->w_out);
  Rng rng(14);
  const ModalEmbedding a{random_tensor({4, 8}, rng), Modality::Audio};
  const ModalEmbedding v{random_tensor({5, 8}, rng), Modality::Video};
  const Tensor logits = fusion_forward(a, v, m);
  // Changing the query/key projections cannot matter any more.
  for (auto* att : {&m.self_attention, &m.cross_video_query, &m.cross_audio_query}) {
    for (auto& w : att->w_query) {
      for (float& x : w.mutable_data()) x *= -3.0f;
    }
  }
  const Tensor again = fusion_forward(a, v, m);
  EXPECT_TRUE(std::equal(logits.data().begin(), logits.data().end(), again.data().begin()));
}

TEST(Fusion, GradientReachesAllThreeAttentionBlocks) {
  FusionModelConfig cfg;
  cfg.common_dim = 8;
  cfg.heads = 2;
  const FusionModel m = FusionModel::create(cfg, 4);
  Rng rng(15);
  const Tensor logits = fusion_forward({random_tensor({4, 8}, rng), Modality::Audio},
                                       {random_tensor({5, 8}, rng), Modality::Video}, m);
  sum(mul(logits, Tensor({3}, {1.0f, -2.0f, 0.5f}))).backward();
  for (const auto* att : {&m.self_attention, &m.cross_video_query, &m.cross_audio_query}) {
    std::vector<NamedParam> params;
    att->collect("att", params);
    for (const auto& p : params) {
      ASSERT_TRUE(p.tensor.has_grad()) << p.name;
      const auto g = p.tensor.grad();
      EXPECT_TRUE(std::any_of(g.begin(), g.end(), [](float x) { return x != 0.0f; })) << p.name;
    }
  }
}

TEST(Predict, ArgmaxWithLowestIndexTies) {
  EXPECT_EQ(predict(Tensor({3}, {0.1f, 0.9f, 0.2f})), 1u);
  EXPECT_EQ(predict(Tensor({3}, {0, 0, 0})), 0u);
  EXPECT_EQ(predict(Tensor({3}, {1, 5, 5})), 1u);
  Rng rng(16);
  for (int i = 0; i < 50; ++i) {
    const Tensor l = random_tensor({3}, rng, -5, 5);
    std::vector<float> shifted(l.data().begin(), l.data().end());
    for (float& x : shifted) x += 2.0f;
    EXPECT_EQ(predict(l), predict(Tensor({3}, shifted)));
  }
  EXPECT_THROW(predict(Tensor({3}, {0, NAN, 1})), EvaluationError);
}
