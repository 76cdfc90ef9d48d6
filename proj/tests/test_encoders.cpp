#include <gtest/gtest.h>

#include <cmath>

#include "crossfuse/encoders.hpp"
#include "crossfuse/errors.hpp"
#include "crossfuse/ops.hpp"
#include "crossfuse/random.hpp"
#include "test_util.hpp"

using namespace crossfuse;

using testutil::random_tensor;

namespace {

VideoClip random_clip(const FusionModelConfig& cfg, std::size_t frames, Rng& rng) {
  return {random_tensor({cfg.video_channels, frames, cfg.video_height, cfg.video_width}, rng, 0.0, 1.0)};
}

std::size_t nonzero(std::span<const float> g) {
  return static_cast<std::size_t>(std::count_if(g.begin(), g.end(), [](float v) { return v != 0.0f; }));
}

}  // namespace

TEST(SampleFrames, CenterOfStrataIndices) {
  EXPECT_EQ(sample_frame_indices(40, 8), (std::vector<std::size_t>{2, 7, 12, 17, 22, 27, 32, 37}));
  EXPECT_EQ(sample_frame_indices(8, 8), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(sample_frame_indices(3, 8), (std::vector<std::size_t>{0, 0, 0, 1, 1, 2, 2, 2}));
  // Brute force against the real-valued formula.
  for (std::size_t t = 1; t < 60; ++t) {
    for (std::size_t c = 1; c < 12; ++c) {
      const auto idx = sample_frame_indices(t, c);
      for (std::size_t i = 0; i < c; ++i) {
        EXPECT_EQ(idx[i], static_cast<std::size_t>(std::floor((i + 0.5L) * t / c)));
      }
    }
  }
}

TEST(SampleFrames, GathersSelectedFrames) {
  std::vector<float> v(2 * 5 * 1 * 1);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(i);
  const Tensor s = sample_frames({Tensor({2, 5, 1, 1}, v)}, 2);
  // T=5, count=2 -> indices 1, 3
  EXPECT_EQ(std::vector<float>(s.data().begin(), s.data().end()), (std::vector<float>{1, 3, 6, 8}));
}

TEST(TemporalMeanPool, Cases) {
  Rng rng(1);
  const Tensor one = random_tensor({3, 1, 2, 2}, rng);
  const Tensor pooled_one = temporal_mean_pool(one);
  EXPECT_EQ(pooled_one.shape(), (Shape{3, 2, 2}));
  EXPECT_TRUE(std::equal(one.data().begin(), one.data().end(), pooled_one.data().begin()));

  std::vector<float> zo(1 * 2 * 2 * 2, 0.0f);
  std::fill(zo.begin() + 4, zo.end(), 1.0f);
  const Tensor half = temporal_mean_pool(Tensor({1, 2, 2, 2}, zo));
  for (float x : half.data()) EXPECT_EQ(x, 0.5f);

  const Tensor x = random_tensor({3, 4, 2, 2}, rng);
  const Tensor p = temporal_mean_pool(x);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t k = 0; k < 4; ++k) {
      double acc = 0.0;
      for (std::size_t t = 0; t < 4; ++t) acc += x.data()[(c * 4 + t) * 4 + k];
      EXPECT_NEAR(p.data()[c * 4 + k], acc / 4.0, 1e-6);
    }
  }
}

TEST(TemporalMeanPool, PermutationInvariant) {
  Rng rng(2);
  const Tensor x = random_tensor({2, 3, 2, 2}, rng);
  std::vector<float> perm(x.numel());
  const std::size_t order[3] = {2, 0, 1};
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t k = 0; k < 4; ++k) perm[(c * 3 + t) * 4 + k] = x.data()[(c * 3 + order[t]) * 4 + k];
    }
  }
  const Tensor a = temporal_mean_pool(x), b = temporal_mean_pool(Tensor(x.shape(), perm));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-6);
}

TEST(EncodeVideo, DefaultShape) {
  const FusionModelConfig cfg;
  Rng rng(3);
  const EncoderParams params = EncoderParams::init(cfg, rng);
  const ModalEmbedding e = encode_video(random_clip(cfg, 40, rng), params, cfg);
  EXPECT_EQ(e.seq.shape(), (Shape{64, 64}));
  EXPECT_EQ(video_sequence_length(cfg), 64u);
  EXPECT_EQ(e.modality, Modality::Video);
}

TEST(EncodeVideo, ResolutionMismatchIsConfigError) {
  const FusionModelConfig cfg;
  Rng rng(3);
  const EncoderParams params = EncoderParams::init(cfg, rng);
  EXPECT_THROW(encode_video({Tensor::zeros({3, 8, 16, 16})}, params, cfg), ConfigError);
}

TEST(EncodeVideo, ZeroInputGivesFiniteEmbeddingAndGradients) {
  const FusionModelConfig cfg;
  Rng rng(4);
  const EncoderParams params = EncoderParams::init(cfg, rng);
  const ModalEmbedding e = encode_video({Tensor::zeros({3, 40, 32, 32})}, params, cfg);
  for (float x : e.seq.data()) EXPECT_TRUE(std::isfinite(x));
  const Tensor target = random_tensor(e.seq.shape(), rng);
  sum(mul(e.seq, target)).backward();
  for (const auto& b : params.video_blocks) {
    ASSERT_TRUE(b.weight.has_grad());
    for (float g : b.weight.grad()) EXPECT_TRUE(std::isfinite(g));
  }
}

TEST(EncodeVideo, RandomInputReachesEveryBackboneWeight) {
  const FusionModelConfig cfg;
  Rng rng(5);
  const EncoderParams params = EncoderParams::init(cfg, rng);
  const ModalEmbedding e = encode_video(random_clip(cfg, 40, rng), params, cfg);
  sum(mul(e.seq, random_tensor(e.seq.shape(), rng))).backward();
  for (const auto& b : params.video_blocks) {
    EXPECT_GT(nonzero(b.weight.grad()), b.weight.numel() / 2);
  }
}

TEST(EncodeVideo, PoolPlacementAgreesOnIdenticalFrames) {
  FusionModelConfig before;
  FusionModelConfig after = before;
  after.pool_placement = PoolPlacement::AfterBackbone;
  Rng rng(6);
  const EncoderParams params = EncoderParams::init(before, rng);
  const Tensor frame = random_tensor({3, 1, 32, 32}, rng, 0.0, 1.0);
  std::vector<float> v(3 * 40 * 32 * 32);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t t = 0; t < 40; ++t) {
      std::copy_n(frame.data().data() + c * 1024, 1024, v.data() + (c * 40 + t) * 1024);
    }
  }
  const VideoClip clip{Tensor({3, 40, 32, 32}, v)};
  const Tensor a = encode_video(clip, params, before).seq, b = encode_video(clip, params, after).seq;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-5);
}

TEST(EncodeVideo, UnsampledFramesDoNotMatter) {
  const FusionModelConfig cfg;
  Rng rng(7);
  const EncoderParams params = EncoderParams::init(cfg, rng);
  const VideoClip clip = random_clip(cfg, 40, rng);
  std::vector<float> v(clip.frames.data().begin(), clip.frames.data().end());
  // Frame 0 is not among the sampled indices for T=40.
  for (std::size_t c = 0; c < 3; ++c) std::fill_n(v.begin() + c * 40 * 1024, 1024, 0.77f);
  const Tensor a = encode_video(clip, params, cfg).seq;
  const Tensor b = encode_video({Tensor(clip.frames.shape(), v)}, params, cfg).seq;
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(EncodeAudio, DefaultShapeAndTooShort) {
  const FusionModelConfig cfg;
  Rng rng(8);
  const EncoderParams params = EncoderParams::init(cfg, rng);
  EXPECT_EQ(cfg.audio_total_stride(), 640u);
  const ModalEmbedding e = encode_audio({random_tensor({16000}, rng)}, params, cfg);
  EXPECT_EQ(e.seq.shape(), (Shape{25, 64}));
  EXPECT_THROW(encode_audio({random_tensor({639}, rng)}, params, cfg), InputTooShortError);
  EXPECT_THROW(encode_audio({random_tensor({16000}, rng), 8000}, params, cfg), ConfigError);
}

TEST(EncodeAudio, SilenceWithZeroBiasesIsZero) {
  const FusionModelConfig cfg;
  Rng rng(9);
  const EncoderParams params = EncoderParams::init(cfg, rng);
  const ModalEmbedding e = encode_audio({Tensor::zeros({16000})}, params, cfg);
  for (float x : e.seq.data()) EXPECT_EQ(x, 0.0f);
}

TEST(EncodeAudio, TinyEncoderGradientMatchesFiniteDifferences) {
  FusionModelConfig cfg;
  cfg.common_dim = 4;
  cfg.heads = 1;
  cfg.audio_encoder_channels = {3, 4};
  cfg.audio_encoder_strides = {4, 4};
  Rng rng(10);
  const EncoderParams params = EncoderParams::init(cfg, rng);
  for (const auto& l : params.audio_layers) {
    Tensor b = l.bias;
    for (float& x : b.mutable_data()) x = 0.05f;  // keep ReLUs away from their kink
  }
  const AudioClip clip{random_tensor({64}, rng)};
  const Tensor target = random_tensor({4, 4}, rng);
  auto loss = [&] { return sum(mul(encode_audio(clip, params, cfg).seq, target)); };
  loss().backward();
  NoGradGuard no_grad;
  std::vector<NamedParam> named;
  params.collect(named);
  for (auto& p : named) {
    if (p.name.find("audio") == std::string::npos) continue;
    Tensor t = p.tensor;
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float saved = data[i];
      data[i] = saved + 1e-3f;
      const double plus = loss().item();
      data[i] = saved - 1e-3f;
      const double minus = loss().item();
      data[i] = saved;
      const double step = double(saved + 1e-3f) - double(saved - 1e-3f);
      const double numeric = (plus - minus) / step, analytic = t.grad()[i];
      EXPECT_LT(std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1.0}), 1e-3)
          << p.name << "[" << i << "]";
    }
  }
}

TEST(Projection, IdentityAndGeluVariant) {
  FusionModelConfig cfg;
  cfg.common_dim = 4;
  cfg.heads = 1;
  Rng rng(11);
  const Tensor x = random_tensor({3, 4}, rng);
  Projection id{Tensor({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}), Tensor::zeros({4}), {}, {}};
  const Tensor y = projection_layer(x, id, cfg);
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));

  cfg.gelu_projection_module = true;
  Projection g{random_tensor({4, 4}, rng), random_tensor({4}, rng), Tensor::zeros({4, 4}), Tensor::zeros({4})};
  const Tensor zeroed = projection_layer(x, g, cfg);
  for (float v : zeroed.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Projection, DefaultIsAffine) {
  FusionModelConfig cfg;
  cfg.common_dim = 5;
  cfg.heads = 1;
  Rng rng(12);
  const Tensor x = random_tensor({3, 6}, rng);
  const Projection p{random_tensor({6, 5}, rng), random_tensor({5}, rng), {}, {}};
  const Tensor y = projection_layer(x, p, cfg);
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = p.bias.data()[j];
      for (std::size_t f = 0; f < 6; ++f) acc += double(x.data()[s * 6 + f]) * p.weight.data()[f * 5 + j];
      EXPECT_NEAR(y.data()[s * 5 + j], acc, 1e-5);
    }
  }
  EXPECT_THROW(projection_layer(random_tensor({3, 7}, rng), p, cfg), DimensionError);
}

TEST(EncoderParams, EveryTensorRequiresGrad) {
  FusionModelConfig cfg;
  cfg.gelu_projection_module = true;
  Rng rng(13);
  std::vector<NamedParam> named;
  EncoderParams::init(cfg, rng).collect(named);
  EXPECT_EQ(named.size(), 2u * 3 + 4 + 2u * 3 + 4);
  for (const auto& p : named) {
    EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
    EXPECT_EQ(p.group, ParamGroup::Encoder);
  }
}
