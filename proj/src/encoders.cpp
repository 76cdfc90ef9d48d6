#include "crossfuse/encoders.hpp"

#include <algorithm>

#include "crossfuse/errors.hpp"
#include "crossfuse/ops.hpp"

namespace crossfuse {

namespace {

constexpr std::size_t kVideoKernel = 3;

Projection init_projection(std::size_t in_features, const FusionModelConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.common_dim;
  Projection p;
  p.weight = uniform_param({in_features, d}, in_features, rng);
  p.bias = zero_param({d});
  if (cfg.gelu_projection_module) {
    p.weight2 = uniform_param({d, d}, d, rng);
    p.bias2 = zero_param({d});
  }
  return p;
}

void collect_projection(const std::string& prefix, const Projection& p, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".weight", p.weight, ParamGroup::Encoder});
  out.push_back({prefix + ".bias", p.bias, ParamGroup::Encoder});
  if (p.has_gelu_module()) {
    out.push_back({prefix + ".weight2", p.weight2, ParamGroup::Encoder});
    out.push_back({prefix + ".bias2", p.bias2, ParamGroup::Encoder});
  }
}

// Flattened spatial/temporal feature map [C' x ...] -> sequence [S x C'].
Tensor to_sequence(const Tensor& features) {
  return transpose_last_two(features.rank() == 3 ? flatten_last_two(features) : features);
}

}  // namespace

EncoderParams EncoderParams::init(const FusionModelConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  std::size_t in_ch = cfg.video_channels;
  for (std::size_t i = 0; i < cfg.video_backbone_channels.size(); ++i) {
    const std::size_t out_ch = cfg.video_backbone_channels[i];
    const std::size_t fan_in = in_ch * kVideoKernel * kVideoKernel;
    p.video_blocks.push_back({uniform_param({out_ch, in_ch, kVideoKernel, kVideoKernel}, fan_in, rng),
                              zero_param({out_ch}), cfg.video_backbone_strides[i]});
    in_ch = out_ch;
  }
  p.video_projection = init_projection(in_ch, cfg, rng);

  in_ch = 1;
  for (std::size_t i = 0; i < cfg.audio_encoder_channels.size(); ++i) {
    const std::size_t out_ch = cfg.audio_encoder_channels[i];
    const std::size_t k = cfg.audio_encoder_strides[i];
    p.audio_layers.push_back({uniform_param({out_ch, in_ch, k}, in_ch * k, rng), zero_param({out_ch}), k});
    in_ch = out_ch;
  }
  p.audio_projection = init_projection(in_ch, cfg, rng);
  return p;
}

void EncoderParams::collect(std::vector<NamedParam>& out) const {
  for (std::size_t i = 0; i < video_blocks.size(); ++i) {
    const std::string prefix = "encoder.video.conv" + std::to_string(i);
    out.push_back({prefix + ".weight", video_blocks[i].weight, ParamGroup::Encoder});
    out.push_back({prefix + ".bias", video_blocks[i].bias, ParamGroup::Encoder});
  }
  collect_projection("encoder.video.proj", video_projection, out);
  for (std::size_t i = 0; i < audio_layers.size(); ++i) {
    const std::string prefix = "encoder.audio.conv" + std::to_string(i);
    out.push_back({prefix + ".weight", audio_layers[i].weight, ParamGroup::Encoder});
    out.push_back({prefix + ".bias", audio_layers[i].bias, ParamGroup::Encoder});
  }
  collect_projection("encoder.audio.proj", audio_projection, out);
}

std::vector<std::size_t> sample_frame_indices(std::size_t total_frames, std::size_t count) {
  if (count == 0) throw ContractError("sample_frames: count must be positive");
  if (total_frames == 0) throw ContractError("sample_frames: clip has no frames");
  std::vector<std::size_t> idx(count);
  // floor((i + 0.5) * T / count) == floor((2i + 1) * T / (2 count)) in exact integer arithmetic
  for (std::size_t i = 0; i < count; ++i) idx[i] = ((2 * i + 1) * total_frames) / (2 * count);
  return idx;
}

Tensor sample_frames(const VideoClip& clip, std::size_t count) {
  const Tensor& f = clip.frames;
  if (f.rank() != 4) throw DimensionError("video frames must be [C x T x H x W], got " + shape_str(f.shape()));
  const std::size_t c = f.dim(0), t = f.dim(1), hw = f.dim(2) * f.dim(3);
  const auto idx = sample_frame_indices(t, count);
  std::vector<float> out(c * count * hw);
  const auto src = f.data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t i = 0; i < count; ++i) {
      std::copy_n(src.data() + (ci * t + idx[i]) * hw, hw, out.data() + (ci * count + i) * hw);
    }
  }
  return Tensor({c, count, f.dim(2), f.dim(3)}, std::move(out));
}

Tensor temporal_mean_pool(const Tensor& frames) {
  if (frames.rank() != 4) {
    throw DimensionError("temporal_mean_pool expects [C x T x H x W], got " + shape_str(frames.shape()));
  }
  return mean(frames, 1);
}

Tensor projection_layer(const Tensor& x, const Projection& params, const FusionModelConfig& cfg) {
  if (x.rank() != 2 || x.dim(1) != params.weight.dim(0)) {
    throw DimensionError("projection_layer: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(params.weight.shape()));
  }
  if (params.has_gelu_module() != cfg.gelu_projection_module) {
    throw ConfigError("projection_layer: parameters do not match gelu_projection_module setting");
  }
  Tensor y = linear(x, params.weight, params.bias);
  if (params.has_gelu_module()) y = linear(gelu(y), params.weight2, params.bias2);
  return y;
}

Tensor video_backbone(const Tensor& image, const std::vector<ConvLayer>& blocks) {
  Tensor x = image;
  for (const auto& block : blocks) x = relu(conv2d(x, block.weight, block.bias, block.stride, 1));
  return x;
}

std::size_t video_sequence_length(const FusionModelConfig& cfg) {
  std::size_t h = cfg.video_height, w = cfg.video_width;
  for (std::size_t s : cfg.video_backbone_strides) {
    h = (h - 1) / s + 1;
    w = (w - 1) / s + 1;
  }
  return h * w;
}

std::size_t audio_sequence_length(const FusionModelConfig& cfg, std::size_t waveform_length) {
  std::size_t len = waveform_length;
  for (std::size_t s : cfg.audio_encoder_strides) {
    if (len < s) return 0;
    len = (len - s) / s + 1;
  }
  return len;
}

ModalEmbedding encode_video(const VideoClip& clip, const EncoderParams& params, const FusionModelConfig& cfg) {
  const Tensor& f = clip.frames;
  if (f.rank() != 4 || f.dim(0) != cfg.video_channels || f.dim(2) != cfg.video_height ||
      f.dim(3) != cfg.video_width) {
    throw ConfigError("encode_video: clip frames " + shape_str(f.shape()) + " do not match configured " +
                      std::to_string(cfg.video_channels) + " channels at " + std::to_string(cfg.video_height) +
                      "x" + std::to_string(cfg.video_width));
  }
  const Tensor sampled = sample_frames(clip, cfg.frames_sampled);
  Tensor features;
  if (cfg.pool_placement == PoolPlacement::BeforeBackbone) {
    features = video_backbone(temporal_mean_pool(sampled), params.video_blocks);
  } else {
    const std::size_t c = sampled.dim(0), t = sampled.dim(1), h = sampled.dim(2), w = sampled.dim(3);
    const std::size_t hw = h * w;
    std::vector<Tensor> per_frame;
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<float> frame(c * hw);
      for (std::size_t ci = 0; ci < c; ++ci) {
        std::copy_n(sampled.data().data() + (ci * t + i) * hw, hw, frame.data() + ci * hw);
      }
      Tensor out = video_backbone(Tensor({c, h, w}, std::move(frame)), params.video_blocks);
      Shape s = out.shape();
      s.insert(s.begin(), 1);
      per_frame.push_back(reshape(out, s));
    }
    features = mean(concat(per_frame, 0), 0);
  }
  return {projection_layer(to_sequence(features), params.video_projection, cfg), Modality::Video};
}

ModalEmbedding encode_audio(const AudioClip& clip, const EncoderParams& params, const FusionModelConfig& cfg) {
  const Tensor& wave = clip.waveform;
  if (wave.rank() != 1) throw DimensionError("audio waveform must be rank 1, got " + shape_str(wave.shape()));
  if (clip.sample_rate != cfg.sample_rate) {
    throw ConfigError("encode_audio: sample rate " + std::to_string(clip.sample_rate) + " Hz, configured " +
                      std::to_string(cfg.sample_rate) + " Hz");
  }
  if (wave.numel() < cfg.audio_total_stride() || audio_sequence_length(cfg, wave.numel()) == 0) {
    throw InputTooShortError("encode_audio: waveform of " + std::to_string(wave.numel()) +
                             " samples is shorter than the total encoder stride " +
                             std::to_string(cfg.audio_total_stride()));
  }
  Tensor x = reshape(wave, {1, wave.numel()});
  for (const auto& layer : params.audio_layers) x = relu(conv1d(x, layer.weight, layer.bias, layer.stride));
  return {projection_layer(to_sequence(x), params.audio_projection, cfg), Modality::Audio};
}

}  // namespace crossfuse
