#pragma once

#include <cstddef>
#include <vector>

#include "crossfuse/config.hpp"
#include "crossfuse/params.hpp"
#include "crossfuse/tensor.hpp"

namespace crossfuse {

/// Raw video sample: frames [C x T_total x H x W] with values in [0, 1].
struct VideoClip {
  Tensor frames;
  double frame_rate = 8.0;
};

/// Raw mono waveform [L] with values in [-1, 1].
struct AudioClip {
  Tensor waveform;
  std::size_t sample_rate = 16000;
};

enum class Modality { Audio, Video };

/// Sequence embedding [S x d] in the common fusion space.
struct ModalEmbedding {
  Tensor seq;
  Modality modality;

  std::size_t length() const { return seq.dim(0); }
  std::size_t features() const { return seq.dim(1); }
};

struct ConvLayer {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
};

/// Projection into the common space. The second affine map is only present
/// for the GeLU projection-module variant.
struct Projection {
  Tensor weight;
  Tensor bias;
  Tensor weight2;
  Tensor bias2;

  bool has_gelu_module() const { return weight2.defined(); }
};

struct EncoderParams {
  std::vector<ConvLayer> video_blocks;  // 3x3 conv (padding 1) + ReLU each
  Projection video_projection;
  std::vector<ConvLayer> audio_layers;  // kernel == stride, ReLU each
  Projection audio_projection;

  static EncoderParams init(const FusionModelConfig& cfg, Rng& rng);
  /// Appends every tensor in census order with names prefixed "encoder.".
  void collect(std::vector<NamedParam>& out) const;
};

/// Centre-of-strata indices floor((i + 0.5) * total / count), i = 0..count-1.
std::vector<std::size_t> sample_frame_indices(std::size_t total_frames, std::size_t count);

/// Gathers the sampled frames into [C x count x H x W].
Tensor sample_frames(const VideoClip& clip, std::size_t count = 8);

/// Mean over the temporal axis: [C x T x H x W] -> [C x H x W].
Tensor temporal_mean_pool(const Tensor& frames);

/// Affine map (or affine -> GeLU -> affine for the GeLU module) from [S x F] to [S x d].
Tensor projection_layer(const Tensor& x, const Projection& params, const FusionModelConfig& cfg);

/// [C x H x W] -> [C' x H' x W'] through the video conv blocks.
Tensor video_backbone(const Tensor& image, const std::vector<ConvLayer>& blocks);

ModalEmbedding encode_video(const VideoClip& clip, const EncoderParams& params, const FusionModelConfig& cfg);
ModalEmbedding encode_audio(const AudioClip& clip, const EncoderParams& params, const FusionModelConfig& cfg);

/// Sequence lengths the encoders produce for a given config / waveform length.
std::size_t video_sequence_length(const FusionModelConfig& cfg);
std::size_t audio_sequence_length(const FusionModelConfig& cfg, std::size_t waveform_length);

}  // namespace crossfuse
