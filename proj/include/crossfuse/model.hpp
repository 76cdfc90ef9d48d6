#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crossfuse/attention.hpp"
#include "crossfuse/config.hpp"
#include "crossfuse/encoders.hpp"
#include "crossfuse/errors.hpp"
#include "crossfuse/serialize.hpp"

namespace crossfuse {

struct DenseLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

/// Encoders, the three attention blocks (self, video-queries-audio,
/// audio-queries-video), one LayerNorm and the projection head.
struct FusionModel {
  FusionModelConfig config;
  EncoderParams encoders;
  AttentionParams self_attention;
  AttentionParams cross_video_query;  // Q = video, K = V = audio
  AttentionParams cross_audio_query;  // Q = audio, K = V = video
  Tensor norm_gain;
  Tensor norm_bias;
  std::vector<DenseLayer> head;  // penultimate projections, then classifier

  /// Fresh model; weights uniform(+-1/sqrt(fan_in)), zero biases, unit LayerNorm gain.
  static FusionModel create(const FusionModelConfig& config, std::uint64_t seed);

  /// Every trainable tensor in the fixed census order used by checkpoints.
  std::vector<NamedParam> parameters() const;
  std::size_t parameter_count() const;
  /// Deep copy with its own parameter storage.
  FusionModel clone() const;
  void zero_grad() const;
};

/// Three d-vectors (self, video-query cross, audio-query cross) mean-pooled
/// over their sequences, concatenated, LayerNorm'ed and classified.
Tensor fusion_forward(const ModalEmbedding& a_emb, const ModalEmbedding& v_emb, const FusionModel& model,
                      AttentionTrace* trace = nullptr);

/// Encode both modalities and classify one sample. Unimodal ablations replace
/// the dropped branch with a zero embedding of the shape it would have had.
Tensor forward_sample(const FusionModel& model, const VideoClip& video, const AudioClip& audio,
                      Ablation ablation = Ablation::Full, AttentionTrace* trace = nullptr);

/// Argmax with ties going to the lowest index.
std::size_t predict(const Tensor& logits);

/// A checkpoint tensor is missing or has the wrong shape for the model config.
class CheckpointMismatchError : public ConfigError {
 public:
  CheckpointMismatchError(const std::string& tensor, const std::string& what)
      : ConfigError("checkpoint tensor '" + tensor + "': " + what), tensor_(tensor) {}
  const std::string& tensor() const noexcept { return tensor_; }

 private:
  std::string tensor_;
};

/// Checkpoint layout ("CFCK"):
///   4 bytes magic "CFCK", u8 version (1)
///   u32 length + canonical JSON of the FusionModelConfig
///   u32 tensor count, then per tensor: u32 name length, name, CFTN record
/// Tensors appear in FusionModel::parameters() order.
Bytes encode_checkpoint(const FusionModel& model);
FusionModel decode_checkpoint(const Bytes& bytes, const std::string& source);
void save_checkpoint(const std::filesystem::path& path, const FusionModel& model);
FusionModel load_checkpoint(const std::filesystem::path& path);
/// Loads tensors into a model built from `expected`; the stored config must agree.
FusionModel load_checkpoint(const std::filesystem::path& path, const FusionModelConfig& expected);

}  // namespace crossfuse
