#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace crossfuse {

using Json = nlohmann::json;

enum class PoolPlacement { BeforeBackbone, AfterBackbone };

enum class Ablation { Full, VideoOnly, AudioOnly, TwoStage };

std::string to_string(PoolPlacement placement);
std::string to_string(Ablation ablation);
Ablation parse_ablation(const std::string& name);

/// Architecture hyperparameters. Everything that determines the parameter
/// census lives here, so a checkpoint can rebuild its model from this alone.
struct FusionModelConfig {
  std::size_t common_dim = 64;
  std::size_t heads = 4;
  PoolPlacement pool_placement = PoolPlacement::BeforeBackbone;
  bool gelu_projection_module = false;
  // Hidden widths between the LayerNorm and the classifier; empty = direct classifier.
  std::vector<std::size_t> penultimate_dims = {64};
  std::size_t num_classes = 3;
  double layer_norm_eps = 1e-5;

  std::size_t video_channels = 3;
  std::size_t video_height = 32;
  std::size_t video_width = 32;
  std::size_t frames_sampled = 8;
  std::vector<std::size_t> video_backbone_channels = {8, 16, 32};
  std::vector<std::size_t> video_backbone_strides = {1, 2, 2};

  std::size_t sample_rate = 16000;
  std::vector<std::size_t> audio_encoder_channels = {16, 32, 32};
  // Kernel size equals stride for every audio layer.
  std::vector<std::size_t> audio_encoder_strides = {10, 8, 8};

  std::size_t head_dim() const { return common_dim / heads; }
  std::size_t audio_total_stride() const;
  void validate() const;

  bool operator==(const FusionModelConfig&) const = default;
};

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-3;
  double encoder_lr_factor = 1e-2;
  double label_smoothing_eps = 0.2;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool abort_on_nonfinite = false;

  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

/// Contents of a --config file: {"model": {...}, "train": {...}, "ablation": "..."}.
struct RunConfig {
  FusionModelConfig model;
  TrainConfig train;
  Ablation ablation = Ablation::Full;
};

// Parsing is strict: unknown keys and wrong types raise ConfigError.
Json to_json(const FusionModelConfig& cfg);
Json to_json(const TrainConfig& cfg);
Json to_json(const RunConfig& cfg);
FusionModelConfig model_config_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
RunConfig run_config_from_json(const Json& j);

/// Sorted keys, no whitespace.
std::string canonical_json(const Json& j);
/// True for unsigned integers and for signed integers that are >= 0.
inline bool is_non_negative_integer(const Json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}
Json parse_json_text(const std::string& text, const std::string& source);
Json load_json_file(const std::string& path);

}  // namespace crossfuse
