#include "crossfuse/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "crossfuse/errors.hpp"

namespace crossfuse {

std::string to_string(PoolPlacement placement) {
  return placement == PoolPlacement::BeforeBackbone ? "before_backbone" : "after_backbone";
}

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::Full: return "full";
    case Ablation::VideoOnly: return "video_only";
    case Ablation::AudioOnly: return "audio_only";
    case Ablation::TwoStage: return "two_stage";
  }
  return "full";
}

Ablation parse_ablation(const std::string& name) {
  if (name == "full") return Ablation::Full;
  if (name == "video_only") return Ablation::VideoOnly;
  if (name == "audio_only") return Ablation::AudioOnly;
  if (name == "two_stage") return Ablation::TwoStage;
  throw ConfigError("unknown ablation '" + name + "' (expected full, video_only, audio_only, two_stage)");
}

namespace {

static_assert(std::is_same_v<std::uint64_t, unsigned long> || std::is_same_v<std::uint64_t, std::size_t>);

// Reads known keys out of a JSON object and rejects anything left over.
class StrictObject {
 public:
  StrictObject(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  void read(const char* key, std::size_t& out) {
    if (const Json* v = take(key)) {
      if (!is_non_negative_integer(*v)) throw type_error(key, "a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const char* key, double& out) {
    if (const Json* v = take(key)) {
      if (!v->is_number()) throw type_error(key, "a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, bool& out) {
    if (const Json* v = take(key)) {
      if (!v->is_boolean()) throw type_error(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const Json* v = take(key)) {
      if (!v->is_string()) throw type_error(key, "a string");
      out = v->get<std::string>();
    }
  }
  void read(const char* key, std::vector<std::size_t>& out) {
    if (const Json* v = take(key)) {
      if (!v->is_array()) throw type_error(key, "an array of non-negative integers");
      std::vector<std::size_t> values;
      for (const auto& e : *v) {
        if (!is_non_negative_integer(e)) throw type_error(key, "an array of non-negative integers");
        values.push_back(e.get<std::size_t>());
      }
      out = std::move(values);
    }
  }
  const Json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  ConfigError type_error(const char* key, const char* expected) const {
    return ConfigError(where_ + ": '" + key + "' must be " + expected);
  }

  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

std::size_t FusionModelConfig::audio_total_stride() const {
  std::size_t total = 1;
  for (std::size_t s : audio_encoder_strides) total *= s;
  return total;
}

void FusionModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (common_dim == 0) fail("common_dim must be positive");
  if (heads == 0 || common_dim % heads != 0) {
    fail("common_dim " + std::to_string(common_dim) + " is not divisible by heads " + std::to_string(heads));
  }
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
  for (std::size_t d : penultimate_dims) {
    if (d == 0) fail("penultimate_dims entries must be positive");
  }
  if (video_channels == 0 || video_height == 0 || video_width == 0) fail("video input dims must be positive");
  if (frames_sampled == 0) fail("frames_sampled must be positive");
  if (video_backbone_channels.empty()) fail("video backbone needs at least one block");
  if (video_backbone_channels.size() != video_backbone_strides.size()) {
    fail("video_backbone_channels and video_backbone_strides differ in length");
  }
  std::size_t h = video_height, w = video_width;
  for (std::size_t i = 0; i < video_backbone_channels.size(); ++i) {
    if (video_backbone_channels[i] == 0 || video_backbone_strides[i] == 0) {
      fail("video backbone channels/strides must be positive");
    }
    // 3x3 kernel, padding 1
    h = (h - 1) / video_backbone_strides[i] + 1;
    w = (w - 1) / video_backbone_strides[i] + 1;
  }
  if (audio_encoder_channels.empty()) fail("audio encoder needs at least one layer");
  if (audio_encoder_channels.size() != audio_encoder_strides.size()) {
    fail("audio_encoder_channels and audio_encoder_strides differ in length");
  }
  for (std::size_t i = 0; i < audio_encoder_channels.size(); ++i) {
    if (audio_encoder_channels[i] == 0 || audio_encoder_strides[i] == 0) {
      fail("audio encoder channels/strides must be positive");
    }
  }
  if (sample_rate == 0) fail("sample_rate must be positive");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (!(lr >= 0.0)) fail("lr must be non-negative");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(encoder_lr_factor >= 0.0)) fail("encoder_lr_factor must be non-negative");
  if (!(label_smoothing_eps >= 0.0 && label_smoothing_eps < 1.0)) fail("label_smoothing_eps must lie in [0, 1)");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
}

Json to_json(const FusionModelConfig& c) {
  return Json{{"common_dim", c.common_dim},
              {"heads", c.heads},
              {"pool_placement", to_string(c.pool_placement)},
              {"gelu_projection_module", c.gelu_projection_module},
              {"penultimate_dims", c.penultimate_dims},
              {"num_classes", c.num_classes},
              {"layer_norm_eps", c.layer_norm_eps},
              {"video_channels", c.video_channels},
              {"video_height", c.video_height},
              {"video_width", c.video_width},
              {"frames_sampled", c.frames_sampled},
              {"video_backbone_channels", c.video_backbone_channels},
              {"video_backbone_strides", c.video_backbone_strides},
              {"sample_rate", c.sample_rate},
              {"audio_encoder_channels", c.audio_encoder_channels},
              {"audio_encoder_strides", c.audio_encoder_strides}};
}

Json to_json(const TrainConfig& c) {
  return Json{{"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"encoder_lr_factor", c.encoder_lr_factor},
              {"label_smoothing_eps", c.label_smoothing_eps},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"abort_on_nonfinite", c.abort_on_nonfinite}};
}

Json to_json(const RunConfig& c) {
  return Json{{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"ablation", to_string(c.ablation)}};
}

FusionModelConfig model_config_from_json(const Json& j) {
  FusionModelConfig c;
  StrictObject o(j, "model config");
  o.read("common_dim", c.common_dim);
  c.penultimate_dims = {c.common_dim};
  o.read("heads", c.heads);
  std::string placement = to_string(c.pool_placement);
  o.read("pool_placement", placement);
  if (placement == "before_backbone") {
    c.pool_placement = PoolPlacement::BeforeBackbone;
  } else if (placement == "after_backbone") {
    c.pool_placement = PoolPlacement::AfterBackbone;
  } else {
    throw ConfigError("model config: pool_placement must be before_backbone or after_backbone");
  }
  o.read("gelu_projection_module", c.gelu_projection_module);
  o.read("penultimate_dims", c.penultimate_dims);
  o.read("num_classes", c.num_classes);
  o.read("layer_norm_eps", c.layer_norm_eps);
  o.read("video_channels", c.video_channels);
  o.read("video_height", c.video_height);
  o.read("video_width", c.video_width);
  o.read("frames_sampled", c.frames_sampled);
  o.read("video_backbone_channels", c.video_backbone_channels);
  o.read("video_backbone_strides", c.video_backbone_strides);
  o.read("sample_rate", c.sample_rate);
  o.read("audio_encoder_channels", c.audio_encoder_channels);
  o.read("audio_encoder_strides", c.audio_encoder_strides);
  o.finish();
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  StrictObject o(j, "train config");
  o.read("lr", c.lr);
  o.read("weight_decay", c.weight_decay);
  o.read("encoder_lr_factor", c.encoder_lr_factor);
  o.read("label_smoothing_eps", c.label_smoothing_eps);
  o.read("batch_size", c.batch_size);
  o.read("epochs", c.epochs);
  o.read("seed", c.seed);
  o.read("adam_beta1", c.adam_beta1);
  o.read("adam_beta2", c.adam_beta2);
  o.read("adam_eps", c.adam_eps);
  o.read("abort_on_nonfinite", c.abort_on_nonfinite);
  o.finish();
  c.validate();
  return c;
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  StrictObject o(j, "run config");
  if (const Json* m = o.take("model")) c.model = model_config_from_json(*m);
  if (const Json* t = o.take("train")) c.train = train_config_from_json(*t);
  std::string ablation = to_string(c.ablation);
  o.read("ablation", ablation);
  c.ablation = parse_ablation(ablation);
  o.finish();
  return c;
}

std::string canonical_json(const Json& j) { return j.dump(); }

Json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(source + ": invalid JSON: " + e.what());
  }
}

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path);
}

}  // namespace crossfuse
