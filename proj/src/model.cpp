#include "crossfuse/model.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <string_view>

#include "crossfuse/ops.hpp"

namespace crossfuse {

namespace {

constexpr char kCheckpointMagic[4] = {'C', 'F', 'C', 'K'};
constexpr std::uint8_t kCheckpointVersion = 1;
constexpr std::uint64_t kInitStream = 0x5eed'0001;

}  // namespace

FusionModel FusionModel::create(const FusionModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng({seed, kInitStream});
  FusionModel m;
  m.config = config;
  m.encoders = EncoderParams::init(config, rng);
  const std::size_t d = config.common_dim;
  m.self_attention = AttentionParams::init(d, config.heads, rng);
  m.cross_video_query = AttentionParams::init(d, config.heads, rng);
  m.cross_audio_query = AttentionParams::init(d, config.heads, rng);
  m.norm_gain = Tensor::full({3 * d}, 1.0f, true);
  m.norm_bias = zero_param({3 * d});
  std::size_t in = 3 * d;
  for (std::size_t width : config.penultimate_dims) {
    m.head.push_back({uniform_param({in, width}, in, rng), zero_param({width})});
    in = width;
  }
  m.head.push_back({uniform_param({in, config.num_classes}, in, rng), zero_param({config.num_classes})});
  return m;
}

std::vector<NamedParam> FusionModel::parameters() const {
  std::vector<NamedParam> out;
  encoders.collect(out);
  self_attention.collect("fusion.self", out);
  cross_video_query.collect("fusion.cross_video_query", out);
  cross_audio_query.collect("fusion.cross_audio_query", out);
  out.push_back({"fusion.norm.gain", norm_gain, ParamGroup::Fusion});
  out.push_back({"fusion.norm.bias", norm_bias, ParamGroup::Fusion});
  for (std::size_t i = 0; i < head.size(); ++i) {
    const std::string prefix = "fusion.head" + std::to_string(i);
    out.push_back({prefix + ".weight", head[i].weight, ParamGroup::Fusion});
    out.push_back({prefix + ".bias", head[i].bias, ParamGroup::Fusion});
  }
  return out;
}

std::size_t FusionModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

FusionModel FusionModel::clone() const {
  FusionModel copy = create(config, 0);
  const auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.mutable_data().begin());
  }
  return copy;
}

void FusionModel::zero_grad() const {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

Tensor fusion_forward(const ModalEmbedding& a_emb, const ModalEmbedding& v_emb, const FusionModel& model,
                      AttentionTrace* trace) {
  const std::size_t d = model.config.common_dim;
  if (a_emb.seq.rank() != 2 || v_emb.seq.rank() != 2 || a_emb.features() != d || v_emb.features() != d) {
    throw DimensionError("fusion_forward: embeddings " + shape_str(a_emb.seq.shape()) + " / " +
                         shape_str(v_emb.seq.shape()) + " must have feature size " + std::to_string(d));
  }
  const Tensor fused = self_attention_block(a_emb, v_emb, model.self_attention, trace);
  const Tensor video_ctx = cross_attention_block(v_emb, a_emb, model.cross_video_query, trace);
  const Tensor audio_ctx = cross_attention_block(a_emb, v_emb, model.cross_audio_query, trace);

  Tensor x = concat<float>({mean(fused, 0), mean(video_ctx, 0), mean(audio_ctx, 0)}, 0);
  x = layer_norm(reshape(x, {1, 3 * d}), model.norm_gain, model.norm_bias,
                 static_cast<float>(model.config.layer_norm_eps));
  for (std::size_t i = 0; i + 1 < model.head.size(); ++i) x = relu(linear(x, model.head[i].weight, model.head[i].bias));
  x = linear(x, model.head.back().weight, model.head.back().bias);
  return reshape(x, {model.config.num_classes});
}

Tensor forward_sample(const FusionModel& model, const VideoClip& video, const AudioClip& audio, Ablation ablation,
                      AttentionTrace* trace) {
  const auto& cfg = model.config;
  ModalEmbedding v_emb = ablation == Ablation::AudioOnly
                             ? ModalEmbedding{Tensor::zeros({video_sequence_length(cfg), cfg.common_dim}),
                                              Modality::Video}
                             : encode_video(video, model.encoders, cfg);
  ModalEmbedding a_emb =
      ablation == Ablation::VideoOnly
          ? ModalEmbedding{Tensor::zeros({audio_sequence_length(cfg, audio.waveform.numel()), cfg.common_dim}),
                           Modality::Audio}
          : encode_audio(audio, model.encoders, cfg);
  return fusion_forward(a_emb, v_emb, model, trace);
}

std::size_t predict(const Tensor& logits) {
  const auto v = logits.data();
  if (v.empty()) throw EvaluationError("predict: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw EvaluationError("predict: non-finite logit at index " + std::to_string(i));
    if (v[i] > v[best]) best = i;
  }
  return best;
}

Bytes encode_checkpoint(const FusionModel& model) {
  Bytes out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  out.push_back(kCheckpointVersion);
  const std::string cfg = canonical_json(to_json(model.config));
  append_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  const auto params = model.parameters();
  append_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    append_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    append_tensor(out, p.tensor);
  }
  return out;
}

FusionModel decode_checkpoint(const Bytes& bytes, const std::string& source) {
  ByteReader r(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), source);
  if (r.read_string(4) != std::string_view(kCheckpointMagic, 4)) r.fail("bad checkpoint magic");
  const std::uint8_t version = r.read_u8();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t cfg_len = r.read_u32();
  if (cfg_len > r.remaining()) r.fail("truncated config header");
  FusionModelConfig cfg;
  try {
    cfg = model_config_from_json(parse_json_text(r.read_string(cfg_len), source));
  } catch (const ConfigError& e) {
    r.fail(std::string("embedded config rejected: ") + e.what());
  }
  FusionModel model = FusionModel::create(cfg, 0);
  auto params = model.parameters();
  const std::uint32_t count = r.read_u32();
  for (std::size_t i = 0; i < std::min<std::size_t>(count, params.size()); ++i) {
    const std::uint32_t name_len = r.read_u32();
    if (name_len > r.remaining()) r.fail("truncated tensor name");
    const std::string name = r.read_string(name_len);
    if (name != params[i].name) {
      throw CheckpointMismatchError(params[i].name, "expected at position " + std::to_string(i) + ", found '" + name + "'");
    }
    const Tensor stored = r.read_tensor();
    if (stored.shape() != params[i].tensor.shape()) {
      throw CheckpointMismatchError(name, "stored shape " + shape_str(stored.shape()) + ", model expects " +
                                              shape_str(params[i].tensor.shape()));
    }
    std::copy(stored.data().begin(), stored.data().end(), params[i].tensor.mutable_data().begin());
  }
  if (count < params.size()) throw CheckpointMismatchError(params[count].name, "missing from checkpoint");
  if (count > params.size()) r.fail("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                                    std::to_string(params.size()));
  if (!r.at_end()) r.fail("trailing bytes after last tensor");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const FusionModel& model) {
  write_file_atomic(path, encode_checkpoint(model));
}

FusionModel load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

FusionModel load_checkpoint(const std::filesystem::path& path, const FusionModelConfig& expected) {
  FusionModel loaded = load_checkpoint(path);
  if (loaded.config == expected) return loaded;
  const auto want = FusionModel::create(expected, 0).parameters();
  const auto have = loaded.parameters();
  for (std::size_t i = 0; i < std::max(want.size(), have.size()); ++i) {
    if (i >= have.size()) throw CheckpointMismatchError(want[i].name, "missing from checkpoint");
    if (i >= want.size()) throw CheckpointMismatchError(have[i].name, "not part of the configured model");
    if (want[i].name != have[i].name) {
      throw CheckpointMismatchError(want[i].name, "checkpoint has '" + have[i].name + "' at this position");
    }
    if (want[i].tensor.shape() != have[i].tensor.shape()) {
      throw CheckpointMismatchError(want[i].name, "stored shape " + shape_str(have[i].tensor.shape()) +
                                                      ", config expects " + shape_str(want[i].tensor.shape()));
    }
  }
  throw ConfigError("checkpoint config differs from the supplied config (same tensor census): stored " +
                    canonical_json(to_json(loaded.config)));
}

}  // namespace crossfuse
