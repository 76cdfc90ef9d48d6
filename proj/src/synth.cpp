#include "crossfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <system_error>

#include "crossfuse/errors.hpp"
#include "crossfuse/random.hpp"
#include "crossfuse/serialize.hpp"

namespace crossfuse {

namespace {

constexpr std::uint64_t kLabelStream = 0x1abe1;
constexpr std::size_t kMarkerSize = 4;
constexpr double kMarkerToneAmplitude = 0.15;
constexpr double kMarkerTones[3] = {3000.0, 3500.0, 4000.0};
constexpr double kDistractorBand[2] = {4500.0, 7000.0};

std::uint64_t split_id(Split split) { return split == Split::Train ? 1 : 2; }

std::size_t split_size(const SynthSpec& spec, Split split) {
  return split == Split::Train ? spec.num_train : spec.num_val;
}

// (label, video symbol) pairs, stratified so every combination is as
// frequent as possible, then shuffled.
std::vector<std::pair<std::size_t, std::size_t>> stratified_pairs(const SynthSpec& spec, Split split) {
  const std::size_t k = spec.num_classes;
  const std::size_t n = split_size(spec, split);
  std::vector<std::pair<std::size_t, std::size_t>> pairs(n);
  for (std::size_t i = 0; i < n; ++i) pairs[i] = {i % k, (i / k) % k};
  Rng rng({spec.seed, kLabelStream, split_id(split)});
  rng.shuffle(pairs);
  return pairs;
}

Tensor render_video(const SynthSpec& spec, std::size_t symbol, std::size_t label, Rng& rng) {
  const std::size_t c = spec.video_channels, t = spec.video_frames, h = spec.video_height, w = spec.video_width;
  const double two_pi = 2.0 * std::numbers::pi;
  auto wave_vector = [&](double theta, double cycles) {
    return std::pair{two_pi * cycles * std::cos(theta) / static_cast<double>(w),
                     two_pi * cycles * std::sin(theta) / static_cast<double>(h)};
  };
  const auto [kx, ky] = wave_vector(spec.orientations[symbol] * std::numbers::pi / 180.0, spec.grating_cycles);
  const double phase0 = rng.uniform(0.0, two_pi);
  // Slow drift across the clip: the grating moves perpendicular to its stripes.
  const double drift = rng.uniform(0.25, 0.5) * std::numbers::pi * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  const double amplitude = rng.uniform(0.25, 0.45);
  const double brightness = rng.uniform(0.4, 0.6);
  std::vector<double> tint(c);
  for (double& v : tint) v = rng.uniform(0.6, 1.0);

  // Coarse distractor grating at a random orientation, independent of the label.
  const auto [dx, dy] = wave_vector(rng.uniform(0.0, std::numbers::pi), rng.uniform(1.0, 2.0));
  const double d_phase = rng.uniform(0.0, two_pi);
  const double d_amplitude = spec.distractor_level * rng.uniform(0.5, 1.0);
  std::vector<double> d_tint(c);
  for (double& v : d_tint) v = rng.uniform(-1.0, 1.0);

  const bool with_marker = spec.unimodal_leak > 0.0;
  std::size_t marker = 0;
  if (with_marker) marker = rng.uniform() < spec.unimodal_leak ? label : rng.below(spec.num_classes);

  std::vector<float> data(c * t * h * w);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ti = 0; ti < t; ++ti) {
      const double phase = phase0 + drift * static_cast<double>(ti) / static_cast<double>(t);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double fx = static_cast<double>(x), fy = static_cast<double>(y);
          double v = brightness + amplitude * tint[ci] * std::sin(kx * fx + ky * fy + phase) +
                     d_amplitude * d_tint[ci] * std::sin(dx * fx + dy * fy + d_phase);
          if (with_marker && y < kMarkerSize && x < kMarkerSize) {
            v = static_cast<double>(marker + 1) / static_cast<double>(spec.num_classes + 1);
          }
          v += spec.noise_sigma * rng.normal();
          data[((ci * t + ti) * h + y) * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return Tensor({c, t, h, w}, std::move(data));
}

Tensor render_audio(const SynthSpec& spec, std::size_t symbol, std::size_t label, Rng& rng) {
  const double two_pi = 2.0 * std::numbers::pi;
  const double sr = static_cast<double>(spec.sample_rate);
  const double freq = spec.tone_frequencies[symbol];
  const double phase = rng.uniform(0.0, two_pi);
  const double amplitude = rng.uniform(0.3, 0.6);
  const double am_rate = rng.uniform(2.0, 6.0);
  const double am_phase = rng.uniform(0.0, two_pi);
  // Distractor tone in a band above every symbol tone, independent of the label.
  const double d_freq = rng.uniform(kDistractorBand[0], kDistractorBand[1]);
  const double d_phase = rng.uniform(0.0, two_pi);
  const double d_amplitude = spec.distractor_level * rng.uniform(0.5, 1.0);

  const bool with_marker = spec.unimodal_leak > 0.0;
  double marker_freq = 0.0;
  if (with_marker) {
    const std::size_t marker = rng.uniform() < spec.unimodal_leak ? label : rng.below(spec.num_classes);
    marker_freq = kMarkerTones[marker % 3];
  }

  std::vector<float> data(spec.audio_length);
  for (std::size_t n = 0; n < data.size(); ++n) {
    const double time = static_cast<double>(n) / sr;
    const double envelope = 0.75 + 0.25 * std::sin(two_pi * am_rate * time + am_phase);
    double v = amplitude * envelope * std::sin(two_pi * freq * time + phase) +
               d_amplitude * std::sin(two_pi * d_freq * time + d_phase);
    if (with_marker) v += kMarkerToneAmplitude * std::sin(two_pi * marker_freq * time);
    v += spec.noise_sigma * rng.normal();
    data[n] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return Tensor({spec.audio_length}, std::move(data));
}

class SpecReader {
 public:
  explicit SpecReader(const Json& j) : j_(j) {
    if (!j.is_object()) throw ConfigError("synth spec: expected a JSON object");
  }
  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    bool ok = false;
    if constexpr (std::is_same_v<T, double>) {
      ok = it->is_number();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      ok = it->is_array() && std::all_of(it->begin(), it->end(), [](const Json& e) { return e.is_number(); });
    } else {
      ok = is_non_negative_integer(*it);
    }
    if (!ok) throw ConfigError(std::string("synth spec: '") + key + "' has the wrong type");
    out = it->get<T>();
  }
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("synth spec: unknown key '" + key + "'");
    }
  }

 private:
  const Json& j_;
  std::set<std::string> seen_;
};

// Every example draws from its own stream keyed by (seed, split, index).
Example make_example(const SynthSpec& spec, Split split, std::size_t index, std::size_t label,
                     std::size_t video_symbol) {
  Rng rng({spec.seed, split_id(split), index});
  Example ex;
  ex.label = label;
  ex.video_symbol = video_symbol;
  ex.audio_symbol = (label + spec.num_classes - video_symbol) % spec.num_classes;
  ex.video = {render_video(spec, ex.video_symbol, label, rng), spec.frame_rate};
  ex.audio = {render_audio(spec, ex.audio_symbol, label, rng), spec.sample_rate};
  return ex;
}

std::string example_file(std::size_t index, const char* modality) {
  return "ex" + std::to_string(index) + "_" + modality + ".cftn";
}

}  // namespace

void SynthSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("synth spec: " + msg); };
  if (num_classes != 3) fail("num_classes must be 3");
  if (num_train + num_val == 0) fail("dataset must not be empty");
  if (video_channels == 0 || video_height == 0 || video_width == 0 || video_frames == 0) {
    fail("video dims must be positive");
  }
  if (orientations.size() != num_classes) fail("need one orientation per class");
  if (tone_frequencies.size() != num_classes) fail("need one tone frequency per class");
  if (audio_length == 0 || sample_rate == 0) fail("audio_length and sample_rate must be positive");
  for (double f : tone_frequencies) {
    if (!(f > 0.0 && f < static_cast<double>(sample_rate) / 2.0)) fail("tone frequencies must lie below Nyquist");
  }
  if (!(unimodal_leak >= 0.0 && unimodal_leak <= 1.0)) fail("unimodal_leak must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be non-negative");
  if (!(distractor_level >= 0.0)) fail("distractor_level must be non-negative");
  if (distractor_level > 0.0 && kDistractorBand[1] >= static_cast<double>(sample_rate) / 2.0) {
    fail("distractor tone band reaches Nyquist; raise sample_rate or set distractor_level to 0");
  }
  if (unimodal_leak > 0.0 && kMarkerTones[2] >= static_cast<double>(sample_rate) / 2.0) {
    fail("marker tones reach Nyquist; raise sample_rate or set unimodal_leak to 0");
  }
  if (!(frame_rate > 0.0)) fail("frame_rate must be positive");
}

Json to_json(const SynthSpec& s) {
  return Json{{"num_train", s.num_train},
              {"num_val", s.num_val},
              {"num_classes", s.num_classes},
              {"video_channels", s.video_channels},
              {"video_height", s.video_height},
              {"video_width", s.video_width},
              {"video_frames", s.video_frames},
              {"frame_rate", s.frame_rate},
              {"orientations", s.orientations},
              {"grating_cycles", s.grating_cycles},
              {"audio_length", s.audio_length},
              {"sample_rate", s.sample_rate},
              {"tone_frequencies", s.tone_frequencies},
              {"unimodal_leak", s.unimodal_leak},
              {"noise_sigma", s.noise_sigma},
              {"distractor_level", s.distractor_level},
              {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const Json& j) {
  SynthSpec s;
  SpecReader r(j);
  r.read("num_train", s.num_train);
  r.read("num_val", s.num_val);
  r.read("num_classes", s.num_classes);
  r.read("video_channels", s.video_channels);
  r.read("video_height", s.video_height);
  r.read("video_width", s.video_width);
  r.read("video_frames", s.video_frames);
  r.read("frame_rate", s.frame_rate);
  r.read("orientations", s.orientations);
  r.read("grating_cycles", s.grating_cycles);
  r.read("audio_length", s.audio_length);
  r.read("sample_rate", s.sample_rate);
  r.read("tone_frequencies", s.tone_frequencies);
  r.read("unimodal_leak", s.unimodal_leak);
  r.read("noise_sigma", s.noise_sigma);
  r.read("distractor_level", s.distractor_level);
  r.read("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

std::vector<std::size_t> balanced_labels(const SynthSpec& spec, Split split) {
  std::vector<std::size_t> labels;
  for (const auto& [label, symbol] : stratified_pairs(spec, split)) labels.push_back(label);
  return labels;
}

Dataset generate(const SynthSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  for (Split split : {Split::Train, Split::Val}) {
    auto& out = split == Split::Train ? ds.train : ds.val;
    const auto pairs = stratified_pairs(spec, split);
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      out.push_back(make_example(spec, split, i, pairs[i].first, pairs[i].second));
    }
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir, ec)) throw IoError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir, ec) && !fs::exists(dir / "manifest.json", ec)) {
      throw IoError(dir.string() + " exists and does not look like a dataset directory; refusing to replace it");
    }
  }
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp, ec);
  if (!fs::create_directories(tmp, ec) || ec) throw IoError("cannot create " + tmp.string());

  Json examples = Json::array();
  std::vector<std::size_t> hist_train(dataset.spec.num_classes, 0), hist_val(dataset.spec.num_classes, 0);
  std::size_t index = 0;
  for (Split split : {Split::Train, Split::Val}) {
    const auto& items = split == Split::Train ? dataset.train : dataset.val;
    auto& hist = split == Split::Train ? hist_train : hist_val;
    for (const auto& ex : items) {
      const std::string video = example_file(index, "video");
      const std::string audio = example_file(index, "audio");
      save_tensor(tmp / video, ex.video.frames);
      save_tensor(tmp / audio, ex.audio.waveform);
      examples.push_back(Json{{"index", index},
                              {"split", split == Split::Train ? "train" : "val"},
                              {"label", ex.label},
                              {"video_symbol", ex.video_symbol},
                              {"audio_symbol", ex.audio_symbol},
                              {"video", video},
                              {"audio", audio}});
      ++hist.at(ex.label);
      ++index;
    }
  }
  const Json manifest{{"format", "crossfuse-dataset"},
                      {"version", 1},
                      {"spec", to_json(dataset.spec)},
                      {"label_histogram", Json{{"train", hist_train}, {"val", hist_val}}},
                      {"examples", examples}};
  write_file_atomic(tmp / "manifest.json", canonical_json(manifest));

  fs::remove_all(dir, ec);
  fs::rename(tmp, dir, ec);
  if (ec) throw IoError("cannot move dataset into " + dir.string() + ": " + ec.message());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("no manifest.json in " + dir.string());
  const Bytes raw = read_file(manifest_path);
  Json manifest;
  try {
    manifest = Json::parse(raw.begin(), raw.end());
  } catch (const Json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.spec = synth_spec_from_json(manifest.at("spec"));
    for (const auto& e : manifest.at("examples")) {
      Example ex;
      ex.label = e.at("label").get<std::size_t>();
      ex.video_symbol = e.at("video_symbol").get<std::size_t>();
      ex.audio_symbol = e.at("audio_symbol").get<std::size_t>();
      if (ex.label >= ds.spec.num_classes) {
        throw FormatError(manifest_path.string() + ": label out of range for example " + e.at("index").dump());
      }
      const fs::path video = dir / e.at("video").get<std::string>();
      const fs::path audio = dir / e.at("audio").get<std::string>();
      ex.video = {load_tensor(video), ds.spec.frame_rate};
      ex.audio = {load_tensor(audio), ds.spec.sample_rate};
      const Shape want_video{ds.spec.video_channels, ds.spec.video_frames, ds.spec.video_height,
                             ds.spec.video_width};
      if (ex.video.frames.shape() != want_video) {
        throw FormatError(video.string() + ": shape " + shape_str(ex.video.frames.shape()) + ", manifest expects " +
                          shape_str(want_video));
      }
      if (ex.audio.waveform.shape() != Shape{ds.spec.audio_length}) {
        throw FormatError(audio.string() + ": shape " + shape_str(ex.audio.waveform.shape()) +
                          " does not match audio_length");
      }
      const std::string split = e.at("split").get<std::string>();
      if (split == "train") {
        ds.train.push_back(std::move(ex));
      } else if (split == "val") {
        ds.val.push_back(std::move(ex));
      } else {
        throw FormatError(manifest_path.string() + ": unknown split '" + split + "'");
      }
    }
  } catch (const Json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace crossfuse
