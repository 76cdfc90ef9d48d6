#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "crossfuse/config.hpp"
#include "crossfuse/encoders.hpp"

namespace crossfuse {

/// Generator settings for the synthetic bimodal task. The label is
/// (video_symbol + audio_symbol) mod 3, so neither modality alone predicts it.
struct SynthSpec {
  std::size_t num_train = 300;
  std::size_t num_val = 150;
  std::size_t num_classes = 3;

  std::size_t video_channels = 3;
  std::size_t video_height = 32;
  std::size_t video_width = 32;
  std::size_t video_frames = 40;
  double frame_rate = 8.0;
  // Grating orientations (degrees), one per video symbol.
  std::vector<double> orientations = {0.0, 60.0, 120.0};
  double grating_cycles = 4.0;

  std::size_t audio_length = 16000;
  std::size_t sample_rate = 16000;
  // Carrier frequencies (Hz), one per audio symbol.
  std::vector<double> tone_frequencies = {500.0, 1000.0, 2000.0};

  // Probability that each modality carries an explicit label marker.
  double unimodal_leak = 0.0;
  double noise_sigma = 0.1;
  // Peak amplitude of the label-independent distractor (coarse grating, high tone).
  double distractor_level = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SynthSpec&) const = default;
};

Json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const Json& j);

struct Example {
  VideoClip video;
  AudioClip audio;
  std::size_t label = 0;
  std::size_t video_symbol = 0;
  std::size_t audio_symbol = 0;
};

struct Dataset {
  SynthSpec spec;
  std::vector<Example> train;
  std::vector<Example> val;
};

enum class Split { Train, Val };

/// Pure function of the spec: equal specs give bit-identical datasets.
Dataset generate(const SynthSpec& spec);
/// Exactly balanced label sequence for a split (counts differ by at most one).
std::vector<std::size_t> balanced_labels(const SynthSpec& spec, Split split);

/// Directory layout: manifest.json + ex{idx}_video.cftn / ex{idx}_audio.cftn,
/// train examples first, then validation. Writes into a temp directory and
/// renames it into place.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace crossfuse
