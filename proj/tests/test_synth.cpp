#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "crossfuse/errors.hpp"
#include "crossfuse/synth.hpp"
#include "test_util.hpp"

using namespace crossfuse;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("crossfuse_synth_" + name);
  fs::remove_all(p);
  return p;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

}  // namespace

TEST(Generate, ExactClassBalance) {
  SynthSpec spec;
  spec.video_frames = 2;
  spec.audio_length = 64;
  const Dataset ds = generate(spec);
  ASSERT_EQ(ds.train.size(), 300u);
  ASSERT_EQ(ds.val.size(), 150u);
  for (const auto* split : {&ds.train, &ds.val}) {
    std::vector<std::size_t> counts(3, 0);
    for (const auto& ex : *split) ++counts[ex.label];
    const std::size_t expect = split->size() / 3;
    EXPECT_EQ(counts, (std::vector<std::size_t>{expect, expect, expect}));
  }
}

TEST(Generate, LabelIsModularSumAndSingleSymbolRulesAreChance) {
  SynthSpec spec = testutil::tiny_spec(297, 0);
  spec.noise_sigma = 0.0;
  const Dataset ds = generate(spec);
  std::size_t sum_rule = 0;
  // Best possible rule that looks at the video symbol only: any map zv -> class.
  std::size_t best_video_rule = 0, best_audio_rule = 0;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t map[3] = {a, b, c};
        std::size_t v_hits = 0, a_hits = 0;
        for (const auto& ex : ds.train) {
          v_hits += map[ex.video_symbol] == ex.label;
          a_hits += map[ex.audio_symbol] == ex.label;
        }
        best_video_rule = std::max(best_video_rule, v_hits);
        best_audio_rule = std::max(best_audio_rule, a_hits);
      }
    }
  }
  for (const auto& ex : ds.train) sum_rule += (ex.video_symbol + ex.audio_symbol) % 3 == ex.label;
  EXPECT_EQ(sum_rule, ds.train.size());
  EXPECT_EQ(best_video_rule * 3, ds.train.size());
  EXPECT_EQ(best_audio_rule * 3, ds.train.size());
}

TEST(Generate, MediaAreClampedAndFinite) {
  SynthSpec spec = testutil::tiny_spec(9, 3);
  spec.noise_sigma = 0.5;
  const Dataset ds = generate(spec);
  for (const auto& ex : ds.train) {
    for (float v : ex.video.frames.data()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
    for (float a : ex.audio.waveform.data()) EXPECT_TRUE(a >= -1.0f && a <= 1.0f);
    EXPECT_EQ(ex.video.frames.shape(), (Shape{3, 6, 8, 8}));
    EXPECT_EQ(ex.audio.waveform.shape(), (Shape{320}));
  }
}

TEST(Generate, PureFunctionOfSpec) {
  const SynthSpec spec = testutil::tiny_spec(9, 3, 42);
  const Dataset a = generate(spec), b = generate(spec);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_TRUE(same_bits(a.train[i].video.frames, b.train[i].video.frames));
    EXPECT_TRUE(same_bits(a.train[i].audio.waveform, b.train[i].audio.waveform));
    EXPECT_EQ(a.train[i].label, b.train[i].label);
  }
  const Dataset c = generate(testutil::tiny_spec(9, 3, 43));
  EXPECT_FALSE(same_bits(a.train[0].audio.waveform, c.train[0].audio.waveform));
}

TEST(Generate, SplitsUseDistinctStreams) {
  const Dataset ds = generate(testutil::tiny_spec(6, 6));
  for (const auto& t : ds.train) {
    for (const auto& v : ds.val) EXPECT_FALSE(same_bits(t.audio.waveform, v.audio.waveform));
  }
}

TEST(Spec, StrictJson) {
  EXPECT_THROW(synth_spec_from_json(Json{{"num_train", 3}, {"bogus", 1}}), ConfigError);
  EXPECT_THROW(synth_spec_from_json(Json{{"num_train", "many"}}), ConfigError);
  EXPECT_THROW(synth_spec_from_json(Json{{"num_train", -3}}), ConfigError);
  EXPECT_THROW(synth_spec_from_json(Json{{"num_train", 2.5}}), ConfigError);
  EXPECT_THROW(synth_spec_from_json(Json{{"unimodal_leak", 1.5}}), ConfigError);
  EXPECT_THROW(synth_spec_from_json(Json{{"num_classes", 4}}), ConfigError);
  EXPECT_THROW(synth_spec_from_json(Json{{"sample_rate", 12000}}), ConfigError);
  EXPECT_NO_THROW(synth_spec_from_json(Json{{"sample_rate", 12000}, {"distractor_level", 0.0}}));
  EXPECT_THROW(synth_spec_from_json(Json{{"sample_rate", 6000}, {"distractor_level", 0.0}, {"unimodal_leak", 0.5}}),
               ConfigError);
  const SynthSpec s = testutil::tiny_spec(3, 3, 9);
  EXPECT_EQ(synth_spec_from_json(to_json(s)), s);
}

TEST(Persistence, RoundTripIsBitExact) {
  const Dataset ds = generate(testutil::tiny_spec(6, 3, 1));
  const fs::path dir = scratch("roundtrip");
  save_dataset(ds, dir);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}), 1 + 2 * 9);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.spec, ds.spec);
  ASSERT_EQ(back.train.size(), 6u);
  ASSERT_EQ(back.val.size(), 3u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_TRUE(same_bits(back.train[i].video.frames, ds.train[i].video.frames));
    EXPECT_TRUE(same_bits(back.train[i].audio.waveform, ds.train[i].audio.waveform));
    EXPECT_EQ(back.train[i].label, ds.train[i].label);
  }
  const Json manifest = Json::parse(std::ifstream(dir / "manifest.json"));
  EXPECT_EQ(manifest["label_histogram"]["train"], Json({2, 2, 2}));
  EXPECT_EQ(manifest["label_histogram"]["val"], Json({1, 1, 1}));
  fs::remove_all(dir);
}

TEST(Persistence, TruncatedFileIsFormatErrorNamingFile) {
  const fs::path dir = scratch("truncated");
  save_dataset(generate(testutil::tiny_spec(3, 0)), dir);
  const fs::path victim = dir / "ex1_audio.cftn";
  fs::resize_file(victim, fs::file_size(victim) - 3);
  try {
    load_dataset(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("ex1_audio.cftn"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Persistence, MissingManifestAndForeignDirectory) {
  const fs::path dir = scratch("foreign");
  fs::create_directories(dir);
  EXPECT_THROW(load_dataset(dir), IoError);
  std::ofstream(dir / "notes.txt") << "keep me";
  EXPECT_THROW(save_dataset(generate(testutil::tiny_spec(3, 0)), dir), IoError);
  EXPECT_TRUE(fs::exists(dir / "notes.txt"));
  fs::remove_all(dir);
}

TEST(Leak, MarkerFollowsLabelWhenLeakIsOne) {
  SynthSpec spec = testutil::tiny_spec(30, 0);
  spec.unimodal_leak = 1.0;
  spec.noise_sigma = 0.0;
  const Dataset ds = generate(spec);
  for (const auto& ex : ds.train) {
    // Top-left marker pixel encodes (label + 1) / 4 when the marker is always truthful.
    EXPECT_FLOAT_EQ(ex.video.frames.data()[0], float(ex.label + 1) / 4.0f);
  }
}
