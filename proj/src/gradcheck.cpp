#include "crossfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "crossfuse/errors.hpp"
#include "crossfuse/model.hpp"
#include "crossfuse/ops.hpp"
#include "crossfuse/random.hpp"
#include "crossfuse/training.hpp"

namespace crossfuse::gradcheck {

namespace {

struct OpCase {
  std::vector<Shape> shapes;
  // Keep inputs at least this far from zero (ops with a kink at 0).
  double min_magnitude = 0.0;
};

const std::vector<std::string>& op_names() {
  static const std::vector<std::string> names = {
      "matmul",  "linear",           "add",        "sub",        "mul",     "scale",     "relu",
      "gelu",    "sum",              "mean",       "concat",     "reshape", "flatten_last_two",
      "transpose_last_two", "softmax", "log_softmax", "layer_norm", "conv2d", "conv1d"};
  return names;
}

OpCase op_case(const std::string& op) {
  if (op == "matmul") return {{{3, 4}, {4, 2}}};
  if (op == "linear") return {{{3, 4}, {4, 5}, {5}}};
  if (op == "add" || op == "sub" || op == "mul") return {{{2, 3}, {2, 3}}};
  if (op == "scale" || op == "sum") return {{{2, 3}}};
  if (op == "relu" || op == "gelu") return {{{2, 5}}, 0.1};
  if (op == "mean") return {{{2, 3, 4}}};
  if (op == "concat") return {{{2, 3}, {2, 2}}};
  if (op == "reshape") return {{{2, 6}}};
  if (op == "flatten_last_two" || op == "transpose_last_two") return {{{2, 3, 4}}};
  if (op == "softmax" || op == "log_softmax") return {{{3, 4}}};
  if (op == "layer_norm") return {{{3, 5}, {5}, {5}}};
  if (op == "conv2d") return {{{2, 5, 5}, {3, 2, 3, 3}, {3}}};
  if (op == "conv1d") return {{{2, 12}, {3, 2, 3}, {3}}};
  throw ConfigError("gradcheck: unknown op '" + op + "'");
}

template <typename T>
BasicTensor<T> apply_op(const std::string& op, const std::vector<BasicTensor<T>>& in) {
  if (op == "matmul") return matmul(in[0], in[1]);
  if (op == "linear") return linear(in[0], in[1], in[2]);
  if (op == "add") return add(in[0], in[1]);
  if (op == "sub") return sub(in[0], in[1]);
  if (op == "mul") return mul(in[0], in[1]);
  if (op == "scale") return scale(in[0], T(1.7));
  if (op == "relu") return relu(in[0]);
  if (op == "gelu") return gelu(in[0]);
  if (op == "sum") return sum(in[0]);
  if (op == "mean") return mean(in[0], 1);
  if (op == "concat") return concat(in, 1);
  if (op == "reshape") return reshape(in[0], {3, 4});
  if (op == "flatten_last_two") return flatten_last_two(in[0]);
  if (op == "transpose_last_two") return transpose_last_two(in[0]);
  if (op == "softmax") return softmax(in[0]);
  if (op == "log_softmax") return log_softmax(in[0]);
  if (op == "layer_norm") return layer_norm(in[0], in[1], in[2], T(1e-5));
  if (op == "conv2d") return conv2d(in[0], in[1], in[2], 2, 1);
  if (op == "conv1d") return conv1d(in[0], in[1], in[2], 2);
  throw ConfigError("gradcheck: unknown op '" + op + "'");
}

std::uint64_t name_key(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

// Weighted sum of the op output accumulated in long double.
template <typename T>
long double weighted_value(const BasicTensor<T>& out, const std::vector<double>& weights) {
  long double acc = 0.0L;
  const auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) acc += static_cast<long double>(weights[i]) * d[i];
  return acc;
}

template <typename T>
OpResult check_op(const std::string& op, const std::vector<std::vector<double>>& values, const OpCase& c,
                  double step, double tolerance, std::uint64_t seed, bool corrupt) {
  std::vector<BasicTensor<T>> inputs;
  for (std::size_t i = 0; i < values.size(); ++i) {
    inputs.emplace_back(c.shapes[i], std::vector<T>(values[i].begin(), values[i].end()), true);
  }
  const BasicTensor<T> out = apply_op(op, inputs);
  Rng wrng({seed, name_key(op), 2});
  std::vector<double> weights(out.numel());
  for (double& w : weights) w = wrng.uniform(-1.0, 1.0);

  const BasicTensor<T> w_tensor(out.shape(), std::vector<T>(weights.begin(), weights.end()));
  sum(mul(w_tensor, out)).backward();

  OpResult r{op, sizeof(T) == 4 ? "f32" : "f64", 0, 0.0, tolerance};
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& x = inputs[i];
    std::vector<double> analytic(x.grad().begin(), x.grad().end());
    if (corrupt && i == 0) analytic[0] += 0.1 * (1.0 + std::abs(analytic[0]));
    auto data = x.mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const T saved = data[j];
      data[j] = saved + static_cast<T>(step);
      const long double plus = weighted_value(apply_op(op, inputs), weights);
      data[j] = saved - static_cast<T>(step);
      const long double minus = weighted_value(apply_op(op, inputs), weights);
      data[j] = saved;
      // Use the step actually representable in T.
      const long double actual = static_cast<long double>(static_cast<T>(saved + static_cast<T>(step))) -
                                 static_cast<long double>(static_cast<T>(saved - static_cast<T>(step)));
      const double numeric = static_cast<double>((plus - minus) / actual);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[j], numeric));
      ++r.coordinates;
    }
  }
  return r;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1.0});
  const double err = std::abs(analytic - numeric) / denom;
  return std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
}

std::vector<std::string> primitive_ops() { return op_names(); }

std::vector<OpResult> check_primitives(const std::vector<std::string>& ops, const Tolerances& tol, std::uint64_t seed,
                                       const std::string& corrupt_op) {
  std::vector<OpResult> results;
  for (const auto& op : ops) {
    const OpCase c = op_case(op);
    Rng rng({seed, name_key(op), 1});
    std::vector<std::vector<double>> values;
    for (const auto& shape : c.shapes) {
      std::vector<double> v(shape_numel(shape));
      for (double& x : v) {
        x = rng.uniform(-1.0, 1.0);
        if (c.min_magnitude > 0.0) x = std::copysign(c.min_magnitude + (1.0 - c.min_magnitude) * std::abs(x), x);
      }
      values.push_back(std::move(v));
    }
    const bool corrupt = op == corrupt_op;
    results.push_back(check_op<float>(op, values, c, tol.step_f32, tol.tol_f32, seed, corrupt));
    results.push_back(check_op<double>(op, values, c, tol.step_f64, tol.tol_f64, seed, corrupt));
  }
  return results;
}

FusionModelConfig tiny_model_config() {
  FusionModelConfig cfg;
  cfg.common_dim = 8;
  cfg.heads = 2;
  cfg.penultimate_dims = {8};
  cfg.video_height = 8;
  cfg.video_width = 8;
  cfg.frames_sampled = 4;
  cfg.video_backbone_channels = {4, 6};
  cfg.video_backbone_strides = {1, 2};
  cfg.audio_encoder_channels = {4, 6};
  cfg.audio_encoder_strides = {4, 4};
  return cfg;
}

OpResult check_model(const FusionModelConfig& cfg, std::size_t coords_per_tensor, const Tolerances& tol,
                     std::uint64_t seed, bool corrupt) {
  cfg.validate();
  FusionModel model = FusionModel::create(cfg, seed);
  Rng rng({seed, 0x9cec});
  // Two random samples so the loss couples both batch rows.
  struct Sample {
    VideoClip video;
    AudioClip audio;
    std::size_t label;
  };
  std::vector<Sample> samples;
  const std::size_t frames = cfg.frames_sampled + 2;
  const std::size_t audio_len = cfg.audio_total_stride() * 4;
  for (std::size_t s = 0; s < 2; ++s) {
    std::vector<float> pixels(cfg.video_channels * frames * cfg.video_height * cfg.video_width);
    for (float& p : pixels) p = static_cast<float>(rng.uniform());
    std::vector<float> wave(audio_len);
    for (float& a : wave) a = static_cast<float>(rng.uniform(-1.0, 1.0));
    samples.push_back({{Tensor({cfg.video_channels, frames, cfg.video_height, cfg.video_width}, std::move(pixels))},
                       {Tensor({audio_len}, std::move(wave)), cfg.sample_rate},
                       static_cast<std::size_t>(rng.below(cfg.num_classes))});
  }
  auto loss_fn = [&]() {
    std::vector<Tensor> rows;
    std::vector<std::size_t> labels;
    for (const auto& s : samples) {
      rows.push_back(reshape(forward_sample(model, s.video, s.audio), {1, cfg.num_classes}));
      labels.push_back(s.label);
    }
    return label_smooth_ce(concat(rows, 0), labels, 0.2f);
  };

  loss_fn().backward();
  OpResult r{"whole_model", "f32", 0, 0.0, tol.tol_model};
  NoGradGuard no_grad;
  bool corrupted = false;
  for (auto& p : model.parameters()) {
    Tensor t = p.tensor;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    const bool corrupt_here = corrupt && !corrupted;
    if (corrupt_here) {
      analytic[0] += 0.1 * (1.0 + std::abs(analytic[0]));
      corrupted = true;
    }
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(coords_per_tensor);
      if (corrupt_here && std::find(coords.begin(), coords.end(), 0) == coords.end()) coords[0] = 0;
    }
    auto data = t.mutable_data();
    for (std::size_t j : coords) {
      const float saved = data[j];
      data[j] = saved + static_cast<float>(tol.step_model);
      const double plus = loss_fn().item();
      data[j] = saved - static_cast<float>(tol.step_model);
      const double minus = loss_fn().item();
      data[j] = saved;
      const double actual = static_cast<double>(saved + static_cast<float>(tol.step_model)) -
                            static_cast<double>(saved - static_cast<float>(tol.step_model));
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[j], (plus - minus) / actual));
      ++r.coordinates;
    }
  }
  return r;
}

}  // namespace crossfuse::gradcheck
