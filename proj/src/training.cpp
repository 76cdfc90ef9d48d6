#include "crossfuse/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "crossfuse/errors.hpp"
#include "crossfuse/ops.hpp"
#include "crossfuse/random.hpp"

namespace crossfuse {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5b0ff1e;

struct CachedEmbeddings {
  ModalEmbedding audio;
  ModalEmbedding video;
};

std::vector<CachedEmbeddings> encode_all(const FusionModel& model, std::span<const Example> examples) {
  NoGradGuard no_grad;
  std::vector<CachedEmbeddings> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    out.push_back({encode_audio(ex.audio, model.encoders, model.config),
                   encode_video(ex.video, model.encoders, model.config)});
  }
  return out;
}

std::vector<std::size_t> labels_of(std::span<const Example> examples) {
  std::vector<std::size_t> labels;
  labels.reserve(examples.size());
  for (const auto& ex : examples) labels.push_back(ex.label);
  return labels;
}

}  // namespace

Tensor label_smooth_ce(const Tensor& logits, std::span<const std::size_t> labels, float eps) {
  if (logits.rank() != 2) throw DimensionError("label_smooth_ce: logits must be [B x K], got " + shape_str(logits.shape()));
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("label_smooth_ce: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  }
  if (!(eps >= 0.0f && eps < 1.0f)) throw ContractError("label_smooth_ce: eps must lie in [0, 1)");
  std::vector<float> target(batch * k, eps / static_cast<float>(k));
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] >= k) {
      throw ContractError("label_smooth_ce: label " + std::to_string(labels[i]) + " outside 0.." +
                          std::to_string(k - 1));
    }
    target[i * k + labels[i]] += 1.0f - eps;
  }
  const Tensor q({batch, k}, std::move(target));
  return scale(sum(mul(q, log_softmax(logits))), -1.0f / static_cast<float>(batch));
}

double smoothed_target_entropy(std::size_t num_classes, double eps) {
  const double k = static_cast<double>(num_classes);
  const double q_true = 1.0 - eps + eps / k;
  const double q_other = eps / k;
  double h = -q_true * std::log(q_true);
  if (q_other > 0.0) h -= (k - 1.0) * q_other * std::log(q_other);
  return h;
}

double effective_learning_rate(const TrainConfig& cfg, ParamGroup group) {
  return group == ParamGroup::Encoder ? cfg.lr * cfg.encoder_lr_factor : cfg.lr;
}

void adam_step(std::span<const NamedParam> params, OptimizerState& state, const TrainConfig& cfg, ParamGroup group) {
  const std::size_t g = static_cast<std::size_t>(group);
  const double lr = effective_learning_rate(cfg, group);
  const std::size_t t = ++state.steps[g];
  state.effective_lr[g] = lr;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t));

  for (const auto& p : params) {
    if (p.group != group) continue;
    Tensor tensor = p.tensor;
    const std::size_t n = tensor.numel();
    auto& slot = state.slots[p.name];
    if (slot.m.empty()) {
      slot.m.assign(n, 0.0);
      slot.v.assign(n, 0.0);
      slot.last_update.assign(n, 0.0);
    } else if (slot.m.size() != n) {
      throw DimensionError("adam_step: optimizer state for '" + p.name + "' holds " + std::to_string(slot.m.size()) +
                           " values, parameter has " + std::to_string(n));
    }
    auto theta = tensor.mutable_data();
    const auto grad = tensor.grad();
    const bool has_grad = !grad.empty();
    for (std::size_t i = 0; i < n; ++i) {
      const double value = theta[i];
      const double gi = (has_grad ? static_cast<double>(grad[i]) : 0.0) + cfg.weight_decay * value;
      slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * gi;
      slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * gi * gi;
      const double m_hat = slot.m[i] / bias1;
      const double v_hat = slot.v[i] / bias2;
      const double update = lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
      slot.last_update[i] = update;
      theta[i] = static_cast<float>(value - update);
    }
  }
}

std::size_t EvalReport::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion) n = std::accumulate(row.begin(), row.end(), n);
  return n;
}

std::string EvalReport::confusion_csv() const {
  std::ostringstream os;
  for (std::size_t j = 0; j < confusion.size(); ++j) {
    if (j) os << ',';
    os << (j < kClassNames.size() ? kClassNames[j] : "class" + std::to_string(j));
  }
  os << '\n';
  for (const auto& row : confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) os << ',';
      os << row[j];
    }
    os << '\n';
  }
  return os.str();
}

EvalReport make_report(std::span<const std::size_t> labels, std::span<const std::size_t> predictions,
                       std::size_t num_classes) {
  if (labels.size() != predictions.size()) throw DimensionError("make_report: label/prediction count mismatch");
  EvalReport r;
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++r.confusion.at(labels[i]).at(predictions[i]);
    if (labels[i] == predictions[i]) ++correct;
  }
  r.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  r.per_class_recall.resize(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t row = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    r.per_class_recall[c] = row == 0 ? 0.0 : static_cast<double>(r.confusion[c][c]) / static_cast<double>(row);
  }
  return r;
}

EvalReport evaluate(const FusionModel& model, std::span<const Example> examples, Ablation ablation) {
  NoGradGuard no_grad;
  std::vector<std::size_t> predictions;
  predictions.reserve(examples.size());
  for (const auto& ex : examples) predictions.push_back(predict(forward_sample(model, ex.video, ex.audio, ablation)));
  return make_report(labels_of(examples), predictions, model.config.num_classes);
}

TrainResult train(FusionModel& model, const Dataset& data, const TrainConfig& cfg_in, Ablation ablation,
                  const EpochCallback& on_epoch) {
  cfg_in.validate();
  if (data.train.empty()) throw ContractError("train: empty training split");
  TrainConfig cfg = cfg_in;
  const bool frozen_encoders = ablation == Ablation::TwoStage;
  if (frozen_encoders) cfg.encoder_lr_factor = 0.0;

  // Frozen encoders are a fixed feature extractor: embed every sample once.
  std::vector<CachedEmbeddings> train_cache, val_cache;
  if (frozen_encoders) {
    train_cache = encode_all(model, data.train);
    val_cache = encode_all(model, data.val);
  }
  const auto params = model.parameters();
  const std::vector<std::size_t> val_labels = labels_of(data.val);
  auto validate_now = [&]() {
    if (data.val.empty()) return EvalReport{};
    if (!frozen_encoders) return evaluate(model, data.val, ablation);
    NoGradGuard no_grad;
    std::vector<std::size_t> predictions;
    for (const auto& e : val_cache) predictions.push_back(predict(fusion_forward(e.audio, e.video, model)));
    return make_report(val_labels, predictions, model.config.num_classes);
  };

  OptimizerState state;
  TrainResult result;
  bool have_best = false;
  std::size_t step = 0;
  const std::size_t n = data.train.size();
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng({cfg.seed, kShuffleStream, epoch});
    rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      std::vector<Tensor> rows;
      std::vector<std::size_t> labels;
      for (std::size_t i = begin; i < end; ++i) {
        const Example& ex = data.train[order[i]];
        const Tensor logits = frozen_encoders
                                  ? fusion_forward(train_cache[order[i]].audio, train_cache[order[i]].video, model)
                                  : forward_sample(model, ex.video, ex.audio, ablation);
        rows.push_back(reshape(logits, {1, logits.numel()}));
        labels.push_back(ex.label);
      }
      const Tensor loss = label_smooth_ce(concat(rows, 0), labels, static_cast<float>(cfg.label_smoothing_eps));
      const double value = loss.item();
      if (!std::isfinite(value) && cfg.abort_on_nonfinite) throw NonFiniteLossError(step, value);
      loss_sum += value * static_cast<double>(end - begin);
      loss.backward();
      adam_step(params, state, cfg, ParamGroup::Encoder);
      adam_step(params, state, cfg, ParamGroup::Fusion);
      model.zero_grad();
      ++step;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(n);
    record.val = validate_now();
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!have_best || record.val.accuracy > result.best_val_accuracy) {
      result.best_model = model.clone();
      result.best_epoch = epoch;
      result.best_val_accuracy = record.val.accuracy;
      have_best = true;
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  if (!have_best) {
    result.best_model = model.clone();
    result.best_val_accuracy = validate_now().accuracy;
  }
  return result;
}

std::string epoch_log_line(const EpochRecord& record) {
  return canonical_json(Json{{"epoch", record.epoch},
                             {"train_loss", record.train_loss},
                             {"val_accuracy", record.val.accuracy},
                             {"seconds", record.seconds}});
}

}  // namespace crossfuse
