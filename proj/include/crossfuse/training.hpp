#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crossfuse/config.hpp"
#include "crossfuse/model.hpp"
#include "crossfuse/synth.hpp"

namespace crossfuse {

inline const std::array<std::string, 3> kClassNames = {"Negative", "Neutral", "Positive"};

/// Mean over the batch of -sum_k q_k log softmax(logits)_k with
/// q = (1 - eps) onehot(label) + eps / K.
Tensor label_smooth_ce(const Tensor& logits, std::span<const std::size_t> labels, float eps);

/// Loss value at the optimum softmax(logits) == q, i.e. the entropy of q.
double smoothed_target_entropy(std::size_t num_classes, double eps);

struct OptimizerState {
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
    std::vector<double> last_update;  // theta_before - theta_after, before float rounding
  };
  std::map<std::string, Slot> slots;
  std::array<std::size_t, 2> steps{};          // per ParamGroup
  std::array<double, 2> effective_lr{};        // recorded at the last step of each group

  std::size_t step_count(ParamGroup group) const { return steps[static_cast<std::size_t>(group)]; }
  double lr_of(ParamGroup group) const { return effective_lr[static_cast<std::size_t>(group)]; }
};

double effective_learning_rate(const TrainConfig& cfg, ParamGroup group);

/// One Adam step (bias-corrected, coupled L2: g += weight_decay * theta) over
/// the parameters of `group`. Moments are kept in double precision.
void adam_step(std::span<const NamedParam> params, OptimizerState& state, const TrainConfig& cfg, ParamGroup group);

struct EvalReport {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // rows = true, cols = predicted
  std::vector<double> per_class_recall;

  std::size_t total() const;
  /// Header row of class names, then one row of counts per true class.
  std::string confusion_csv() const;
};

EvalReport make_report(std::span<const std::size_t> labels, std::span<const std::size_t> predictions,
                       std::size_t num_classes);

EvalReport evaluate(const FusionModel& model, std::span<const Example> examples, Ablation ablation = Ablation::Full);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  EvalReport val;
  double seconds = 0.0;
};

struct TrainResult {
  FusionModel best_model;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded mini-batch training of `model` in place; returns the history and a
/// copy of the parameters from the epoch with the best validation accuracy.
/// The two_stage ablation trains with the encoder group frozen.
TrainResult train(FusionModel& model, const Dataset& data, const TrainConfig& cfg, Ablation ablation = Ablation::Full,
                  const EpochCallback& on_epoch = {});

/// One JSON-lines log record: epoch, train_loss, val_accuracy, seconds.
std::string epoch_log_line(const EpochRecord& record);

}  // namespace crossfuse
