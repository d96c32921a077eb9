#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "speedmode/dataset.hpp"
#include "speedmode/metrics.hpp"
#include "speedmode/model.hpp"

namespace speedmode::train {

struct TrainConfig {
  double lr = 2e-4;
  /// 0 selects 64 below 10,000 training windows and 512 otherwise.
  std::size_t batch_size = 0;
  std::size_t max_epochs = 50;
  std::size_t patience = 7;
  double weight_decay = 1e-4;
  /// Overrides the model's dropout rate when set.
  std::optional<double> dropout = 0.1;
  std::size_t warmup_steps = 0;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 42;

  std::size_t resolved_batch_size(std::size_t n_windows) const;
  /// Throws std::invalid_argument for non-positive values or patience >
  /// max_epochs.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Linear ramp 0 -> peak over warmup steps, then cosine decay to 0.1 * peak
/// at total_steps (held there afterwards).
double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup, double peak_lr);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based; 0 when nothing ran
  std::string stop_reason;     // "early_stop" or "max_epochs"
  std::size_t steps = 0;
  double max_clipped_norm = 0.0;  // largest global norm after clipping
};

std::string history_csv(const TrainHistory& h);
nlohmann::json to_json(const TrainHistory& h);

struct TrainResult {
  TrainHistory history;
  model::ParameterSet params;  // from the best epoch
};

/// Trains the given parameters. Only names in `trainable` are updated (all
/// of them when it is empty). Validation accuracy is window-level.
/// Throws NumericError, with epoch and step, on a non-finite loss.
TrainResult train(model::ParameterSet params, const model::ModelConfig& config,
                  std::span<const data::SpeedWindow> train_windows,
                  std::span<const data::SpeedWindow> val_windows, const TrainConfig& tc,
                  const std::set<std::string>& trainable = {});

/// Applies the freeze policy (re-initialization seeded from tc.seed) and
/// trains. Throws ShapeError when the windows do not match the model length.
TrainResult finetune(model::ParameterSet params, const model::ModelConfig& config,
                     std::span<const data::SpeedWindow> train_windows,
                     std::span<const data::SpeedWindow> val_windows, model::FreezePolicy policy,
                     const TrainConfig& tc);

/// Fine-tuning runs default to 20 epochs.
TrainConfig finetune_defaults();

struct WindowEvaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<Mode> predictions;
};

WindowEvaluation evaluate_windows(const model::ParameterSet& params,
                                  const model::ModelConfig& config,
                                  std::span<const data::SpeedWindow> windows);

struct FoldResult {
  std::vector<std::string> test_trips;
  eval::MetricsReport metrics;
  TrainHistory history;
};

struct CrossValidation {
  std::vector<FoldResult> folds;
  eval::CvSummary accuracy;
};

/// k trip-disjoint folds. For each fold the other trips are split 90/10
/// (by trip) into training and early-stopping validation sets; the fold
/// itself is only used for the reported test metrics.
CrossValidation cross_validate(std::span<const data::SpeedWindow> windows, std::size_t k,
                               const model::ModelConfig& config, const TrainConfig& tc);

}  // namespace speedmode::train
