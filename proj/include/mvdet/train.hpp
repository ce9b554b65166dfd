#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvdet/model.hpp"
#include "mvdet/pipeline.hpp"

namespace mvdet {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 1e-4;
  int batch_size = 8;
  uint64_t seed = 0;
  AdamConfig adam;
  int checkpoint_cadence = 0;   // also snapshot every k epochs (0 = best/last only)
  double clamp_epsilon = 1e-7;  // BCE probability clamp

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Mean binary cross-entropy over the batch; probabilities are clamped to
// [eps, 1-eps] before the logs.
double bce_loss(const Tensor& probs, const Tensor& labels, double clamp_eps = 1e-7);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_precision = 0.0;
  double val_recall = 0.0;
  double val_f1 = 0.0;
  double val_auc = 0.0;  // NaN when the val split holds a single class
  double wall_ms = 0.0;
};

struct RunLog {
  std::string config_hash;
  uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_f1 = -1.0;

  void save(const std::filesystem::path& path) const;
  static RunLog load(const std::filesystem::path& path);
};

struct FitResult {
  RunLog log;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

// Optimizes the detector with Adam + BCE, evaluating the validation split
// each epoch and retaining the best checkpoint by validation F1. Writes
// runlog.jsonl, best.ckpt and last.ckpt under run_dir. With resume = true,
// continues a previous run from last.ckpt (the config hash must match).
FitResult fit(DetectorModel& model, const ViewDataset& train_set, const ViewDataset& val_set,
              const TrainConfig& config, const std::filesystem::path& run_dir,
              const std::string& config_hash, bool resume = false);

struct PoseTrainConfig {
  int epochs = 30;
  double learning_rate = 1e-3;
  int batch_size = 16;
  uint64_t seed = 0;
  AdamConfig adam;
};

struct PoseReport {
  double train_accuracy = 0.0;
  double final_loss = 0.0;
  double softmax_norm_max_err = 0.0;  // max |sum(softmax) - 1| seen
  std::vector<double> epoch_losses;
};

// Cross-entropy pretraining of the pose encoder on (middle view, pose class)
// pairs. Every one of the encoder's classes must appear in the dataset.
PoseReport pretrain_pose(PoseEncoder& encoder, const ViewDataset& dataset,
                         const PoseTrainConfig& config);

}  // namespace mvdet
