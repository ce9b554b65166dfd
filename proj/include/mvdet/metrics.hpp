#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvdet/model.hpp"
#include "mvdet/pipeline.hpp"

namespace mvdet {

struct ConfusionCounts {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  int64_t total() const { return tp + fp + tn + fn; }
};

// Decision rule: prob >= threshold predicts the positive (fake) class.
ConfusionCounts confusion(std::span<const double> probs, std::span<const int> labels,
                          double threshold = 0.5);

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // an undefined denominator yields 0 with the matching flag set
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

Prf1 prf1(const ConfusionCounts& counts);

// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
// correctly, ties counted one half. Throws when only one class is present.
double auc(std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
  ConfusionCounts counts;
  Prf1 metrics;
  double auc = 0.0;
  double threshold = 0.5;
  int64_t samples = 0;
  std::string variant;

  nlohmann::json to_json() const;
};

// Full evaluation of one dataset split in eval mode.
EvalReport evaluate(DetectorModel& model, const ViewDataset& dataset, double threshold = 0.5,
                    int batch_size = 32);

// Ablation table, one row per variant, column order Precision, Recall, F1, AUC.
void write_ablation_csv(const std::vector<std::pair<std::string, EvalReport>>& rows,
                        const std::filesystem::path& path);

}  // namespace mvdet
