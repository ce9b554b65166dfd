#include "mvdet/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "mvdet/error.hpp"

namespace mvdet {

ConfusionCounts confusion(std::span<const double> probs, std::span<const int> labels,
                          double threshold) {
  if (probs.size() != labels.size()) throw ConfigError("confusion: probs/labels size mismatch");
  ConfusionCounts c;
  for (size_t i = 0; i < probs.size(); ++i) {
    const bool predicted_fake = probs[i] >= threshold;
    const bool is_fake = labels[i] == 1;
    if (predicted_fake && is_fake)
      ++c.tp;
    else if (predicted_fake && !is_fake)
      ++c.fp;
    else if (!predicted_fake && is_fake)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

Prf1 prf1(const ConfusionCounts& c) {
  Prf1 out;
  if (c.tp + c.fp > 0)
    out.precision = double(c.tp) / double(c.tp + c.fp);
  else
    out.precision_undefined = true;
  if (c.tp + c.fn > 0)
    out.recall = double(c.tp) / double(c.tp + c.fn);
  else
    out.recall_undefined = true;
  if (out.precision + out.recall > 0.0)
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  else
    out.f1_undefined = true;
  return out;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ConfigError("auc: scores/labels size mismatch");
  int64_t n_pos = 0, n_neg = 0;
  for (int l : labels) (l == 1 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw ConfigError("auc: both classes must be present");

  // rank-sum with average ranks on ties; equals the pairwise count with ties
  // scored one half
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::sort(order.begin(), order.end(),
            [&scores](size_t a, size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * double(i + 1 + j + 1);  // ranks are 1-based
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * double(n_pos) * double(n_pos + 1);
  return u / (double(n_pos) * double(n_neg));
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j{{"schema", "mvdet.report.v1"},
                   {"variant", variant},
                   {"threshold", threshold},
                   {"samples", samples},
                   {"counts", {{"tp", counts.tp}, {"fp", counts.fp}, {"tn", counts.tn}, {"fn", counts.fn}}},
                   {"precision", metrics.precision},
                   {"recall", metrics.recall},
                   {"f1", metrics.f1},
                   {"auc", auc}};
  if (metrics.precision_undefined) j["precision_undefined"] = true;
  if (metrics.recall_undefined) j["recall_undefined"] = true;
  if (metrics.f1_undefined) j["f1_undefined"] = true;
  return j;
}

EvalReport evaluate(DetectorModel& model, const ViewDataset& dataset, double threshold,
                    int batch_size) {
  if (dataset.size() == 0) throw ConfigError("evaluate: empty dataset split");
  std::vector<double> probs;
  std::vector<int> labels;
  probs.reserve(dataset.size());
  labels.reserve(dataset.size());

  const std::vector<int> all = dataset.all_indices();
  for (size_t start = 0; start < all.size(); start += size_t(batch_size)) {
    const size_t stop = std::min(all.size(), start + size_t(batch_size));
    const std::vector<int> idx(all.begin() + long(start), all.begin() + long(stop));
    const ViewBatch batch = dataset.make_batch(idx);
    const ForwardResult res = model.forward(batch, false);
    for (int i = 0; i < int(idx.size()); ++i) {
      probs.push_back(res.prob[i]);
      labels.push_back(dataset.item(size_t(idx[size_t(i)])).label);
    }
  }

  EvalReport report;
  report.counts = confusion(probs, labels, threshold);
  report.metrics = prf1(report.counts);
  report.auc = auc(probs, labels);
  report.threshold = threshold;
  report.samples = int64_t(probs.size());
  report.variant = to_string(model.config().variant);
  return report;
}

void write_ablation_csv(const std::vector<std::pair<std::string, EvalReport>>& rows,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write table: " + path.string());
  out << "Method,Precision,Recall,F1,AUC\n";
  char line[256];
  for (const auto& [name, r] : rows) {
    std::snprintf(line, sizeof(line), "%s,%.4f,%.4f,%.4f,%.4f\n", name.c_str(),
                  r.metrics.precision, r.metrics.recall, r.metrics.f1, r.auc);
    out << line;
  }
  if (!out) throw IoError("short table write: " + path.string());
}

}  // namespace mvdet
