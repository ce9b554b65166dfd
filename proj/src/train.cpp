#include "mvdet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "mvdet/checkpoint.hpp"
#include "mvdet/error.hpp"
#include "mvdet/metrics.hpp"

namespace mvdet {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (clamp_epsilon <= 0.0 || clamp_epsilon >= 0.5)
    throw ConfigError("clamp_epsilon must lie in (0, 0.5)");
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"seed", seed},
          {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"epsilon", adam.epsilon}}},
          {"checkpoint_cadence", checkpoint_cadence},
          {"clamp_epsilon", clamp_epsilon}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const char* allowed[] = {"epochs",        "learning_rate",      "batch_size", "seed",
                                    "adam",          "checkpoint_cadence", "clamp_epsilon"};
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in train config");
  }
  TrainConfig c;
  c.epochs = j.value("epochs", 100);
  c.learning_rate = j.value("learning_rate", 1e-4);
  c.batch_size = j.value("batch_size", 8);
  c.seed = j.value("seed", uint64_t(0));
  if (j.contains("adam")) {
    const json& a = j["adam"];
    c.adam.beta1 = a.value("beta1", 0.9);
    c.adam.beta2 = a.value("beta2", 0.999);
    c.adam.epsilon = a.value("epsilon", 1e-8);
  }
  c.checkpoint_cadence = j.value("checkpoint_cadence", 0);
  c.clamp_epsilon = j.value("clamp_epsilon", 1e-7);
  c.validate();
  return c;
}

double bce_loss(const Tensor& probs, const Tensor& labels, double clamp_eps) {
  if (!probs.same_shape(labels)) throw ConfigError("bce_loss: shape mismatch");
  if (probs.size() == 0) throw ConfigError("bce_loss: empty batch");
  double total = 0.0;
  for (int64_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], clamp_eps, 1.0 - clamp_eps);
    const double y = labels[i];
    total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return total / double(probs.size());
}

// ---------------------------------------------------------------- RunLog

void RunLog::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write run log: " + path.string());
  out << json{{"schema", "mvdet.runlog.v1"}, {"config_hash", config_hash}, {"seed", seed}}.dump()
      << "\n";
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  for (const EpochRecord& e : epochs)
    out << json{{"epoch", e.epoch},
                {"train_loss", e.train_loss},
                {"val_loss", e.val_loss},
                {"val_precision", e.val_precision},
                {"val_recall", e.val_recall},
                {"val_f1", e.val_f1},
                {"val_auc", num(e.val_auc)},
                {"wall_ms", e.wall_ms}}
               .dump()
        << "\n";
  if (best_epoch >= 0)
    out << json{{"best_epoch", best_epoch}, {"best_val_f1", best_val_f1}}.dump() << "\n";
}

RunLog RunLog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run log: " + path.string());
  RunLog log;
  std::string line;
  long line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      if (!header) {
        if (j.value("schema", "") != "mvdet.runlog.v1")
          throw std::runtime_error("expected run log header");
        log.config_hash = j.value("config_hash", "");
        log.seed = j.value("seed", uint64_t(0));
        header = true;
        continue;
      }
      if (j.contains("best_epoch")) {
        log.best_epoch = j["best_epoch"].get<int>();
        log.best_val_f1 = j.value("best_val_f1", -1.0);
        continue;
      }
      EpochRecord e;
      e.epoch = j.at("epoch").get<int>();
      e.train_loss = j.at("train_loss").get<double>();
      e.val_loss = j.at("val_loss").get<double>();
      e.val_precision = j.at("val_precision").get<double>();
      e.val_recall = j.at("val_recall").get<double>();
      e.val_f1 = j.at("val_f1").get<double>();
      e.val_auc = j.at("val_auc").is_null() ? std::nan("") : j.at("val_auc").get<double>();
      e.wall_ms = j.at("wall_ms").get<double>();
      log.epochs.push_back(e);
    } catch (const std::exception& ex) {
      throw ParseError("malformed run log: " + std::string(ex.what()), line_no);
    }
  }
  if (!header) throw ParseError("run log missing header: " + path.string());
  return log;
}

// ---------------------------------------------------------------- fit

namespace {

struct ValMetrics {
  double loss, precision, recall, f1, auc_value;
};

ValMetrics eval_split(DetectorModel& model, const ViewDataset& ds, double clamp_eps) {
  std::vector<double> probs;
  std::vector<int> labels;
  const std::vector<int> all = ds.all_indices();
  constexpr int kEvalBatch = 32;
  for (size_t start = 0; start < all.size(); start += kEvalBatch) {
    const size_t stop = std::min(all.size(), start + kEvalBatch);
    const std::vector<int> idx(all.begin() + long(start), all.begin() + long(stop));
    const ForwardResult res = model.forward(ds.make_batch(idx), false);
    for (size_t i = 0; i < idx.size(); ++i) {
      probs.push_back(res.prob[int64_t(i)]);
      labels.push_back(ds.item(size_t(idx[i])).label);
    }
  }
  Tensor pt({int(probs.size())}), lt({int(labels.size())});
  for (size_t i = 0; i < probs.size(); ++i) {
    pt[int64_t(i)] = probs[i];
    lt[int64_t(i)] = labels[i];
  }
  ValMetrics m{};
  m.loss = bce_loss(pt, lt, clamp_eps);
  const Prf1 pr = prf1(confusion(probs, labels, 0.5));
  m.precision = pr.precision;
  m.recall = pr.recall;
  m.f1 = pr.f1;
  bool has_pos = false, has_neg = false;
  for (int l : labels) (l == 1 ? has_pos : has_neg) = true;
  m.auc_value = (has_pos && has_neg) ? auc(probs, labels) : std::nan("");
  return m;
}

}  // namespace

FitResult fit(DetectorModel& model, const ViewDataset& train_set, const ViewDataset& val_set,
              const TrainConfig& config, const std::filesystem::path& run_dir,
              const std::string& config_hash, bool resume) {
  config.validate();
  if (train_set.size() == 0) throw ConfigError("fit: empty train split");
  if (val_set.size() == 0) throw ConfigError("fit: empty val split");

  std::error_code ec;
  std::filesystem::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create run dir " + run_dir.string() + ": " + ec.message());

  const std::filesystem::path log_path = run_dir / "runlog.jsonl";
  const std::filesystem::path best_path = run_dir / "best.ckpt";
  const std::filesystem::path last_path = run_dir / "last.ckpt";

  RunLog log;
  int start_epoch = 0;
  if (resume) {
    log = RunLog::load(log_path);
    if (log.config_hash != config_hash)
      throw ConfigError("resume: config hash mismatch (run dir has '" + log.config_hash +
                        "', current config is '" + config_hash + "')");
    DetectorModel restored = load_checkpoint(last_path);
    // transplant restored weights into the live model
    auto src = restored.named_params();
    auto dst = model.named_params();
    if (src.size() != dst.size()) throw ConfigError("resume: model structure changed");
    for (size_t i = 0; i < src.size(); ++i) {
      if (src[i].first != dst[i].first || !src[i].second->value.same_shape(dst[i].second->value))
        throw ConfigError("resume: parameter mismatch at " + src[i].first);
      dst[i].second->value = src[i].second->value;
    }
    start_epoch = int(log.epochs.size());
  } else {
    log.config_hash = config_hash;
    log.seed = config.seed;
  }

  nn::AdamOptimizer adam(model.trainable_params(), config.learning_rate, config.adam.beta1,
                         config.adam.beta2, config.adam.epsilon);

  Rng root(config.seed);
  std::vector<int> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  FitResult result;
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    // per-epoch streams keep shuffling and dropout reproducible and resumable
    Rng shuffle_stream = root.child("shuffle").child(uint64_t(epoch));
    shuffle_stream.shuffle(order);
    model.reseed_dropout(root.child("dropout").child(uint64_t(epoch)).next_u64());

    double loss_sum = 0.0;
    int64_t seen = 0;
    long batch_index = 0;
    for (size_t start = 0; start < order.size(); start += size_t(config.batch_size), ++batch_index) {
      const size_t stop = std::min(order.size(), start + size_t(config.batch_size));
      const std::vector<int> idx(order.begin() + long(start), order.begin() + long(stop));
      const ViewBatch batch = train_set.make_batch(idx);
      const Tensor labels = train_set.labels(idx);

      ForwardResult res;
      try {
        res = model.forward(batch, true);
      } catch (const NumericFault& f) {
        throw NumericFault(std::string("training aborted: ") + f.what(), f.where(), batch_index);
      }
      const double loss = bce_loss(res.prob, labels, config.clamp_epsilon);
      if (!std::isfinite(loss))
        throw NumericFault("training aborted: non-finite loss", "bce", batch_index);
      loss_sum += loss * double(idx.size());
      seen += int64_t(idx.size());

      // d(mean BCE)/d(logit) = (p - y) / N
      Tensor dlogit({int(idx.size())});
      for (size_t i = 0; i < idx.size(); ++i)
        dlogit[int64_t(i)] = (res.prob[int64_t(i)] - labels[int64_t(i)]) / double(idx.size());
      model.zero_grad();
      model.backward(dlogit);
      adam.step();
    }

    const ValMetrics vm = eval_split(model, val_set, config.clamp_epsilon);
    const auto t1 = std::chrono::steady_clock::now();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(seen);
    rec.val_loss = vm.loss;
    rec.val_precision = vm.precision;
    rec.val_recall = vm.recall;
    rec.val_f1 = vm.f1;
    rec.val_auc = vm.auc_value;
    rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    log.epochs.push_back(rec);

    if (vm.f1 > log.best_val_f1) {
      log.best_val_f1 = vm.f1;
      log.best_epoch = epoch;
      save_checkpoint(model, best_path, {{"config_hash", config_hash}, {"epoch", epoch}});
    }
    save_checkpoint(model, last_path, {{"config_hash", config_hash}, {"epoch", epoch}});
    if (config.checkpoint_cadence > 0 && (epoch + 1) % config.checkpoint_cadence == 0)
      save_checkpoint(model, run_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"),
                      {{"config_hash", config_hash}, {"epoch", epoch}});
    log.save(log_path);
  }

  result.log = log;
  result.best_checkpoint = best_path;
  result.last_checkpoint = last_path;
  return result;
}

// ---------------------------------------------------------------- pose

PoseReport pretrain_pose(PoseEncoder& encoder, const ViewDataset& dataset,
                         const PoseTrainConfig& config) {
  if (dataset.size() == 0) throw ConfigError("pretrain_pose: empty dataset");
  const int classes = encoder.class_count();
  std::vector<bool> present(size_t(classes), false);
  for (size_t i = 0; i < dataset.size(); ++i) {
    const int c = dataset.item(i).pose_class;
    if (c < 0 || c >= classes)
      throw ConfigError("pretrain_pose: sample with pose class outside [0, " +
                        std::to_string(classes) + ")");
    present[size_t(c)] = true;
  }
  std::string absent;
  for (int c = 0; c < classes; ++c)
    if (!present[size_t(c)]) absent += (absent.empty() ? "" : ", ") + std::to_string(c);
  if (!absent.empty())
    throw ConfigError("pretrain_pose: dataset is missing pose classes " + absent);

  nn::AdamOptimizer adam(encoder.params(), config.learning_rate, config.adam.beta1,
                         config.adam.beta2, config.adam.epsilon);
  Rng root(config.seed);
  std::vector<int> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  PoseReport report;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_stream = root.child("shuffle").child(uint64_t(epoch));
    shuffle_stream.shuffle(order);
    double loss_sum = 0.0;
    int64_t seen = 0;
    for (size_t start = 0; start < order.size(); start += size_t(config.batch_size)) {
      const size_t stop = std::min(order.size(), start + size_t(config.batch_size));
      const std::vector<int> idx(order.begin() + long(start), order.begin() + long(stop));
      const int n = int(idx.size());
      const ViewBatch batch = dataset.make_batch(idx);
      const std::vector<int> targets = dataset.pose_classes(idx);

      Tensor logits = encoder.forward(batch.middle, true);
      // softmax + NLL
      Tensor dlogits({n, classes});
      double loss = 0.0;
      for (int i = 0; i < n; ++i) {
        double maxv = logits.at(i, 0);
        for (int c = 1; c < classes; ++c) maxv = std::max(maxv, logits.at(i, c));
        double z = 0.0;
        for (int c = 0; c < classes; ++c) z += std::exp(logits.at(i, c) - maxv);
        double norm = 0.0;
        for (int c = 0; c < classes; ++c) {
          const double p = std::exp(logits.at(i, c) - maxv) / z;
          norm += p;
          dlogits.at(i, c) = (p - (c == targets[size_t(i)] ? 1.0 : 0.0)) / double(n);
        }
        report.softmax_norm_max_err = std::max(report.softmax_norm_max_err, std::abs(norm - 1.0));
        loss += -(logits.at(i, targets[size_t(i)]) - maxv - std::log(z)) / double(n);
      }
      if (!std::isfinite(loss))
        throw NumericFault("pose pretraining: non-finite loss", "cross_entropy");
      loss_sum += loss * double(n);
      seen += n;

      for (nn::Param* p : encoder.params()) p->zero_grad();
      encoder.backward(dlogits);
      adam.step();
    }
    report.epoch_losses.push_back(loss_sum / double(seen));
  }
  report.final_loss = report.epoch_losses.back();

  // train-set accuracy in eval mode
  int64_t correct = 0;
  const std::vector<int> all = dataset.all_indices();
  constexpr int kEvalBatch = 32;
  for (size_t start = 0; start < all.size(); start += kEvalBatch) {
    const size_t stop = std::min(all.size(), start + kEvalBatch);
    const std::vector<int> idx(all.begin() + long(start), all.begin() + long(stop));
    const ViewBatch batch = dataset.make_batch(idx);
    Tensor logits = encoder.forward(batch.middle, false);
    for (size_t i = 0; i < idx.size(); ++i) {
      int arg = 0;
      double best = logits.at(int(i), 0);
      for (int c = 1; c < classes; ++c)
        if (logits.at(int(i), c) > best) {
          best = logits.at(int(i), c);
          arg = c;
        }
      if (arg == dataset.item(size_t(idx[i])).pose_class) ++correct;
    }
  }
  report.train_accuracy = double(correct) / double(dataset.size());
  return report;
}

}  // namespace mvdet
