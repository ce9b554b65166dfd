#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "mvdet/checkpoint.hpp"
#include "mvdet/config.hpp"
#include "mvdet/detector.hpp"
#include "mvdet/error.hpp"
#include "mvdet/explain.hpp"
#include "mvdet/image_io.hpp"
#include "mvdet/ingest.hpp"
#include "mvdet/metrics.hpp"
#include "mvdet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mvdet;

namespace {

void deep_merge(json& base, const json& patch) {
  if (!base.is_object() || !patch.is_object()) {
    base = patch;
    return;
  }
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (base.contains(it.key()))
      deep_merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

json default_run_config() {
  return {{"model", ModelConfig{}.to_json()},
          {"train", TrainConfig{}.to_json()},
          {"pose_train",
           {{"epochs", 30}, {"learning_rate", 1e-3}, {"batch_size", 16}, {"seed", 0}}}};
}

// defaults <- config file (flag or MVDET_CONFIG) <- command line
json resolve_run_config(const std::string& config_file, const json& flag_patch) {
  json cfg = default_run_config();
  std::string path = config_file;
  if (path.empty())
    if (const char* env = std::getenv("MVDET_CONFIG")) path = env;
  if (!path.empty()) {
    const json file_cfg = load_json_file(path);
    for (auto it = file_cfg.begin(); it != file_cfg.end(); ++it)
      if (it.key() != "model" && it.key() != "train" && it.key() != "pose_train")
        throw ConfigError("unknown key '" + it.key() + "' in config file " + path);
    deep_merge(cfg, file_cfg);
  }
  deep_merge(cfg, flag_patch);
  // round-trip through the typed configs validates every key
  cfg["model"] = ModelConfig::from_json(cfg["model"]).to_json();
  cfg["train"] = TrainConfig::from_json(cfg["train"]).to_json();
  return cfg;
}

PoseTrainConfig pose_train_from_json(const json& j) {
  PoseTrainConfig c;
  c.epochs = j.value("epochs", 30);
  c.learning_rate = j.value("learning_rate", 1e-3);
  c.batch_size = j.value("batch_size", 16);
  c.seed = j.value("seed", uint64_t(0));
  return c;
}

ViewBatch batch_from_triple(const ViewTriple& views) {
  auto one = [](const ImageBuffer& img) {
    Tensor t = view_to_tensor(img);
    return t.reshaped({1, 3, t.dim(1), t.dim(2)});
  };
  ViewBatch b;
  b.global = one(views.global_view.image);
  b.middle = one(views.middle_view.image);
  b.local = one(views.local_view.image);
  return b;
}

int run_synth(const std::string& out, int count, int side, const std::string& artifact,
              uint64_t seed, bool force, bool as_json) {
  SyntheticSpec spec;
  spec.count_per_class = count;
  spec.image_side = side;
  spec.artifact = artifact_from_string(artifact);
  spec.seed = seed;
  spec.validate();

  const json resolved{{"synth",
                       {{"count_per_class", count},
                        {"image_side", side},
                        {"artifact", artifact},
                        {"seed", seed}}}};
  const std::string hash = config_hash(resolved);

  DatasetManifest manifest;
  atomic_write_dir(out, force, [&](const fs::path& dir) {
    manifest = generate_synthetic(spec, dir);
    json cfg = resolved;
    cfg["config_hash"] = hash;
    save_json_file(cfg, dir / "config.json");
  });

  json summary{{"out", out},
               {"config_hash", hash},
               {"images", manifest.entries.size()},
               {"train", manifest.count("train", 0) + manifest.count("train", 1)},
               {"val", manifest.count("val", 0) + manifest.count("val", 1)},
               {"test", manifest.count("test", 0) + manifest.count("test", 1)}};
  if (as_json)
    std::cout << summary.dump() << "\n";
  else
    std::cout << "synth: wrote " << manifest.entries.size() << " images to " << out
              << " (train/val/test = " << summary["train"] << "/" << summary["val"] << "/"
              << summary["test"] << ", config " << hash.substr(0, 12) << ")\n";
  return 0;
}

int run_frames(int frame_count, int stride, const std::string& dir, int label,
               const std::string& out, uint64_t split_seed, bool have_split_seed, bool as_json) {
  if (dir.empty()) {
    const std::vector<int> idx = sample_frames(frame_count, stride);
    if (as_json) {
      std::cout << json(idx).dump() << "\n";
    } else {
      std::cout << "frames: selected " << idx.size() << " of " << frame_count << ":";
      for (int i : idx) std::cout << " " << i;
      std::cout << "\n";
    }
    return 0;
  }

  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".ppm") files.push_back(e.path().filename().string());
  }
  std::sort(files.begin(), files.end());
  const std::vector<int> idx = sample_frames(int(files.size()), stride);

  std::vector<ManifestEntry> entries;
  for (int i : idx) {
    ManifestEntry e;
    e.image = files[size_t(i)];
    e.label = label;
    entries.push_back(std::move(e));
  }
  DatasetManifest manifest;
  if (have_split_seed) {
    manifest = make_splits(std::move(entries), split_seed);
  } else {
    manifest.entries = std::move(entries);
  }
  manifest.source = "frames:" + dir + ":stride=" + std::to_string(stride);
  if (out.empty()) throw ConfigError("frames: --out is required with --dir");
  manifest.save(out);
  if (as_json)
    std::cout << json{{"manifest", out}, {"entries", manifest.entries.size()}}.dump() << "\n";
  else
    std::cout << "frames: wrote " << manifest.entries.size() << " entries to " << out << "\n";
  return 0;
}

int run_preprocess(const std::string& manifest_path, const std::string& images_root,
                   const std::string& out, double margin, double expand, int side,
                   const std::string& sidecar, bool force, bool as_json) {
  DatasetManifest manifest = DatasetManifest::load(manifest_path);
  const fs::path root = images_root.empty() ? fs::path(manifest_path).parent_path()
                                            : fs::path(images_root);

  if (!sidecar.empty()) {
    FixtureDetector det{fs::path(sidecar)};
    for (ManifestEntry& e : manifest.entries)
      if (e.faces.empty()) {
        const ImageBuffer img = read_image(root / e.image);
        e.faces = detect_faces(img, e.image, det);
      }
  }

  ViewParams params{margin, expand, side};
  const json resolved{{"preprocess", {{"margin", margin}, {"expand", expand}, {"side", side}}}};
  const std::string hash = config_hash(resolved);

  size_t faces = 0;
  atomic_write_dir(out, force, [&](const fs::path& dir) {
    const ViewIndex idx = preprocess_dataset(manifest, root, dir, params, hash);
    faces = idx.records.size();
    json cfg = resolved;
    cfg["config_hash"] = hash;
    save_json_file(cfg, dir / "config.json");
  });

  if (as_json)
    std::cout << json{{"out", out}, {"faces", faces}, {"config_hash", hash}}.dump() << "\n";
  else
    std::cout << "preprocess: wrote views for " << faces << " faces to " << out << "\n";
  return 0;
}

int run_train(const std::string& manifest_path, const std::string& views_dir,
              const std::string& out, const std::string& config_file, const json& flag_patch,
              const std::string& task, bool resume, bool as_json) {
  const json cfg = resolve_run_config(config_file, flag_patch);
  const ModelConfig model_cfg = ModelConfig::from_json(cfg["model"]);
  const TrainConfig train_cfg = TrainConfig::from_json(cfg["train"]);

  fs::create_directories(out);
  std::string views = views_dir;
  if (views.empty()) {
    // on-the-fly mode: extract views into the run directory first
    if (manifest_path.empty())
      throw ConfigError("train: need --views or --manifest to locate the data");
    DatasetManifest manifest = DatasetManifest::load(manifest_path);
    views = (fs::path(out) / "views").string();
    fs::create_directories(views);
    preprocess_dataset(manifest, fs::path(manifest_path).parent_path(), views, ViewParams{}, "");
  }
  const ViewIndex index = ViewIndex::load(fs::path(views) / "views.jsonl");

  if (task == "pose") {
    const PoseTrainConfig pose_cfg = pose_train_from_json(cfg["pose_train"]);
    const json resolved{{"model", cfg["model"]}, {"pose_train", cfg["pose_train"]}};
    const std::string hash = config_hash(resolved);

    PoseEncoder encoder("pose_enc", model_cfg.pose_backbone, model_cfg.pose_classes,
                        Rng(model_cfg.seed).child("pose"));
    const ViewDataset all = ViewDataset::load(index, views, "", false, true, false);
    const PoseReport report = pretrain_pose(encoder, all, pose_cfg);
    save_pose_encoder(encoder, model_cfg.pose_backbone, fs::path(out) / "pose.ckpt");
    json cfg_out = resolved;
    cfg_out["config_hash"] = hash;
    save_json_file(cfg_out, fs::path(out) / "config.json");
    save_json_file(json{{"train_accuracy", report.train_accuracy},
                        {"final_loss", report.final_loss},
                        {"softmax_norm_max_err", report.softmax_norm_max_err}},
                   fs::path(out) / "pose_report.json");
    if (as_json)
      std::cout << json{{"task", "pose"},
                        {"train_accuracy", report.train_accuracy},
                        {"checkpoint", (fs::path(out) / "pose.ckpt").string()}}
                       .dump()
                << "\n";
    else
      std::cout << "pose pretraining: accuracy " << report.train_accuracy << ", checkpoint "
                << (fs::path(out) / "pose.ckpt").string() << "\n";
    return 0;
  }

  const json resolved{{"model", cfg["model"]}, {"train", cfg["train"]}};
  const std::string hash = config_hash(resolved);
  json cfg_out = resolved;
  cfg_out["config_hash"] = hash;
  save_json_file(cfg_out, fs::path(out) / "config.json");

  DetectorModel model = build_model(model_cfg);
  const Variant v = model_cfg.variant;
  const bool ng = DetectorModel::needs_view(v, ViewKind::Global);
  const bool nm = DetectorModel::needs_view(v, ViewKind::Middle);
  const bool nl = DetectorModel::needs_view(v, ViewKind::Local);
  const ViewDataset train_set = ViewDataset::load(index, views, "train", ng, nm, nl);
  const ViewDataset val_set = ViewDataset::load(index, views, "val", ng, nm, nl);

  const FitResult fit_result = fit(model, train_set, val_set, train_cfg, out, hash, resume);
  const EpochRecord& final_rec = fit_result.log.epochs.back();
  if (as_json)
    std::cout << json{{"task", "detector"},
                      {"epochs", fit_result.log.epochs.size()},
                      {"best_epoch", fit_result.log.best_epoch},
                      {"best_val_f1", fit_result.log.best_val_f1},
                      {"final_train_loss", final_rec.train_loss},
                      {"best_checkpoint", fit_result.best_checkpoint.string()}}
                     .dump()
              << "\n";
  else
    std::cout << "train: " << fit_result.log.epochs.size() << " epochs, best val F1 "
              << fit_result.log.best_val_f1 << " at epoch " << fit_result.log.best_epoch
              << ", checkpoint " << fit_result.best_checkpoint.string() << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& views_dir,
             const std::string& split, const std::string& out, const std::string& table,
             double threshold, bool as_json) {
  DetectorModel model = load_checkpoint(checkpoint);
  const ViewIndex index = ViewIndex::load(fs::path(views_dir) / "views.jsonl");
  const Variant v = model.config().variant;
  const ViewDataset ds = ViewDataset::load(index, views_dir, split,
                                           DetectorModel::needs_view(v, ViewKind::Global),
                                           DetectorModel::needs_view(v, ViewKind::Middle),
                                           DetectorModel::needs_view(v, ViewKind::Local));
  if (ds.size() == 0) throw ConfigError("eval: split '" + split + "' is empty");

  EvalReport report = evaluate(model, ds, threshold);
  json rj = report.to_json();
  rj["split"] = split;
  const json meta = read_checkpoint_meta(checkpoint);
  if (meta.contains("config_hash")) rj["config_hash"] = meta["config_hash"];
  if (!out.empty()) save_json_file(rj, out);
  if (!table.empty()) write_ablation_csv({{report.variant, report}}, table);

  if (as_json)
    std::cout << rj.dump() << "\n";
  else
    std::cout << "eval[" << split << "]: precision " << report.metrics.precision << ", recall "
              << report.metrics.recall << ", f1 " << report.metrics.f1 << ", auc " << report.auc
              << " (" << report.samples << " samples)\n";
  return 0;
}

int run_infer(const std::string& checkpoint, const std::vector<std::string>& images,
              const std::string& sidecar, const std::string& images_root, bool as_json,
              const std::string& out) {
  DetectorModel model = load_checkpoint(checkpoint);
  FixtureDetector det{fs::path(sidecar)};
  const fs::path root = images_root.empty() ? fs::path(".") : fs::path(images_root);

  json results = json::array();
  for (const std::string& image_rel : images) {
    const ImageBuffer img = read_image(root / image_rel);
    const std::vector<FaceRecord> faces = detect_faces(img, image_rel, det);
    for (size_t fi = 0; fi < faces.size(); ++fi) {
      const ViewTriple views = extract_views(img, faces[fi]);
      const ViewBatch batch = batch_from_triple(views);
      const ForwardResult res = model.forward(batch, false);
      json rec{{"image", image_rel},
               {"face", fi},
               {"box", {faces[fi].box.x0, faces[fi].box.y0, faces[fi].box.x1, faces[fi].box.y1}},
               {"prob_fake", res.prob[0]}};
      if (model.has_pose()) rec["pose_class"] = model.predict_pose(batch.middle)[0];
      if (faces[fi].gate_warning) rec["gate_warning"] = true;
      results.push_back(std::move(rec));
    }
  }
  if (!out.empty()) save_json_file(results, out);
  if (as_json) {
    std::cout << results.dump() << "\n";
  } else {
    for (const json& r : results)
      std::cout << r["image"].get<std::string>() << " face " << r["face"] << ": prob_fake "
                << r["prob_fake"] << (r.contains("pose_class")
                                          ? ", pose " + r["pose_class"].dump()
                                          : std::string())
                << "\n";
    if (results.empty()) std::cout << "no faces detected\n";
  }
  return 0;
}

int run_explain(const std::string& checkpoint, const std::string& image_rel,
                const std::string& sidecar, const std::string& images_root,
                const std::string& view_name, const std::string& layer, double alpha,
                int face_index, const std::string& out, bool as_json) {
  DetectorModel model = load_checkpoint(checkpoint);
  FixtureDetector det{fs::path(sidecar)};
  const fs::path root = images_root.empty() ? fs::path(".") : fs::path(images_root);

  const ImageBuffer img = read_image(root / image_rel);
  const std::vector<FaceRecord> faces = detect_faces(img, image_rel, det);
  if (faces.empty()) throw DetectionError("explain: no annotated faces for " + image_rel);
  if (face_index < 0 || face_index >= int(faces.size()))
    throw ConfigError("explain: face index out of range");

  ViewKind kind = view_name == "global"   ? ViewKind::Global
                  : view_name == "middle" ? ViewKind::Middle
                  : view_name == "local"  ? ViewKind::Local
                                          : throw ConfigError("explain: --view must be global/middle/local");
  const ViewTriple views = extract_views(img, faces[size_t(face_index)]);
  const ViewBatch batch = batch_from_triple(views);
  const Heatmap heat = gradcam(model, batch, kind, layer);

  const ImageBuffer& view_img = kind == ViewKind::Global   ? views.global_view.image
                                : kind == ViewKind::Middle ? views.middle_view.image
                                                           : views.local_view.image;
  // Fig-5-style panel: original view | heatmap | overlay
  const Tensor up = upsample_bilinear(heat.values, view_img.height, view_img.width);
  const ImageBuffer heat_img = colormap_render(up);
  const ImageBuffer blend = overlay(heat, view_img, alpha);
  const int gap = 4;
  ImageBuffer panel(view_img.width * 3 + gap * 2, view_img.height, 255);
  auto paste = [&panel](const ImageBuffer& src, int x_off) {
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x)
        for (int c = 0; c < 3; ++c) panel.at(x + x_off, y, c) = src.at(x, y, c);
  };
  paste(view_img, 0);
  paste(heat_img, view_img.width + gap);
  paste(blend, 2 * (view_img.width + gap));
  write_image(panel, out);

  if (as_json)
    std::cout << json{{"out", out},
                      {"view", heat.view},
                      {"layer", heat.layer},
                      {"degenerate", heat.degenerate}}
                     .dump()
              << "\n";
  else
    std::cout << "explain: wrote " << out << " (view " << heat.view << ", layer " << heat.layer
              << (heat.degenerate ? ", degenerate map" : "") << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mvdet - multi-view face forgery detector"};
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "machine-readable stdout");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
  std::string synth_out, synth_artifact = "central-blend-seam";
  int synth_count = 100, synth_side = 160;
  uint64_t synth_seed = 1;
  bool synth_force = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "images per class");
  synth->add_option("--side", synth_side, "image side in pixels");
  synth->add_option("--artifact", synth_artifact,
                    "central-blend-seam | patch-noise | color-mismatch");
  synth->add_option("--seed", synth_seed, "root seed");
  synth->add_flag("--force", synth_force, "replace an existing output directory");

  // frames
  auto* frames = app.add_subcommand("frames", "subsample frames / build a frame manifest");
  int frames_count = 0, frames_stride = 10, frames_label = 0;
  std::string frames_dir, frames_out;
  uint64_t frames_seed = 0;
  frames->add_option("--frame-count", frames_count, "total frame count (index mode)");
  frames->add_option("--stride", frames_stride, "keep one frame per stride");
  frames->add_option("--dir", frames_dir, "directory of frame images (manifest mode)");
  frames->add_option("--label", frames_label, "label for all frames (0 real, 1 fake)");
  frames->add_option("--out", frames_out, "manifest output path");
  auto* frames_seed_opt = frames->add_option("--split-seed", frames_seed,
                                             "also assign 70/15/15 splits with this seed");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "extract the three views for every face");
  std::string pre_manifest, pre_root, pre_out, pre_sidecar;
  double pre_margin = 15.0, pre_expand = 20.0;
  int pre_side = 224;
  bool pre_force = false;
  pre->add_option("--manifest", pre_manifest, "dataset manifest")->required();
  pre->add_option("--out", pre_out, "output directory")->required();
  pre->add_option("--images-root", pre_root, "image root (default: manifest directory)");
  pre->add_option("--margin", pre_margin, "local view hull margin in pixels");
  pre->add_option("--expand", pre_expand, "global view expansion in pixels");
  pre->add_option("--side", pre_side, "view side in pixels");
  pre->add_option("--sidecar", pre_sidecar, "fixture detector annotations for faceless entries");
  pre->add_flag("--force", pre_force, "replace an existing output directory");

  // train
  auto* train = app.add_subcommand("train", "train the detector (or pretrain the pose encoder)");
  std::string train_manifest, train_views, train_out, train_config, train_task = "detector";
  std::string train_variant, train_pose_ckpt;
  int train_epochs = 0, train_batch = 0;
  double train_lr = 0.0;
  uint64_t train_seed = 0;
  bool train_resume = false;
  int train_freeze_pose = -1;
  train->add_option("--manifest", train_manifest, "dataset manifest (on-the-fly mode)");
  train->add_option("--views", train_views, "preprocessed views directory");
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--config", train_config, "config JSON (or set MVDET_CONFIG)");
  train->add_option("--task", train_task, "detector | pose");
  auto* opt_variant =
      train->add_option("--variant", train_variant, "local|middle|global|fusion|fusion_pose");
  auto* opt_epochs = train->add_option("--epochs", train_epochs, "training epochs");
  auto* opt_lr = train->add_option("--lr", train_lr, "learning rate");
  auto* opt_batch = train->add_option("--batch-size", train_batch, "batch size");
  auto* opt_seed = train->add_option("--seed", train_seed, "root seed");
  auto* opt_freeze = train->add_option("--freeze-pose", train_freeze_pose,
                                       "1 = freeze the pose encoder, 0 = fine-tune it");
  auto* opt_pose_ckpt =
      train->add_option("--pose-checkpoint", train_pose_ckpt, "pretrained pose encoder");
  train->add_flag("--resume", train_resume, "continue from the run directory's last checkpoint");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
  std::string eval_ckpt, eval_views, eval_split = "test", eval_out, eval_table;
  double eval_threshold = 0.5;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "detector checkpoint")->required();
  eval_cmd->add_option("--views", eval_views, "preprocessed views directory")->required();
  eval_cmd->add_option("--split", eval_split, "train | val | test");
  eval_cmd->add_option("--out", eval_out, "report JSON path");
  eval_cmd->add_option("--table", eval_table, "CSV table path");
  eval_cmd->add_option("--threshold", eval_threshold, "decision threshold");

  // infer
  auto* infer = app.add_subcommand("infer", "score faces in images");
  std::string infer_ckpt, infer_sidecar, infer_root, infer_out;
  std::vector<std::string> infer_images;
  infer->add_option("--checkpoint", infer_ckpt, "detector checkpoint")->required();
  infer->add_option("--image", infer_images, "image path (repeatable)")->required();
  infer->add_option("--sidecar", infer_sidecar, "fixture detector annotations")->required();
  infer->add_option("--images-root", infer_root, "image root directory");
  infer->add_option("--out", infer_out, "write records to this JSON file");

  // explain
  auto* explain_cmd = app.add_subcommand("explain", "render a Grad-CAM panel for one face");
  std::string ex_ckpt, ex_image, ex_sidecar, ex_root, ex_view = "local", ex_layer, ex_out;
  double ex_alpha = 0.5;
  int ex_face = 0;
  explain_cmd->add_option("--checkpoint", ex_ckpt, "detector checkpoint")->required();
  explain_cmd->add_option("--image", ex_image, "image path")->required();
  explain_cmd->add_option("--sidecar", ex_sidecar, "fixture detector annotations")->required();
  explain_cmd->add_option("--images-root", ex_root, "image root directory");
  explain_cmd->add_option("--view", ex_view, "global | middle | local");
  explain_cmd->add_option("--layer", ex_layer, "encoder layer (default: last spatial block)");
  explain_cmd->add_option("--alpha", ex_alpha, "overlay blend factor");
  explain_cmd->add_option("--face", ex_face, "face index within the image");
  explain_cmd->add_option("--out", ex_out, "panel image path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth)
      return run_synth(synth_out, synth_count, synth_side, synth_artifact, synth_seed,
                       synth_force, as_json);
    if (*frames)
      return run_frames(frames_count, frames_stride, frames_dir, frames_label, frames_out,
                        frames_seed, frames_seed_opt->count() > 0, as_json);
    if (*pre)
      return run_preprocess(pre_manifest, pre_root, pre_out, pre_margin, pre_expand, pre_side,
                            pre_sidecar, pre_force, as_json);
    if (*train) {
      json patch = json::object();
      if (opt_variant->count()) patch["model"]["variant"] = train_variant;
      if (opt_epochs->count()) patch["train"]["epochs"] = train_epochs;
      if (opt_lr->count()) patch["train"]["learning_rate"] = train_lr;
      if (opt_batch->count()) patch["train"]["batch_size"] = train_batch;
      if (opt_seed->count()) {
        patch["train"]["seed"] = train_seed;
        patch["model"]["seed"] = train_seed;
        patch["pose_train"]["seed"] = train_seed;
      }
      if (opt_freeze->count()) patch["model"]["freeze_pose"] = train_freeze_pose != 0;
      if (opt_pose_ckpt->count()) patch["model"]["pose_checkpoint"] = train_pose_ckpt;
      return run_train(train_manifest, train_views, train_out, train_config, patch, train_task,
                       train_resume, as_json);
    }
    if (*eval_cmd)
      return run_eval(eval_ckpt, eval_views, eval_split, eval_out, eval_table, eval_threshold,
                      as_json);
    if (*infer)
      return run_infer(infer_ckpt, infer_images, infer_sidecar, infer_root, as_json, infer_out);
    if (*explain_cmd)
      return run_explain(ex_ckpt, ex_image, ex_sidecar, ex_root, ex_view, ex_layer, ex_alpha,
                         ex_face, ex_out, as_json);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
