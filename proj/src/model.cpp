#include "mvdet/model.hpp"

#include <cmath>

#include "mvdet/error.hpp"

namespace mvdet {

using namespace nn;
using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::LocalOnly: return "local";
    case Variant::MiddleOnly: return "middle";
    case Variant::GlobalOnly: return "global";
    case Variant::Fusion: return "fusion";
    case Variant::FusionPose: return "fusion_pose";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "local") return Variant::LocalOnly;
  if (s == "middle") return Variant::MiddleOnly;
  if (s == "global") return Variant::GlobalOnly;
  if (s == "fusion") return Variant::Fusion;
  if (s == "fusion_pose") return Variant::FusionPose;
  throw ConfigError("unknown model variant '" + s + "'");
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------- config

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

json backbone_to_json(const BackboneSpec& s) {
  json j{{"family", to_string(s.family)},
         {"feature_dim", s.feature_dim},
         {"input_side", s.input_side},
         {"base_channels", s.base_channels},
         {"depth", s.depth},
         {"patch", s.patch},
         {"heads", s.heads}};
  j["checkpoint"] = s.checkpoint ? json(*s.checkpoint) : json(nullptr);
  return j;
}

BackboneSpec backbone_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"family", "feature_dim", "input_side", "base_channels", "depth",
                          "patch", "heads", "checkpoint"},
                      where);
  BackboneSpec s;
  if (j.contains("family")) s.family = backbone_family_from_string(j["family"].get<std::string>());
  s.feature_dim = j.value("feature_dim", 0);
  s.input_side = j.value("input_side", 224);
  s.base_channels = j.value("base_channels", 0);
  s.depth = j.value("depth", 0);
  s.patch = j.value("patch", 16);
  s.heads = j.value("heads", 4);
  if (j.contains("checkpoint") && !j["checkpoint"].is_null())
    s.checkpoint = j["checkpoint"].get<std::string>();
  return s;
}

}  // namespace

void ModelConfig::validate() const {
  view_backbone.validate();
  if (variant == Variant::FusionPose) pose_backbone.validate();
  if (pose_classes < 2) throw ConfigError("pose_classes must be >= 2");
  if (fusion.hidden1 < 1 || fusion.fused_dim < 1 || fusion.stage2_hidden < 1)
    throw ConfigError("fusion layer widths must be positive");
  if (fusion.dropout < 0.0 || fusion.dropout >= 1.0)
    throw ConfigError("fusion dropout must lie in [0,1)");
  if (fusion.activation != "relu" && fusion.activation != "identity")
    throw ConfigError("fusion activation must be 'relu' or 'identity'");
  if (view_head_hidden < 1) throw ConfigError("view_head_hidden must be positive");
}

json ModelConfig::to_json() const {
  json j{{"variant", to_string(variant)},
         {"seed", seed},
         {"view_backbone", backbone_to_json(view_backbone)},
         {"pose_backbone", backbone_to_json(pose_backbone)},
         {"pose_classes", pose_classes},
         {"fusion",
          json{{"hidden1", fusion.hidden1},
               {"fused_dim", fusion.fused_dim},
               {"stage2_hidden", fusion.stage2_hidden},
               {"dropout", fusion.dropout},
               {"activation", fusion.activation}}},
         {"view_head_hidden", view_head_hidden},
         {"freeze_pose", freeze_pose}};
  j["pose_checkpoint"] = pose_checkpoint ? json(*pose_checkpoint) : json(nullptr);
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  reject_unknown_keys(j,
                      {"variant", "seed", "view_backbone", "pose_backbone", "pose_classes",
                       "fusion", "view_head_hidden", "freeze_pose", "pose_checkpoint"},
                      "model config");
  ModelConfig c;
  if (j.contains("variant")) c.variant = variant_from_string(j["variant"].get<std::string>());
  c.seed = j.value("seed", uint64_t(0));
  if (j.contains("view_backbone")) c.view_backbone = backbone_from_json(j["view_backbone"], "view_backbone");
  if (j.contains("pose_backbone")) c.pose_backbone = backbone_from_json(j["pose_backbone"], "pose_backbone");
  c.pose_classes = j.value("pose_classes", 13);
  if (j.contains("fusion")) {
    const json& f = j["fusion"];
    reject_unknown_keys(f, {"hidden1", "fused_dim", "stage2_hidden", "dropout", "activation"},
                        "fusion config");
    c.fusion.hidden1 = f.value("hidden1", 512);
    c.fusion.fused_dim = f.value("fused_dim", 256);
    c.fusion.stage2_hidden = f.value("stage2_hidden", 256);
    c.fusion.dropout = f.value("dropout", 0.3);
    c.fusion.activation = f.value("activation", "relu");
  }
  c.view_head_hidden = j.value("view_head_hidden", 64);
  c.freeze_pose = j.value("freeze_pose", true);
  if (j.contains("pose_checkpoint") && !j["pose_checkpoint"].is_null())
    c.pose_checkpoint = j["pose_checkpoint"].get<std::string>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------- encoders

ViewEncoder::ViewEncoder(std::string name, const BackboneSpec& spec, Rng init)
    : name_(std::move(name)), bb_(build_backbone(spec, init)) {}

Tensor ViewEncoder::forward(const Tensor& images, bool training) {
  Tensor f = bb_.net->forward(images, training);
  if (!f.all_finite()) throw NumericFault("non-finite encoder features", name_);
  return f;
}

Tensor ViewEncoder::backward(const Tensor& dfeatures) { return bb_.net->backward(dfeatures); }

std::vector<Param*> ViewEncoder::params() { return bb_.net->params(); }

PoseEncoder::PoseEncoder(std::string name, const BackboneSpec& spec, int class_count, Rng init)
    : name_(std::move(name)),
      bb_(build_backbone(spec, init.child("backbone"))),
      head_(std::make_unique<Linear>("head", bb_.feature_dim, class_count, init.child("head"))),
      classes_(class_count) {}

Tensor PoseEncoder::forward(const Tensor& images, bool training) {
  Tensor logits = head_->forward(bb_.net->forward(images, training), training);
  if (!logits.all_finite()) throw NumericFault("non-finite pose logits", name_);
  return logits;
}

Tensor PoseEncoder::backward(const Tensor& dlogits) {
  return bb_.net->backward(head_->backward(dlogits));
}

std::vector<Param*> PoseEncoder::params() {
  std::vector<Param*> out = bb_.net->params();
  head_->collect_params(out);
  return out;
}

// ---------------------------------------------------------------- fusion

FusionHead::FusionHead(const FusionConfig& cfg, int view_feat_dim, int pose_dim, Rng init,
                       Rng* dropout_stream)
    : view_dim_(view_feat_dim),
      pose_dim_(pose_dim),
      fused_dim_(cfg.fused_dim),
      stage1_("stage1"),
      stage2_("stage2") {
  stage1_.add(std::make_unique<Linear>("s1fc1", view_feat_dim, cfg.hidden1, init.child(1)));
  stage1_.add(make_activation(cfg.activation, "s1act1"));
  stage1_.add(std::make_unique<Linear>("s1fc2", cfg.hidden1, cfg.fused_dim, init.child(2)));
  stage1_.add(make_activation(cfg.activation, "s1act2"));

  const int merged = cfg.fused_dim + pose_dim;
  stage2_.add(std::make_unique<BatchNorm>("s2bn", merged));
  stage2_.add(std::make_unique<Linear>("s2fc1", merged, cfg.stage2_hidden, init.child(3)));
  stage2_.add(std::make_unique<Dropout>("s2drop", cfg.dropout, dropout_stream));
  stage2_.add(make_activation(cfg.activation, "s2act"));
  stage2_.add(std::make_unique<Linear>("s2fc2", cfg.stage2_hidden, 1, init.child(4)));
}

Tensor FusionHead::fuse(const Tensor& view_feats, const Tensor& pose_feats, bool training) {
  if (view_feats.ndim() != 2 || view_feats.dim(1) != view_dim_)
    throw ConfigError("fusion: view feature dim mismatch, expected " + std::to_string(view_dim_));
  const int n = view_feats.dim(0);
  if (pose_dim_ > 0 && (pose_feats.ndim() != 2 || pose_feats.dim(0) != n ||
                        pose_feats.dim(1) != pose_dim_))
    throw ConfigError("fusion: pose feature dim mismatch, expected " + std::to_string(pose_dim_));

  Tensor fused = stage1_.forward(view_feats, training);
  Tensor merged({n, fused_dim_ + pose_dim_});
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < fused_dim_; ++j) merged.at(i, j) = fused.at(i, j);
    for (int j = 0; j < pose_dim_; ++j) merged.at(i, fused_dim_ + j) = pose_feats.at(i, j);
  }
  Tensor logit2d = stage2_.forward(merged, training);
  Tensor logit({n});
  for (int i = 0; i < n; ++i) logit[i] = logit2d.at(i, 0);
  return logit;
}

std::pair<Tensor, Tensor> FusionHead::backward(const Tensor& dlogit) {
  const int n = dlogit.dim(0);
  Tensor d2({n, 1});
  for (int i = 0; i < n; ++i) d2.at(i, 0) = dlogit[i];
  Tensor dmerged = stage2_.backward(d2);
  Tensor dfused({n, fused_dim_});
  Tensor dpose = pose_dim_ > 0 ? Tensor({n, pose_dim_}) : Tensor();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < fused_dim_; ++j) dfused.at(i, j) = dmerged.at(i, j);
    for (int j = 0; j < pose_dim_; ++j) dpose.at(i, j) = dmerged.at(i, fused_dim_ + j);
  }
  Tensor dview = stage1_.backward(dfused);
  return {std::move(dview), std::move(dpose)};
}

std::vector<Param*> FusionHead::params() {
  std::vector<Param*> out;
  stage1_.collect_params(out);
  stage2_.collect_params(out);
  return out;
}

// ---------------------------------------------------------------- detector

bool DetectorModel::needs_view(Variant v, ViewKind k) {
  switch (v) {
    case Variant::LocalOnly: return k == ViewKind::Local;
    case Variant::MiddleOnly: return k == ViewKind::Middle;
    case Variant::GlobalOnly: return k == ViewKind::Global;
    case Variant::Fusion: return true;
    case Variant::FusionPose: return true;
  }
  return false;
}

DetectorModel DetectorModel::build(const ModelConfig& config) {
  config.validate();
  DetectorModel m;
  m.config_ = config;
  Rng root(config.seed);
  m.dropout_stream_ = root.child("dropout");

  const bool fused = config.variant == Variant::Fusion || config.variant == Variant::FusionPose;
  if (needs_view(config.variant, ViewKind::Global))
    m.global_enc_ = std::make_unique<ViewEncoder>("global_enc", config.view_backbone,
                                                  root.child("global"));
  if (needs_view(config.variant, ViewKind::Middle))
    m.middle_enc_ = std::make_unique<ViewEncoder>("middle_enc", config.view_backbone,
                                                  root.child("middle"));
  if (needs_view(config.variant, ViewKind::Local))
    m.local_enc_ = std::make_unique<ViewEncoder>("local_enc", config.view_backbone,
                                                 root.child("local"));

  const int d = config.view_backbone.resolved_feature_dim();
  if (fused) {
    const int pose_dim = config.variant == Variant::FusionPose ? config.pose_classes : 0;
    if (config.variant == Variant::FusionPose)
      m.pose_enc_ = std::make_unique<PoseEncoder>("pose_enc", config.pose_backbone,
                                                  config.pose_classes, root.child("pose"));
    m.fusion_ = std::make_unique<FusionHead>(config.fusion, 3 * d, pose_dim,
                                             root.child("fusion"), &m.dropout_stream_);
  } else {
    Rng hr = root.child("view_head");
    m.view_head_ = std::make_unique<Sequential>("view_head");
    m.view_head_->add(std::make_unique<Linear>("fc1", d, config.view_head_hidden, hr.child(1)));
    m.view_head_->add(std::make_unique<ReLU>("relu"));
    m.view_head_->add(std::make_unique<Linear>("fc2", config.view_head_hidden, 1, hr.child(2)));
  }
  return m;
}

ViewEncoder* DetectorModel::view_encoder(ViewKind k) {
  switch (k) {
    case ViewKind::Global: return global_enc_.get();
    case ViewKind::Middle: return middle_enc_.get();
    default: return local_enc_.get();
  }
}

ForwardResult DetectorModel::forward(const ViewBatch& views, bool training) {
  const int n = views.batch();
  if (n == 0) throw ConfigError("forward: empty batch");
  for (ViewKind k : {ViewKind::Global, ViewKind::Middle, ViewKind::Local}) {
    if (!needs_view(config_.variant, k)) continue;
    const Tensor& t = views.view(k);
    if (t.empty() || t.ndim() != 4 || t.dim(0) != n)
      throw ConfigError("forward: missing or misshapen view batch");
  }

  ForwardResult res;
  Tensor logit;
  if (view_head_) {
    ViewKind k = config_.variant == Variant::LocalOnly    ? ViewKind::Local
                 : config_.variant == Variant::MiddleOnly ? ViewKind::Middle
                                                          : ViewKind::Global;
    Tensor feats = view_encoder(k)->forward(views.view(k), training);
    Tensor l2 = view_head_->forward(feats, training);
    logit = Tensor({n});
    for (int i = 0; i < n; ++i) logit[i] = l2.at(i, 0);
  } else {
    const int d = config_.view_backbone.resolved_feature_dim();
    Tensor lf = local_enc_->forward(views.local, training);
    Tensor mf = middle_enc_->forward(views.middle, training);
    Tensor gf = global_enc_->forward(views.global, training);
    // canonical concatenation order: local | middle | global
    Tensor vf({n, 3 * d});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        vf.at(i, j) = lf.at(i, j);
        vf.at(i, d + j) = mf.at(i, j);
        vf.at(i, 2 * d + j) = gf.at(i, j);
      }
    pose_forwarded_ = false;
    if (pose_enc_) {
      // the pose branch reads the middle view; frozen by default
      res.pose_logits = pose_enc_->forward(views.middle, training && !config_.freeze_pose);
      pose_forwarded_ = true;
    }
    logit = fusion_->fuse(vf, res.pose_logits, training);
  }

  if (!logit.all_finite()) throw NumericFault("non-finite fusion logit", "fusion");
  res.prob = Tensor({n});
  for (int i = 0; i < n; ++i) res.prob[i] = sigmoid(logit[i]);
  res.logit = std::move(logit);
  return res;
}

void DetectorModel::backward(const Tensor& dlogit) {
  const int n = dlogit.dim(0);
  if (view_head_) {
    Tensor d2({n, 1});
    for (int i = 0; i < n; ++i) d2.at(i, 0) = dlogit[i];
    Tensor dfeats = view_head_->backward(d2);
    ViewKind k = config_.variant == Variant::LocalOnly    ? ViewKind::Local
                 : config_.variant == Variant::MiddleOnly ? ViewKind::Middle
                                                          : ViewKind::Global;
    view_encoder(k)->backward(dfeats);
    return;
  }

  auto [dview, dpose] = fusion_->backward(dlogit);
  const int d = config_.view_backbone.resolved_feature_dim();
  Tensor dl({n, d}), dm({n, d}), dg({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      dl.at(i, j) = dview.at(i, j);
      dm.at(i, j) = dview.at(i, d + j);
      dg.at(i, j) = dview.at(i, 2 * d + j);
    }
  local_enc_->backward(dl);
  middle_enc_->backward(dm);
  global_enc_->backward(dg);
  if (pose_enc_ && pose_forwarded_ && !config_.freeze_pose) pose_enc_->backward(dpose);
}

std::vector<Param*> DetectorModel::trainable_params() {
  std::vector<Param*> out;
  for (ViewEncoder* e : {global_enc_.get(), middle_enc_.get(), local_enc_.get()})
    if (e)
      for (Param* p : e->params()) out.push_back(p);
  if (pose_enc_ && !config_.freeze_pose)
    for (Param* p : pose_enc_->params()) out.push_back(p);
  if (fusion_)
    for (Param* p : fusion_->params()) out.push_back(p);
  if (view_head_)
    for (Param* p : view_head_->params()) out.push_back(p);
  return out;
}

std::vector<Param*> DetectorModel::all_params() {
  std::vector<Param*> out;
  for (auto& [name, p] : named_params()) out.push_back(p);
  return out;
}

std::vector<std::pair<std::string, Param*>> DetectorModel::named_params() {
  std::vector<std::pair<std::string, Param*>> out;
  auto add = [&out](const std::string& prefix, std::vector<Param*> ps) {
    for (Param* p : ps) out.emplace_back(prefix + "." + p->name, p);
  };
  if (global_enc_) add("global_enc", global_enc_->params());
  if (middle_enc_) add("middle_enc", middle_enc_->params());
  if (local_enc_) add("local_enc", local_enc_->params());
  if (pose_enc_) add("pose_enc", pose_enc_->params());
  if (fusion_) add("fusion", fusion_->params());
  if (view_head_) add("view_head", view_head_->params());
  return out;
}

void DetectorModel::zero_grad() {
  for (Param* p : all_params()) p->zero_grad();
}

uint64_t DetectorModel::parameter_checksum() { return nn::parameter_checksum(all_params()); }

int64_t DetectorModel::parameter_count() { return nn::parameter_count(all_params()); }

std::vector<int> DetectorModel::predict_pose(const Tensor& middle_batch) {
  if (!pose_enc_) throw ConfigError("predict_pose: model has no pose encoder");
  Tensor logits = pose_enc_->forward(middle_batch, false);
  const int n = logits.dim(0), c = logits.dim(1);
  std::vector<int> cls(size_t(n), 0);
  for (int i = 0; i < n; ++i) {
    double best = logits.at(i, 0);
    for (int j = 1; j < c; ++j)
      if (logits.at(i, j) > best) {
        best = logits.at(i, j);
        cls[size_t(i)] = j;
      }
  }
  return cls;
}

}  // namespace mvdet
