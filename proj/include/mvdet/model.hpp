#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvdet/backbone.hpp"
#include "mvdet/nn.hpp"

namespace mvdet {

// Which detector configuration to build. Single-view variants pair one
// encoder with its classification head; fusion variants merge all three view
// features, optionally conditioned on the pose logits.
enum class Variant { LocalOnly, MiddleOnly, GlobalOnly, Fusion, FusionPose };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

enum class ViewKind { Global = 0, Middle = 1, Local = 2 };

struct FusionConfig {
  int hidden1 = 512;       // stage-1 hidden width
  int fused_dim = 256;     // stage-1 output (F)
  int stage2_hidden = 256; // stage-2 hidden width
  double dropout = 0.3;
  std::string activation = "relu";  // relu | identity
};

struct ModelConfig {
  Variant variant = Variant::FusionPose;
  uint64_t seed = 0;
  BackboneSpec view_backbone;
  BackboneSpec pose_backbone;
  int pose_classes = 13;
  FusionConfig fusion;
  int view_head_hidden = 64;
  bool freeze_pose = true;
  std::optional<std::string> pose_checkpoint;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// One content-view encoder; the three instances never share parameters.
class ViewEncoder {
public:
  ViewEncoder(std::string name, const BackboneSpec& spec, Rng init);

  Tensor forward(const Tensor& images, bool training);  // (N,3,S,S) -> (N,D)
  Tensor backward(const Tensor& dfeatures);
  std::vector<nn::Param*> params();

  const std::string& name() const { return name_; }
  BackboneNet& backbone() { return bb_; }
  int feature_dim() const { return bb_.feature_dim; }

private:
  std::string name_;
  BackboneNet bb_;
};

// Head-pose classifier: backbone features -> 13 class logits.
class PoseEncoder {
public:
  PoseEncoder(std::string name, const BackboneSpec& spec, int class_count, Rng init);

  Tensor forward(const Tensor& images, bool training);  // (N,3,S,S) -> (N,classes)
  Tensor backward(const Tensor& dlogits);
  std::vector<nn::Param*> params();

  const std::string& name() const { return name_; }
  BackboneNet& backbone() { return bb_; }
  int class_count() const { return classes_; }

private:
  std::string name_;
  BackboneNet bb_;
  std::unique_ptr<nn::Linear> head_;
  int classes_;
};

// Two-stage fusion MLP. Stage 1 merges the concatenated view features through
// two linear layers with the configured nonlinearity; stage 2 runs
// batch-norm -> linear -> dropout -> nonlinearity -> linear over the fused
// features concatenated with the pose features, yielding one logit.
class FusionHead {
public:
  FusionHead(const FusionConfig& cfg, int view_feat_dim, int pose_dim, Rng init,
             Rng* dropout_stream);

  // view_feats (N, view_feat_dim); pose_feats (N, pose_dim) or empty when the
  // head was built with pose_dim = 0. Returns one logit per sample.
  Tensor fuse(const Tensor& view_feats, const Tensor& pose_feats, bool training);
  // returns (d_view_feats, d_pose_feats)
  std::pair<Tensor, Tensor> backward(const Tensor& dlogit);
  std::vector<nn::Param*> params();

  int view_dim() const { return view_dim_; }
  int pose_dim() const { return pose_dim_; }

private:
  int view_dim_, pose_dim_, fused_dim_;
  nn::Sequential stage1_;
  nn::Sequential stage2_;
};

// Batched view images for one forward pass; unused views stay empty.
struct ViewBatch {
  Tensor global, middle, local;

  int batch() const {
    for (const Tensor* t : {&global, &middle, &local})
      if (!t->empty()) return t->dim(0);
    return 0;
  }
  const Tensor& view(ViewKind k) const {
    switch (k) {
      case ViewKind::Global: return global;
      case ViewKind::Middle: return middle;
      default: return local;
    }
  }
};

struct ForwardResult {
  Tensor logit;        // (N)
  Tensor prob;         // (N), sigmoid of logit
  Tensor pose_logits;  // (N, classes) when the pose branch exists, else empty
};

// The multi-view detector: up to three view encoders, an optional pose
// encoder, and the fusion head (or a single-view classification head).
class DetectorModel {
public:
  static DetectorModel build(const ModelConfig& config);

  ForwardResult forward(const ViewBatch& views, bool training);
  // dlogit (N); propagates into every unfrozen component
  void backward(const Tensor& dlogit);

  std::vector<nn::Param*> trainable_params();
  std::vector<nn::Param*> all_params();
  // prefix-qualified names, used by the checkpoint container
  std::vector<std::pair<std::string, nn::Param*>> named_params();
  void zero_grad();

  uint64_t parameter_checksum();
  int64_t parameter_count();

  // argmax pose class per sample; ties break to the lowest index
  std::vector<int> predict_pose(const Tensor& middle_batch);

  const ModelConfig& config() const { return config_; }
  static bool needs_view(Variant v, ViewKind k);
  bool has_pose() const { return pose_enc_ != nullptr; }

  ViewEncoder* view_encoder(ViewKind k);
  PoseEncoder* pose_encoder() { return pose_enc_.get(); }
  FusionHead* fusion_head() { return fusion_.get(); }

  // all dropout randomness flows from this stream
  void reseed_dropout(uint64_t seed) { dropout_stream_ = Rng(seed); }

private:
  DetectorModel() = default;

  ModelConfig config_;
  Rng dropout_stream_{0};
  std::unique_ptr<ViewEncoder> global_enc_, middle_enc_, local_enc_;
  std::unique_ptr<PoseEncoder> pose_enc_;
  std::unique_ptr<FusionHead> fusion_;
  std::unique_ptr<nn::Sequential> view_head_;  // single-view variants
  bool pose_forwarded_ = false;
};

// Numerically stable logistic function.
double sigmoid(double z);

}  // namespace mvdet
