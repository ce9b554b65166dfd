#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "mvdet/nn.hpp"
#include "mvdet/rng.hpp"

namespace mvdet {

enum class BackboneFamily { TinyTest, ResidualConv, ImageTransformer, MobileConv };

std::string to_string(BackboneFamily family);
BackboneFamily backbone_family_from_string(const std::string& s);

// Configuration of one encoder backbone. feature_dim is the dimension of the
// emitted feature vector; family-specific knobs default sensibly when 0.
struct BackboneSpec {
  BackboneFamily family = BackboneFamily::TinyTest;
  int feature_dim = 0;  // 0 -> family default (tiny 16, residual 2048, transformer 768, mobile 1024)
  std::optional<std::string> checkpoint;
  int input_side = 224;
  int base_channels = 0;  // tiny-test conv width, default 8
  int depth = 0;          // residual blocks per stage / transformer blocks
  int patch = 16;         // transformer patch side
  int heads = 4;          // transformer attention heads

  void validate() const;
  int resolved_feature_dim() const;
};

// Where a named layer's activation lives spatially; token layers carry the
// patch grid they reshape to.
struct SpatialInfo {
  int grid_h = 0;
  int grid_w = 0;
  bool tokens = false;
};

// An encoder network mapping (N, 3, side, side) -> (N, feature_dim).
struct BackboneNet {
  std::unique_ptr<nn::Sequential> net;
  std::string last_spatial;                  // default Grad-CAM tap
  std::map<std::string, SpatialInfo> spatial;  // tap-able layers
  int feature_dim = 0;
};

// Builds the requested family with seeded initialization. Pretrained weights
// (spec.checkpoint) are loaded by the model layer, not here.
BackboneNet build_backbone(const BackboneSpec& spec, Rng init);

}  // namespace mvdet
