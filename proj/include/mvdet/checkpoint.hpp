#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mvdet/model.hpp"
#include "mvdet/tensor.hpp"

namespace mvdet {

// Versioned binary container: magic + version + meta JSON + named tensors +
// trailing checksum. Round-trips doubles bit-exactly.
struct TensorContainer {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void save(const std::filesystem::path& path) const;
  static TensorContainer load(const std::filesystem::path& path);
};

// Constructs the detector from config: seeded random init, then any
// configured pretrained weights (per-encoder backbone checkpoints and the
// model-level pose encoder checkpoint) are loaded on top.
DetectorModel build_model(const ModelConfig& config);

void save_checkpoint(DetectorModel& model, const std::filesystem::path& path,
                     const nlohmann::json& extra_meta = nlohmann::json::object());
DetectorModel load_checkpoint(const std::filesystem::path& path);
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

// Standalone encoder containers (pose pretraining, per-view warm-up).
void save_pose_encoder(PoseEncoder& enc, const BackboneSpec& spec,
                       const std::filesystem::path& path);
void load_pose_encoder(PoseEncoder& enc, const std::filesystem::path& path);
void save_view_encoder(ViewEncoder& enc, const BackboneSpec& spec,
                       const std::filesystem::path& path);
void load_view_encoder(ViewEncoder& enc, const std::filesystem::path& path);

}  // namespace mvdet
