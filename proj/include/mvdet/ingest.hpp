#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "mvdet/manifest.hpp"

namespace mvdet {

// Frame subsampling: ascending indices i with i % stride == 0 and
// i < frame_count.
std::vector<int> sample_frames(int frame_count, int stride = 10);

// Deterministic stratified 70/15/15 split by label. Requires at least 7
// entries per label; per-label split sizes land within one item of the exact
// fractions.
DatasetManifest make_splits(std::vector<ManifestEntry> entries, uint64_t seed);

enum class ArtifactKind { CentralBlendSeam, PatchNoise, ColorMismatch };

std::string to_string(ArtifactKind k);
ArtifactKind artifact_from_string(const std::string& s);

// Desk-scale synthetic dataset: procedural face templates (ellipse face,
// five-landmark layout driven by one of the 13 pose classes) with forgery
// artifacts injected strictly inside the landmark hull of fake samples.
struct SyntheticSpec {
  int count_per_class = 100;
  int image_side = 160;
  ArtifactKind artifact = ArtifactKind::CentralBlendSeam;
  std::array<double, 13> pose_weights{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  uint64_t seed = 1;

  void validate() const;
};

// Everything needed to re-render one synthetic item deterministically.
struct SynthItemParams {
  int index = 0;
  int label = 0;
  int pose_class = 0;
  int side = 160;
  uint64_t noise_seed = 0;   // per-pixel hash noise
  uint64_t artifact_seed = 0;
  double cx = 0, cy = 0;     // face center
  double rx = 0, ry = 0;     // ellipse radii (rx already pan-squashed)
  double roll = 0;           // tilt rotation, radians
  double pan_shift = 0;      // horizontal feature offset, pixels
  std::array<double, 3> skin{};
  std::array<double, 3> bg_top{}, bg_bottom{};
  double confidence = 1.0;

  FaceLandmarks landmarks() const;
  BoundingBox face_box() const;
  FaceRecord face_record(const std::string& image) const;
};

// Deterministic parameter derivation for item (index, label).
SynthItemParams synth_item_params(const SyntheticSpec& spec, int index, int label);

// Renders the pre-artifact base image for the given parameters.
ImageBuffer render_face(const SynthItemParams& params);

// Mutates the image in place; the modified support lies inside the convex
// hull of the item's landmarks.
void inject_artifact(ImageBuffer& image, const SynthItemParams& params, ArtifactKind kind);

// Writes images/, annotations.jsonl (sidecar format) and manifest.jsonl under
// out_dir; returns the split manifest. Fully deterministic for a fixed spec.
DatasetManifest generate_synthetic(const SyntheticSpec& spec,
                                   const std::filesystem::path& out_dir);

}  // namespace mvdet
