#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvdet/geometry.hpp"
#include "mvdet/manifest.hpp"
#include "mvdet/model.hpp"

namespace mvdet {

// One preprocessed face: the three view files plus everything needed to map
// view pixels back onto the source image.
struct ViewRecord {
  std::string image;
  int face_index = 0;
  int label = 0;
  std::string split;
  int pose_class = -1;
  std::string global_file, middle_file, local_file;
  PadMeta global_meta, middle_meta, local_meta;
  BoundingBox box;
  FaceLandmarks landmarks;
};

// Index of a preprocessed dataset (views.jsonl next to the view images).
struct ViewIndex {
  std::string config_hash;
  ViewParams params;
  std::vector<ViewRecord> records;

  void save(const std::filesystem::path& path) const;
  static ViewIndex load(const std::filesystem::path& path);
};

// Extracts and stores the three views for every face in the manifest.
// Entries without face records are skipped. Returns the index it wrote to
// out_dir/views.jsonl.
ViewIndex preprocess_dataset(const DatasetManifest& manifest,
                             const std::filesystem::path& images_root,
                             const std::filesystem::path& out_dir, const ViewParams& params,
                             const std::string& config_hash = "");

// scales a u8 view into a (3, S, S) double tensor in [0, 1]
Tensor view_to_tensor(const ImageBuffer& view);

// In-memory split of preprocessed views, ready for batching.
class ViewDataset {
public:
  struct Item {
    int label = 0;
    int pose_class = -1;
    ImageBuffer global, middle, local;  // empty when not loaded
    ViewRecord record;
  };

  static ViewDataset load(const ViewIndex& index, const std::filesystem::path& views_root,
                          const std::string& split, bool need_global, bool need_middle,
                          bool need_local);

  size_t size() const { return items_.size(); }
  const Item& item(size_t i) const { return items_[i]; }
  int side() const { return side_; }

  ViewBatch make_batch(const std::vector<int>& indices) const;
  Tensor labels(const std::vector<int>& indices) const;  // (N)
  std::vector<int> pose_classes(const std::vector<int>& indices) const;
  std::vector<int> all_indices() const;

private:
  std::vector<Item> items_;
  int side_ = 0;
  bool has_global_ = false, has_middle_ = false, has_local_ = false;
};

}  // namespace mvdet
