#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mvdet/geometry.hpp"

namespace mvdet {

// Pluggable face detection. The library does not bundle a neural detector;
// production deployments plug one in here, tests and the synthetic pipeline
// use the sidecar-backed fixture below.
class FaceDetectorProvider {
public:
  virtual ~FaceDetectorProvider() = default;
  // `image_id` ties the pixels to an annotation source (usually the image's
  // manifest-relative path).
  virtual std::vector<FaceRecord> detect(const ImageBuffer& image,
                                         const std::string& image_id) = 0;
};

// Reads detections from a sidecar annotation file: one JSON object per line,
//   {"image": str, "box": [x0,y0,x1,y1], "landmarks": [[x,y] x5], "confidence": float}
class FixtureDetector : public FaceDetectorProvider {
public:
  explicit FixtureDetector(const std::filesystem::path& sidecar);

  std::vector<FaceRecord> detect(const ImageBuffer& image, const std::string& image_id) override;

  size_t annotated_images() const { return records_.size(); }

private:
  std::map<std::string, std::vector<FaceRecord>> records_;
};

// Runs the provider and applies the landmark sanity gate to every record.
std::vector<FaceRecord> detect_faces(const ImageBuffer& image, const std::string& image_id,
                                     FaceDetectorProvider& provider);

}  // namespace mvdet
