#include "mvdet/detector.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mvdet/error.hpp"

namespace mvdet {

using nlohmann::json;

namespace {

Point2 parse_point(const json& j) {
  if (!j.is_array() || j.size() != 2) throw std::runtime_error("point must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

FaceRecord parse_record(const json& j) {
  FaceRecord rec;
  rec.source_image = j.at("image").get<std::string>();
  const json& b = j.at("box");
  if (!b.is_array() || b.size() != 4) throw std::runtime_error("box must be [x0,y0,x1,y1]");
  rec.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  if (!rec.box.valid()) throw std::runtime_error("box has non-positive extent");
  const json& lm = j.at("landmarks");
  if (!lm.is_array() || lm.size() != 5) throw std::runtime_error("landmarks must hold 5 points");
  std::array<Point2, 5> pts;
  for (size_t i = 0; i < 5; ++i) {
    pts[i] = parse_point(lm[i]);
    if (!std::isfinite(pts[i].x) || !std::isfinite(pts[i].y))
      throw std::runtime_error("non-finite landmark");
  }
  rec.landmarks = FaceLandmarks::from_points(pts);
  rec.detector_confidence = j.value("confidence", 1.0);
  if (rec.detector_confidence < 0.0 || rec.detector_confidence > 1.0)
    throw std::runtime_error("confidence outside [0,1]");
  return rec;
}

}  // namespace

FixtureDetector::FixtureDetector(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in)
    throw DetectionError("fixture detector: cannot open sidecar annotations: " + sidecar.string());
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
      records_[j.at("image").get<std::string>()].push_back(parse_record(j));
    } catch (const std::exception& e) {
      throw ParseError("malformed sidecar annotation: " + std::string(e.what()), line_no);
    }
  }
}

std::vector<FaceRecord> FixtureDetector::detect(const ImageBuffer& image,
                                                const std::string& image_id) {
  (void)image;
  auto it = records_.find(image_id);
  if (it == records_.end()) return {};
  return it->second;
}

std::vector<FaceRecord> detect_faces(const ImageBuffer& image, const std::string& image_id,
                                     FaceDetectorProvider& provider) {
  if (!image.valid()) throw DetectionError("detect_faces: invalid image");
  std::vector<FaceRecord> records = provider.detect(image, image_id);
  for (FaceRecord& rec : records) apply_landmark_gate(rec);
  return records;
}

}  // namespace mvdet
