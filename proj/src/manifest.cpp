#include "mvdet/manifest.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "mvdet/error.hpp"

namespace mvdet {

using nlohmann::json;

namespace {

constexpr const char* kSchema = "mvdet.manifest.v1";

json face_to_json(const FaceRecord& f) {
  json lm = json::array();
  for (const Point2& p : f.landmarks.points()) lm.push_back({p.x, p.y});
  json j{{"box", {f.box.x0, f.box.y0, f.box.x1, f.box.y1}},
         {"landmarks", lm},
         {"confidence", f.detector_confidence}};
  if (f.gate_warning) j["gate_warning"] = true;
  return j;
}

FaceRecord face_from_json(const json& j, const std::string& image) {
  FaceRecord f;
  const json& b = j.at("box");
  f.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
           b.at(3).get<double>()};
  const json& lm = j.at("landmarks");
  if (lm.size() != 5) throw std::runtime_error("landmarks must hold 5 points");
  std::array<Point2, 5> pts;
  for (size_t i = 0; i < 5; ++i) pts[i] = {lm[i].at(0).get<double>(), lm[i].at(1).get<double>()};
  f.landmarks = FaceLandmarks::from_points(pts);
  f.detector_confidence = j.value("confidence", 1.0);
  f.gate_warning = j.value("gate_warning", false);
  f.source_image = image;
  return f;
}

}  // namespace

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  for (const ManifestEntry& e : entries) {
    if (!seen.insert(e.image).second)
      throw ConfigError("manifest lists image twice: " + e.image);
    if (e.label != 0 && e.label != 1)
      throw ConfigError("manifest label must be 0 or 1 for " + e.image);
    if (!e.split.empty() && e.split != "train" && e.split != "val" && e.split != "test")
      throw ConfigError("manifest split must be train/val/test for " + e.image);
  }
}

size_t DatasetManifest::count(const std::string& split, int label) const {
  size_t n = 0;
  for (const ManifestEntry& e : entries)
    if (e.split == split && e.label == label) ++n;
  return n;
}

std::vector<int> DatasetManifest::indices(const std::string& split) const {
  std::vector<int> out;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(int(i));
  return out;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << json{{"schema", kSchema}, {"seed", seed}, {"source", source}}.dump() << "\n";
  for (const ManifestEntry& e : entries) {
    json j{{"image", e.image}, {"label", e.label}, {"split", e.split}};
    if (e.pose_class >= 0) j["pose_class"] = e.pose_class;
    json faces = json::array();
    for (const FaceRecord& f : e.faces) faces.push_back(face_to_json(f));
    j["faces"] = faces;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("short manifest write: " + path.string());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  DatasetManifest m;
  std::string line;
  long line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
      if (!header_seen) {
        if (j.value("schema", "") != kSchema)
          throw std::runtime_error("expected manifest header with schema " + std::string(kSchema));
        m.seed = j.value("seed", uint64_t(0));
        m.source = j.value("source", "");
        header_seen = true;
        continue;
      }
      ManifestEntry e;
      e.image = j.at("image").get<std::string>();
      e.label = j.at("label").get<int>();
      e.split = j.value("split", "");
      e.pose_class = j.value("pose_class", -1);
      for (const json& fj : j.value("faces", json::array()))
        e.faces.push_back(face_from_json(fj, e.image));
      m.entries.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw ParseError("malformed manifest: " + std::string(ex.what()), line_no);
    }
  }
  if (!header_seen) throw ParseError("manifest missing header line: " + path.string());
  m.validate();
  return m;
}

}  // namespace mvdet
