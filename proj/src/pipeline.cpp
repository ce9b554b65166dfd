#include "mvdet/pipeline.hpp"

#include <fstream>

#include <json.hpp>

#include "mvdet/error.hpp"
#include "mvdet/image_io.hpp"

namespace mvdet {

using nlohmann::json;

namespace {

constexpr const char* kSchema = "mvdet.views.v1";

json pad_to_json(const PadMeta& m) {
  return {{"scale", m.scale},
          {"pad", {m.pad_x, m.pad_y}},
          {"content", {m.content_w, m.content_h}},
          {"region", {m.region.x0, m.region.y0, m.region.x1, m.region.y1}}};
}

PadMeta pad_from_json(const json& j) {
  PadMeta m;
  m.scale = j.at("scale").get<double>();
  m.pad_x = j.at("pad").at(0).get<int>();
  m.pad_y = j.at("pad").at(1).get<int>();
  m.content_w = j.at("content").at(0).get<int>();
  m.content_h = j.at("content").at(1).get<int>();
  const json& r = j.at("region");
  m.region = {r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()};
  return m;
}

std::string sanitize(const std::string& rel) {
  std::string out = rel;
  for (char& c : out)
    if (c == '/' || c == '\\' || c == '.') c = '_';
  return out;
}

}  // namespace

void ViewIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write view index: " + path.string());
  out << json{{"schema", kSchema},
              {"config_hash", config_hash},
              {"margin", params.margin},
              {"expand", params.expand},
              {"side", params.side}}
             .dump()
      << "\n";
  for (const ViewRecord& r : records) {
    json lm = json::array();
    for (const Point2& p : r.landmarks.points()) lm.push_back({p.x, p.y});
    out << json{{"image", r.image},
                {"face", r.face_index},
                {"label", r.label},
                {"split", r.split},
                {"pose_class", r.pose_class},
                {"global", {{"file", r.global_file}, {"pad", pad_to_json(r.global_meta)}}},
                {"middle", {{"file", r.middle_file}, {"pad", pad_to_json(r.middle_meta)}}},
                {"local", {{"file", r.local_file}, {"pad", pad_to_json(r.local_meta)}}},
                {"box", {r.box.x0, r.box.y0, r.box.x1, r.box.y1}},
                {"landmarks", lm}}
               .dump()
        << "\n";
  }
  if (!out) throw IoError("short view index write: " + path.string());
}

ViewIndex ViewIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open view index: " + path.string());
  ViewIndex idx;
  std::string line;
  long line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      if (!header) {
        if (j.value("schema", "") != kSchema)
          throw std::runtime_error("expected view index schema " + std::string(kSchema));
        idx.config_hash = j.value("config_hash", "");
        idx.params.margin = j.value("margin", 15.0);
        idx.params.expand = j.value("expand", 20.0);
        idx.params.side = j.value("side", 224);
        header = true;
        continue;
      }
      ViewRecord r;
      r.image = j.at("image").get<std::string>();
      r.face_index = j.at("face").get<int>();
      r.label = j.at("label").get<int>();
      r.split = j.value("split", "");
      r.pose_class = j.value("pose_class", -1);
      r.global_file = j.at("global").at("file").get<std::string>();
      r.global_meta = pad_from_json(j.at("global").at("pad"));
      r.middle_file = j.at("middle").at("file").get<std::string>();
      r.middle_meta = pad_from_json(j.at("middle").at("pad"));
      r.local_file = j.at("local").at("file").get<std::string>();
      r.local_meta = pad_from_json(j.at("local").at("pad"));
      const json& b = j.at("box");
      r.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
               b.at(3).get<double>()};
      const json& lm = j.at("landmarks");
      std::array<Point2, 5> pts;
      for (size_t i = 0; i < 5; ++i)
        pts[i] = {lm.at(i).at(0).get<double>(), lm.at(i).at(1).get<double>()};
      r.landmarks = FaceLandmarks::from_points(pts);
      idx.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ParseError("malformed view index: " + std::string(e.what()), line_no);
    }
  }
  if (!header) throw ParseError("view index missing header: " + path.string());
  return idx;
}

ViewIndex preprocess_dataset(const DatasetManifest& manifest,
                             const std::filesystem::path& images_root,
                             const std::filesystem::path& out_dir, const ViewParams& params,
                             const std::string& config_hash) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "views", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "views").string() + ": " + ec.message());

  ViewIndex idx;
  idx.config_hash = config_hash;
  idx.params = params;
  for (const ManifestEntry& entry : manifest.entries) {
    if (entry.faces.empty()) continue;
    const ImageBuffer image = read_image(images_root / entry.image);
    for (size_t fi = 0; fi < entry.faces.size(); ++fi) {
      const ViewTriple views = extract_views(image, entry.faces[fi], params);
      ViewRecord r;
      r.image = entry.image;
      r.face_index = int(fi);
      r.label = entry.label;
      r.split = entry.split;
      r.pose_class = entry.pose_class;
      r.box = entry.faces[fi].box;
      r.landmarks = entry.faces[fi].landmarks;

      const std::string stem = sanitize(entry.image) + "_f" + std::to_string(fi);
      r.global_file = "views/" + stem + "_global.png";
      r.middle_file = "views/" + stem + "_middle.png";
      r.local_file = "views/" + stem + "_local.png";
      write_image(views.global_view.image, out_dir / r.global_file);
      write_image(views.middle_view.image, out_dir / r.middle_file);
      write_image(views.local_view.image, out_dir / r.local_file);
      r.global_meta = views.global_view.meta;
      r.middle_meta = views.middle_view.meta;
      r.local_meta = views.local_view.meta;
      idx.records.push_back(std::move(r));
    }
  }
  idx.save(out_dir / "views.jsonl");
  return idx;
}

Tensor view_to_tensor(const ImageBuffer& view) {
  Tensor t({3, view.height, view.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < view.height; ++y)
      for (int x = 0; x < view.width; ++x) t.at(c, y, x) = view.at(x, y, c) / 255.0;
  return t;
}

ViewDataset ViewDataset::load(const ViewIndex& index, const std::filesystem::path& views_root,
                              const std::string& split, bool need_global, bool need_middle,
                              bool need_local) {
  ViewDataset ds;
  ds.side_ = index.params.side;
  ds.has_global_ = need_global;
  ds.has_middle_ = need_middle;
  ds.has_local_ = need_local;
  for (const ViewRecord& r : index.records) {
    if (!split.empty() && r.split != split) continue;
    Item item;
    item.label = r.label;
    item.pose_class = r.pose_class;
    item.record = r;
    if (need_global) item.global = read_image(views_root / r.global_file);
    if (need_middle) item.middle = read_image(views_root / r.middle_file);
    if (need_local) item.local = read_image(views_root / r.local_file);
    ds.items_.push_back(std::move(item));
  }
  return ds;
}

ViewBatch ViewDataset::make_batch(const std::vector<int>& indices) const {
  const int n = int(indices.size());
  ViewBatch batch;
  auto fill = [&](bool present, ImageBuffer Item::*member, Tensor ViewBatch::*out) {
    if (!present) return;
    Tensor t({n, 3, side_, side_});
    for (int i = 0; i < n; ++i) {
      const ImageBuffer& img = items_[size_t(indices[size_t(i)])].*member;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < side_; ++y)
          for (int x = 0; x < side_; ++x) t.at(i, c, y, x) = img.at(x, y, c) / 255.0;
    }
    batch.*out = std::move(t);
  };
  fill(has_global_, &Item::global, &ViewBatch::global);
  fill(has_middle_, &Item::middle, &ViewBatch::middle);
  fill(has_local_, &Item::local, &ViewBatch::local);
  return batch;
}

Tensor ViewDataset::labels(const std::vector<int>& indices) const {
  Tensor t({int(indices.size())});
  for (size_t i = 0; i < indices.size(); ++i) t[int64_t(i)] = items_[size_t(indices[i])].label;
  return t;
}

std::vector<int> ViewDataset::pose_classes(const std::vector<int>& indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(items_[size_t(i)].pose_class);
  return out;
}

std::vector<int> ViewDataset::all_indices() const {
  std::vector<int> out(items_.size());
  for (size_t i = 0; i < items_.size(); ++i) out[i] = int(i);
  return out;
}

}  // namespace mvdet
