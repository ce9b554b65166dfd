#include "mvdet/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mvdet/error.hpp"
#include "mvdet/image_io.hpp"
#include "mvdet/rng.hpp"

namespace mvdet {

using nlohmann::json;

std::vector<int> sample_frames(int frame_count, int stride) {
  if (stride < 1) throw ConfigError("frame stride must be >= 1");
  if (frame_count < 0) throw ConfigError("frame count must be >= 0");
  std::vector<int> out;
  for (int i = 0; i < frame_count; i += stride) out.push_back(i);
  return out;
}

DatasetManifest make_splits(std::vector<ManifestEntry> entries, uint64_t seed) {
  std::array<std::vector<size_t>, 2> by_label;
  for (size_t i = 0; i < entries.size(); ++i) {
    const int l = entries[i].label;
    if (l != 0 && l != 1) throw ConfigError("make_splits: label must be 0 or 1");
    by_label[size_t(l)].push_back(i);
  }
  Rng root = Rng(seed).child("split");
  for (int l = 0; l < 2; ++l) {
    auto& idx = by_label[size_t(l)];
    if (idx.size() < 7)
      throw ConfigError("make_splits: need at least 7 entries per label, label " +
                        std::to_string(l) + " has " + std::to_string(idx.size()));
    Rng stream = root.child(uint64_t(l));
    stream.shuffle(idx);
    const size_t n = idx.size();
    const size_t n_train = size_t(std::llround(0.70 * double(n)));
    const size_t n_val = size_t(std::llround(0.15 * double(n)));
    for (size_t k = 0; k < n; ++k) {
      ManifestEntry& e = entries[idx[k]];
      e.split = k < n_train ? "train" : (k < n_train + n_val ? "val" : "test");
    }
  }
  DatasetManifest m;
  m.seed = seed;
  m.entries = std::move(entries);
  m.validate();
  return m;
}

std::string to_string(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::CentralBlendSeam: return "central-blend-seam";
    case ArtifactKind::PatchNoise: return "patch-noise";
    case ArtifactKind::ColorMismatch: return "color-mismatch";
  }
  return "?";
}

ArtifactKind artifact_from_string(const std::string& s) {
  if (s == "central-blend-seam") return ArtifactKind::CentralBlendSeam;
  if (s == "patch-noise") return ArtifactKind::PatchNoise;
  if (s == "color-mismatch") return ArtifactKind::ColorMismatch;
  throw ConfigError("unknown artifact kind '" + s + "'");
}

void SyntheticSpec::validate() const {
  if (count_per_class < 2) throw ConfigError("synthetic count must be >= 2 per class");
  if (image_side < 64) throw ConfigError("synthetic image side must be >= 64");
  double sum = 0.0;
  for (double w : pose_weights) {
    if (w < 0.0) throw ConfigError("pose weights must be non-negative");
    sum += w;
  }
  if (sum <= 0.0) throw ConfigError("pose weights must not all be zero");
}

namespace {

// tilt (roll, radians) and pan (fraction) per pose class; class 0 is frontal,
// 1-6 pan left/right, 7-12 tilt
constexpr std::array<double, 13> kPan = {0, -0.45, -0.30, -0.15, 0.15, 0.30, 0.45,
                                         0, 0, 0, 0, 0, 0};
constexpr std::array<double, 13> kRollDeg = {0, 0, 0, 0, 0, 0, 0,
                                             -35, -22, -11, 11, 22, 35};

// largest-remainder allocation of `count` items over the 13 pose weights,
// then a seeded shuffle; keeps per-class counts within one of proportional
std::vector<int> pose_allocation(const SyntheticSpec& spec, int label) {
  double sum = 0.0;
  for (double w : spec.pose_weights) sum += w;
  std::array<int, 13> counts{};
  std::array<std::pair<double, int>, 13> remainders;
  int assigned = 0;
  for (int c = 0; c < 13; ++c) {
    const double exact = double(spec.count_per_class) * spec.pose_weights[size_t(c)] / sum;
    counts[size_t(c)] = int(exact);
    assigned += counts[size_t(c)];
    remainders[size_t(c)] = {exact - double(counts[size_t(c)]), c};
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });
  for (int k = 0; assigned < spec.count_per_class; ++k, ++assigned)
    ++counts[size_t(remainders[size_t(k % 13)].second)];

  std::vector<int> classes;
  classes.reserve(size_t(spec.count_per_class));
  for (int c = 0; c < 13; ++c)
    for (int i = 0; i < counts[size_t(c)]; ++i) classes.push_back(c);
  Rng(spec.seed).child("pose").child(uint64_t(label)).shuffle(classes);
  return classes;
}

double pixel_noise(uint64_t seed, int x, int y, int c, double amp) {
  uint64_t z = seed ^ (uint64_t(uint32_t(x)) << 40) ^ (uint64_t(uint32_t(y)) << 18) ^
               uint64_t(uint32_t(c));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return (double(z >> 11) * 0x1.0p-53 * 2.0 - 1.0) * amp;
}

uint8_t quantize(double v) { return uint8_t(std::clamp<long>(std::lround(v), 0, 255)); }

void draw_soft_ellipse(ImageBuffer& img, double ecx, double ecy, double erx, double ery,
                       double roll, const std::array<double, 3>& color) {
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double reach = std::max(erx, ery) + 2.0;
  const int x0 = std::max(0, int(ecx - reach)), x1 = std::min(img.width - 1, int(ecx + reach));
  const int y0 = std::max(0, int(ecy - reach)), y1 = std::min(img.height - 1, int(ecy + reach));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - ecx, dy = y - ecy;
      const double u = dx * cr + dy * sr, v = -dx * sr + dy * cr;
      const double rho = std::sqrt((u / erx) * (u / erx) + (v / ery) * (v / ery));
      const double alpha = std::clamp((1.05 - rho) / 0.10, 0.0, 1.0);
      if (alpha <= 0.0) continue;
      for (int c = 0; c < 3; ++c) {
        const double base = img.at(x, y, c);
        img.at(x, y, c) = quantize(base * (1.0 - alpha) + color[size_t(c)] * alpha);
      }
    }
}

// scaled-toward-centroid copy of a hull polygon
std::vector<Point2> shrink_hull(const std::vector<Point2>& hull, double t) {
  double cx = 0, cy = 0;
  for (const Point2& p : hull) {
    cx += p.x;
    cy += p.y;
  }
  cx /= double(hull.size());
  cy /= double(hull.size());
  std::vector<Point2> out;
  out.reserve(hull.size());
  for (const Point2& p : hull) out.push_back({cx + t * (p.x - cx), cy + t * (p.y - cy)});
  return out;
}

}  // namespace

FaceLandmarks SynthItemParams::landmarks() const {
  const double cr = std::cos(roll), sr = std::sin(roll);
  auto place = [&](double ox, double oy) -> Point2 {
    const double px = ox + pan_shift;
    return {cx + px * cr - oy * sr, cy + px * sr + oy * cr};
  };
  FaceLandmarks lm;
  lm.left_eye = place(-0.42 * rx, -0.32 * ry);
  lm.right_eye = place(0.42 * rx, -0.32 * ry);
  lm.nose = place(0.0, 0.08 * ry);
  lm.mouth_left = place(-0.30 * rx, 0.45 * ry);
  lm.mouth_right = place(0.30 * rx, 0.45 * ry);
  return lm;
}

BoundingBox SynthItemParams::face_box() const {
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double ax = std::sqrt(rx * rx * cr * cr + ry * ry * sr * sr);
  const double ay = std::sqrt(rx * rx * sr * sr + ry * ry * cr * cr);
  return {cx - 1.08 * ax, cy - 1.08 * ay, cx + 1.08 * ax, cy + 1.08 * ay};
}

FaceRecord SynthItemParams::face_record(const std::string& image) const {
  FaceRecord f;
  f.box = face_box();
  f.landmarks = landmarks();
  f.source_image = image;
  f.detector_confidence = confidence;
  apply_landmark_gate(f);
  return f;
}

SynthItemParams synth_item_params(const SyntheticSpec& spec, int index, int label) {
  spec.validate();
  if (index < 0 || index >= spec.count_per_class)
    throw ConfigError("synthetic item index out of range");
  SynthItemParams p;
  p.index = index;
  p.label = label;
  p.side = spec.image_side;
  p.pose_class = pose_allocation(spec, label)[size_t(index)];

  Rng item = Rng(spec.seed).child("item").child((uint64_t(label) << 32) | uint64_t(index));
  const double s = double(spec.image_side);
  p.cx = s * (0.5 + item.uniform(-0.05, 0.05));
  p.cy = s * (0.52 + item.uniform(-0.05, 0.05));
  const double base_rx = s * (0.26 + item.uniform(-0.03, 0.03));
  p.ry = s * (0.34 + item.uniform(-0.03, 0.03));
  const double pan = kPan[size_t(p.pose_class)];
  p.rx = base_rx * (1.0 - 0.45 * std::abs(pan));
  p.pan_shift = pan * 0.35 * p.rx;
  p.roll = kRollDeg[size_t(p.pose_class)] * M_PI / 180.0;

  p.skin = {205 + item.uniform(-18, 18), 164 + item.uniform(-16, 16), 138 + item.uniform(-14, 14)};
  p.bg_top = {70 + item.uniform(-30, 30), 85 + item.uniform(-30, 30), 110 + item.uniform(-30, 30)};
  p.bg_bottom = {40 + item.uniform(-20, 20), 50 + item.uniform(-20, 20), 65 + item.uniform(-20, 20)};
  p.noise_seed = item.next_u64();
  p.artifact_seed = item.next_u64();
  p.confidence = 0.9 + item.uniform(0.0, 0.1);
  return p;
}

ImageBuffer render_face(const SynthItemParams& p) {
  ImageBuffer img(p.side, p.side);
  const double cr = std::cos(p.roll), sr = std::sin(p.roll);

  for (int y = 0; y < p.side; ++y) {
    const double t = double(y) / double(p.side - 1);
    for (int x = 0; x < p.side; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double bg = p.bg_top[size_t(c)] * (1.0 - t) + p.bg_bottom[size_t(c)] * t +
                          pixel_noise(p.noise_seed, x, y, c, 3.0);
        img.at(x, y, c) = quantize(bg);
      }
      const double dx = x - p.cx, dy = y - p.cy;
      const double u = dx * cr + dy * sr, v = -dx * sr + dy * cr;
      const double rho2 = (u / p.rx) * (u / p.rx) + (v / p.ry) * (v / p.ry);
      if (rho2 > 1.10) continue;
      const double rho = std::sqrt(rho2);
      const double alpha = std::clamp((1.04 - rho) / 0.08, 0.0, 1.0);
      if (alpha <= 0.0) continue;
      const double shade = 1.0 - 0.22 * rho2;
      for (int c = 0; c < 3; ++c) {
        const double skin =
            p.skin[size_t(c)] * shade + pixel_noise(p.noise_seed ^ 0x5eedULL, x, y, c, 4.0);
        const double base = img.at(x, y, c);
        img.at(x, y, c) = quantize(base * (1.0 - alpha) + skin * alpha);
      }
    }
  }

  const FaceLandmarks lm = p.landmarks();
  const std::array<double, 3> eye_color{42, 32, 30};
  const std::array<double, 3> nose_color{p.skin[0] * 0.72, p.skin[1] * 0.70, p.skin[2] * 0.70};
  const std::array<double, 3> mouth_color{128, 46, 50};
  draw_soft_ellipse(img, lm.left_eye.x, lm.left_eye.y, 0.13 * p.rx, 0.085 * p.ry, p.roll,
                    eye_color);
  draw_soft_ellipse(img, lm.right_eye.x, lm.right_eye.y, 0.13 * p.rx, 0.085 * p.ry, p.roll,
                    eye_color);
  draw_soft_ellipse(img, lm.nose.x, lm.nose.y, 0.065 * p.rx, 0.095 * p.ry, p.roll, nose_color);
  const double mx = 0.5 * (lm.mouth_left.x + lm.mouth_right.x);
  const double my = 0.5 * (lm.mouth_left.y + lm.mouth_right.y);
  const double half = 0.5 * std::hypot(lm.mouth_right.x - lm.mouth_left.x,
                                       lm.mouth_right.y - lm.mouth_left.y);
  draw_soft_ellipse(img, mx, my, half * 1.12, 0.06 * p.ry, p.roll, mouth_color);
  return img;
}

void inject_artifact(ImageBuffer& image, const SynthItemParams& p, ArtifactKind kind) {
  const auto pts = p.landmarks().points();
  const std::vector<Point2> hull = convex_hull(pts);
  const std::vector<Point2> support = shrink_hull(hull, 0.94);
  const std::vector<Point2> ring = shrink_hull(hull, 0.86);
  const ImageBuffer original = image;

  double min_x = support[0].x, max_x = support[0].x, min_y = support[0].y, max_y = support[0].y;
  for (const Point2& q : support) {
    min_x = std::min(min_x, q.x);
    max_x = std::max(max_x, q.x);
    min_y = std::min(min_y, q.y);
    max_y = std::max(max_y, q.y);
  }
  const int x0 = std::max(0, int(std::floor(min_x))), x1 = std::min(image.width - 1, int(std::ceil(max_x)));
  const int y0 = std::max(0, int(std::floor(min_y))), y1 = std::min(image.height - 1, int(std::ceil(max_y)));

  auto blurred = [&](int x, int y, int c) {
    double acc = 0.0;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int sx = std::clamp(x + dx, 0, image.width - 1);
        const int sy = std::clamp(y + dy, 0, image.height - 1);
        acc += original.at(sx, sy, c);
      }
    return acc / 9.0;
  };

  switch (kind) {
    case ArtifactKind::CentralBlendSeam: {
      const std::array<double, 3> shift{14.0, -6.0, -10.0};
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const Point2 q{double(x), double(y)};
          if (distance_to_hull(support, q) > 0.0) continue;
          const bool on_seam = distance_to_hull(ring, q) > 0.0;
          for (int c = 0; c < 3; ++c) {
            double v = 0.62 * original.at(x, y, c) + 0.38 * (blurred(x, y, c) + shift[size_t(c)]);
            if (on_seam) v -= 26.0;
            image.at(x, y, c) = quantize(v);
          }
        }
      break;
    }
    case ArtifactKind::PatchNoise: {
      Rng rng(p.artifact_seed);
      for (int patch = 0; patch < 4; ++patch) {
        Point2 center{};
        bool found = false;
        for (int attempt = 0; attempt < 64 && !found; ++attempt) {
          center = {rng.uniform(min_x, max_x), rng.uniform(min_y, max_y)};
          found = distance_to_hull(ring, center) == 0.0;
        }
        if (!found) continue;
        const int hw = int(rng.uniform_int(4, 9)), hh = int(rng.uniform_int(4, 9));
        for (int y = std::max(y0, int(center.y) - hh); y <= std::min(y1, int(center.y) + hh); ++y)
          for (int x = std::max(x0, int(center.x) - hw); x <= std::min(x1, int(center.x) + hw);
               ++x) {
            if (distance_to_hull(support, {double(x), double(y)}) > 0.0) continue;
            for (int c = 0; c < 3; ++c)
              image.at(x, y, c) = quantize(
                  image.at(x, y, c) +
                  pixel_noise(p.artifact_seed ^ uint64_t(patch + 1), x, y, c, 30.0));
          }
      }
      break;
    }
    case ArtifactKind::ColorMismatch: {
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          if (distance_to_hull(support, {double(x), double(y)}) > 0.0) continue;
          const double r = original.at(x, y, 0), g = original.at(x, y, 1), b = original.at(x, y, 2);
          image.at(x, y, 0) = quantize(1.06 * r + 11.0);
          image.at(x, y, 1) = quantize(0.90 * g);
          image.at(x, y, 2) = quantize(1.03 * b + 9.0);
        }
      break;
    }
  }
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec,
                                   const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create output directory " + (out_dir / "images").string() + ": " +
                        ec.message());

  std::vector<ManifestEntry> entries;
  for (int label = 0; label < 2; ++label) {
    for (int i = 0; i < spec.count_per_class; ++i) {
      const SynthItemParams params = synth_item_params(spec, i, label);
      ImageBuffer img = render_face(params);
      if (label == 1) inject_artifact(img, params, spec.artifact);

      char name[32];
      std::snprintf(name, sizeof(name), "%s_%04d.png", label == 1 ? "fake" : "real", i);
      const std::string rel = std::string("images/") + name;
      write_image(img, out_dir / rel);

      ManifestEntry e;
      e.image = rel;
      e.label = label;
      e.pose_class = params.pose_class;
      e.faces.push_back(params.face_record(rel));
      entries.push_back(std::move(e));
    }
  }

  DatasetManifest manifest = make_splits(std::move(entries), spec.seed);
  manifest.source = "synthetic:" + to_string(spec.artifact);
  manifest.save(out_dir / "manifest.jsonl");

  std::ofstream ann(out_dir / "annotations.jsonl", std::ios::trunc);
  if (!ann) throw IoError("cannot write annotations: " + (out_dir / "annotations.jsonl").string());
  for (const ManifestEntry& e : manifest.entries)
    for (const FaceRecord& f : e.faces) {
      json lm = json::array();
      for (const Point2& pt : f.landmarks.points()) lm.push_back({pt.x, pt.y});
      ann << json{{"image", e.image},
                  {"box", {f.box.x0, f.box.y0, f.box.x1, f.box.y1}},
                  {"landmarks", lm},
                  {"confidence", f.detector_confidence}}
                 .dump()
          << "\n";
    }
  return manifest;
}

}  // namespace mvdet
