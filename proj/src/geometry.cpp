#include "mvdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvdet/error.hpp"

namespace mvdet {

double BoundingBox::diagonal() const { return std::hypot(width(), height()); }

BoundingBox BoundingBox::clipped(double w, double h) const {
  return {std::max(x0, 0.0), std::max(y0, 0.0), std::min(x1, w), std::min(y1, h)};
}

IntRect rasterize_box(const BoundingBox& box) {
  return {int(std::floor(box.x0)), int(std::floor(box.y0)), int(std::ceil(box.x1)),
          int(std::ceil(box.y1))};
}

IntRect clip_rect(const IntRect& r, int image_w, int image_h) {
  return {std::max(r.x0, 0), std::max(r.y0, 0), std::min(r.x1, image_w), std::min(r.y1, image_h)};
}

void apply_landmark_gate(FaceRecord& record) {
  const BoundingBox gate = record.box.expanded(0.25 * record.box.diagonal());
  record.gate_warning = false;
  for (const Point2& p : record.landmarks.points()) {
    if (!gate.contains(p)) {
      record.gate_warning = true;
      return;
    }
  }
}

namespace {

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<Point2> convex_hull(std::span<const Point2> points) {
  std::vector<Point2> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const size_t n = pts.size();
  if (n <= 2) return pts;

  std::vector<Point2> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {  // lower chain
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = n - 1, t = k + 1; i-- > 0;) {  // upper chain
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3) {  // all collinear
    auto [mn, mx] = std::minmax_element(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
      return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    return {*mn, *mx};
  }
  return hull;
}

namespace {

double point_segment_distance(Point2 p, Point2 a, Point2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

}  // namespace

double distance_to_hull(std::span<const Point2> hull, Point2 p) {
  if (hull.empty()) return std::numeric_limits<double>::infinity();
  if (hull.size() == 1) return std::hypot(p.x - hull[0].x, p.y - hull[0].y);
  if (hull.size() == 2) return point_segment_distance(p, hull[0], hull[1]);

  // hull is CCW in a y-down frame; p is inside iff it is on the non-positive
  // side of every edge
  bool inside = true;
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < hull.size(); ++i) {
    const Point2& a = hull[i];
    const Point2& b = hull[(i + 1) % hull.size()];
    if (cross(a, b, p) > 0) inside = false;
    best = std::min(best, point_segment_distance(p, a, b));
  }
  return inside ? 0.0 : best;
}

BoundingBox local_region(const FaceLandmarks& landmarks, double margin) {
  const auto pts = landmarks.points();
  bool all_identical = true;
  for (const Point2& p : pts)
    if (!(p == pts[0])) {
      all_identical = false;
      break;
    }
  if (all_identical)
    throw GeometryError("degenerate landmark geometry: all five landmarks coincide");

  const std::vector<Point2> hull = convex_hull(pts);
  double min_x = hull[0].x, max_x = hull[0].x, min_y = hull[0].y, max_y = hull[0].y;
  for (const Point2& p : hull) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  return {min_x - margin, min_y - margin, max_x + margin, max_y + margin};
}

BoundingBox global_region(const BoundingBox& middle, double expand, int image_w, int image_h) {
  return middle.expanded(expand).clipped(double(image_w), double(image_h));
}

ImageBuffer crop(const ImageBuffer& image, const BoundingBox& box) {
  const IntRect r = clip_rect(rasterize_box(box), image.width, image.height);
  if (r.empty()) throw EmptyCropError("crop box lies entirely outside the image");
  ImageBuffer out(r.width(), r.height());
  for (int y = 0; y < r.height(); ++y) {
    const uint8_t* src = &image.data[(size_t(y + r.y0) * image.width + r.x0) * 3];
    uint8_t* dst = &out.data[size_t(y) * r.width() * 3];
    std::copy(src, src + size_t(r.width()) * 3, dst);
  }
  return out;
}

ViewImage resize_pad(const ImageBuffer& source, int side) {
  if (!source.valid()) throw GeometryError("resize_pad: empty source crop");

  const int w = source.width, h = source.height;
  const double scale = double(side) / double(std::max(w, h));
  int out_w, out_h;
  if (w >= h) {
    out_w = side;
    out_h = std::max(1, int(std::lround(h * scale)));
  } else {
    out_h = side;
    out_w = std::max(1, int(std::lround(w * scale)));
  }
  const int pad_x = (side - out_w) / 2;
  const int pad_y = (side - out_h) / 2;

  ViewImage view;
  view.image = ImageBuffer(side, side, 0);
  view.meta = {scale, pad_x, pad_y, out_w, out_h, IntRect{0, 0, w, h}};

  // bilinear resample into the content window; pad pixels stay exactly zero
  const double sx = double(w) / double(out_w);
  const double sy = double(h) / double(out_h);
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, double(h - 1));
    const int y0 = int(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    uint8_t* dst = &view.image.data[(size_t(oy + pad_y) * side + pad_x) * 3];
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, double(w - 1));
      const int x0 = int(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v00 = source.at(x0, y0, c), v10 = source.at(x1, y0, c);
        const double v01 = source.at(x0, y1, c), v11 = source.at(x1, y1, c);
        const double v = (1 - wy) * ((1 - wx) * v00 + wx * v10) +
                         wy * ((1 - wx) * v01 + wx * v11);
        dst[size_t(ox) * 3 + c] = uint8_t(std::clamp<long>(std::lround(v), 0, 255));
      }
    }
  }
  return view;
}

ViewTriple extract_views(const ImageBuffer& image, const FaceRecord& face,
                         const ViewParams& params) {
  if (!image.valid()) throw GeometryError("extract_views: invalid image");

  const BoundingBox middle = face.box.clipped(double(image.width), double(image.height));
  if (!middle.valid()) throw EmptyCropError("face box lies outside the image");
  const BoundingBox global = global_region(middle, params.expand, image.width, image.height);
  const BoundingBox local = local_region(face.landmarks, params.margin);

  auto make_view = [&](const BoundingBox& box) {
    const IntRect region = clip_rect(rasterize_box(box), image.width, image.height);
    ViewImage v = resize_pad(crop(image, box), params.side);
    v.meta.region = region;
    return v;
  };

  ViewTriple views;
  views.global_view = make_view(global);
  views.middle_view = make_view(middle);
  views.local_view = make_view(local);
  return views;
}

}  // namespace mvdet
