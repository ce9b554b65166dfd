#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "mvdet/image.hpp"

namespace mvdet {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

// The five-landmark set produced by face detection: two eyes, nose tip, two
// mouth corners.
struct FaceLandmarks {
  Point2 left_eye, right_eye, nose, mouth_left, mouth_right;

  std::array<Point2, 5> points() const {
    return {left_eye, right_eye, nose, mouth_left, mouth_right};
  }
  static FaceLandmarks from_points(const std::array<Point2, 5>& p) {
    return {p[0], p[1], p[2], p[3], p[4]};
  }
  bool operator==(const FaceLandmarks&) const = default;
};

// Axis-aligned box in pixel coordinates, half-open on the max side once
// rasterized.
struct BoundingBox {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double diagonal() const;
  bool valid() const { return x0 < x1 && y0 < y1; }
  bool contains(Point2 p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
  bool contains(const BoundingBox& b) const {
    return b.x0 >= x0 && b.y0 >= y0 && b.x1 <= x1 && b.y1 <= y1;
  }
  BoundingBox expanded(double margin) const {
    return {x0 - margin, y0 - margin, x1 + margin, y1 + margin};
  }
  BoundingBox clipped(double w, double h) const;
  bool operator==(const BoundingBox&) const = default;
};

// Integer pixel rectangle, half-open: [x0, x1) x [y0, y1).
struct IntRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool operator==(const IntRect&) const = default;
};

// Boxes are rounded outward before cropping so landmark-adjacent pixels are
// never dropped.
IntRect rasterize_box(const BoundingBox& box);
IntRect clip_rect(const IntRect& r, int image_w, int image_h);

// One detected face.
struct FaceRecord {
  BoundingBox box;
  FaceLandmarks landmarks;
  std::string source_image;
  double detector_confidence = 1.0;
  // set when a landmark falls outside the box expanded by 25% of its
  // diagonal; the record is still usable
  bool gate_warning = false;
};

// Checks the landmark sanity gate and stamps gate_warning accordingly.
void apply_landmark_gate(FaceRecord& record);

// Convex hull of a point set (Andrew monotone chain), counter-clockwise in a
// y-down frame, collinear points removed. Degenerate inputs yield fewer than
// three vertices: a segment's two endpoints or a single point.
std::vector<Point2> convex_hull(std::span<const Point2> points);

// Euclidean distance from p to a convex polygon (0 inside). Accepts the
// degenerate 1- and 2-vertex hulls produced above.
double distance_to_hull(std::span<const Point2> hull, Point2 p);

// Local view region: convex hull of the landmarks dilated by `margin`, then
// the axis-aligned bounding box of the dilated hull. Dilating a convex
// polygon by a disc moves its AABB outward by exactly the margin, so this is
// AABB(hull vertices) +/- margin. Throws GeometryError when all five
// landmarks coincide.
BoundingBox local_region(const FaceLandmarks& landmarks, double margin = 15.0);

// Global view region: each side of the middle box moved outward by `expand`,
// clipped to the image bounds.
BoundingBox global_region(const BoundingBox& middle, double expand, int image_w, int image_h);

// Copies the rasterized box out of the image, clipping to the image bounds.
// Throws EmptyCropError when the box misses the image entirely.
ImageBuffer crop(const ImageBuffer& image, const BoundingBox& box);

// How a crop was placed inside its fixed-size view; enough to map view
// coordinates back to source-image coordinates.
struct PadMeta {
  double scale = 1.0;   // view pixels per source pixel
  int pad_x = 0;        // left offset of the content inside the view
  int pad_y = 0;        // top offset
  int content_w = 0;
  int content_h = 0;
  IntRect region;       // source rectangle the content was cropped from

  // view coords -> source image coords (center-of-pixel convention)
  Point2 to_image(Point2 view_pt) const {
    return {region.x0 + (view_pt.x - pad_x + 0.5) / scale - 0.5,
            region.y0 + (view_pt.y - pad_y + 0.5) / scale - 0.5};
  }
};

struct ViewImage {
  ImageBuffer image;
  PadMeta meta;
};

// Scales the longest side of `source` to `side` with bilinear interpolation,
// centers the result, and fills the remainder with exact zeros.
ViewImage resize_pad(const ImageBuffer& source, int side = 224);

struct ViewParams {
  double margin = 15.0;  // local view hull dilation
  double expand = 20.0;  // global view outward expansion
  int side = 224;        // output view side
};

// The three aligned views for one face.
struct ViewTriple {
  ViewImage global_view, middle_view, local_view;
};

// Full pre-processing path for one face: middle = detector box (clipped),
// local = dilated landmark hull, global = expanded middle; each region is
// cropped and resize-padded to side x side.
ViewTriple extract_views(const ImageBuffer& image, const FaceRecord& face,
                         const ViewParams& params = {});

}  // namespace mvdet
