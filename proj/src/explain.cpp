#include "mvdet/explain.hpp"

#include <algorithm>
#include <cmath>

#include "mvdet/error.hpp"

namespace mvdet {

Heatmap gradcam_from(const Tensor& activations, const Tensor& gradients) {
  if (activations.ndim() != 3 || !activations.same_shape(gradients))
    throw ConfigError("gradcam_from: expected matching (C,h,w) activation/gradient tensors");
  const int c = activations.dim(0), h = activations.dim(1), w = activations.dim(2);
  const int64_t hw = int64_t(h) * w;

  // channel weights: spatially averaged gradients
  std::vector<double> weights(size_t(c), 0.0);
  for (int ci = 0; ci < c; ++ci) {
    const double* g = gradients.data() + int64_t(ci) * hw;
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += g[i];
    weights[size_t(ci)] = acc / double(hw);
  }

  Heatmap out;
  out.values = Tensor({h, w});
  double* map = out.values.data();
  for (int ci = 0; ci < c; ++ci) {
    const double wv = weights[size_t(ci)];
    if (wv == 0.0) continue;
    const double* a = activations.data() + int64_t(ci) * hw;
    for (int64_t i = 0; i < hw; ++i) map[i] += wv * a[i];
  }
  double lo = map[0], hi = map[0];
  for (int64_t i = 0; i < hw; ++i) {
    map[i] = std::max(0.0, map[i]);  // rectification
    lo = std::min(lo, map[i]);
    hi = std::max(hi, map[i]);
  }
  lo = std::max(lo, 0.0);
  if (hi - lo <= 0.0) {
    out.values.fill(0.0);
    out.degenerate = true;
    return out;
  }
  const double inv = 1.0 / (hi - lo);
  for (int64_t i = 0; i < hw; ++i) map[i] = (map[i] - lo) * inv;
  return out;
}

Heatmap gradcam(DetectorModel& model, const ViewBatch& single, ViewKind view,
                const std::string& layer) {
  if (single.batch() != 1) throw ConfigError("gradcam: expects a batch of exactly one face");
  ViewEncoder* encoder = model.view_encoder(view);
  if (!encoder)
    throw ConfigError("gradcam: the model variant has no encoder for this view");

  BackboneNet& bb = encoder->backbone();
  const std::string tap = layer.empty() ? bb.last_spatial : layer;
  auto spatial_it = bb.spatial.find(tap);
  if (spatial_it == bb.spatial.end())
    throw ConfigError("gradcam: unsupported layer '" + tap +
                      "' (not a spatial activation of this encoder)");
  const SpatialInfo info = spatial_it->second;

  bb.net->set_tap(tap);
  model.forward(single, false);
  model.zero_grad();
  Tensor dlogit({1});
  dlogit[0] = 1.0;  // gradient of the fake logit
  model.backward(dlogit);

  Tensor act = bb.net->tap_activation();
  Tensor grad = bb.net->tap_gradient();
  bb.net->clear_tap();
  if (act.empty() || grad.empty())
    throw ConfigError("gradcam: tap captured nothing (layer '" + tap + "')");

  Tensor act3, grad3;
  if (info.tokens) {
    // (1, T, E) -> (E, h, w)
    const int t = act.dim(1), e = act.dim(2);
    if (t != info.grid_h * info.grid_w)
      throw ConfigError("gradcam: token count does not match the patch grid");
    act3 = Tensor({e, info.grid_h, info.grid_w});
    grad3 = Tensor({e, info.grid_h, info.grid_w});
    for (int ti = 0; ti < t; ++ti)
      for (int ei = 0; ei < e; ++ei) {
        act3.at(ei, ti / info.grid_w, ti % info.grid_w) = act.at(0, ti, ei);
        grad3.at(ei, ti / info.grid_w, ti % info.grid_w) = grad.at(0, ti, ei);
      }
  } else {
    const int c = act.dim(1), h = act.dim(2), w = act.dim(3);
    act3 = act.reshaped({c, h, w});
    grad3 = grad.reshaped({c, h, w});
  }

  Heatmap out = gradcam_from(act3, grad3);
  out.view = view == ViewKind::Global ? "global" : view == ViewKind::Middle ? "middle" : "local";
  out.layer = tap;
  return out;
}

Tensor upsample_bilinear(const Tensor& map, int out_h, int out_w) {
  const int h = map.dim(0), w = map.dim(1);
  Tensor out({out_h, out_w});
  const double sy = double(h) / double(out_h);
  const double sx = double(w) / double(out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const int y0 = int(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const int x0 = int(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      out.at(oy, ox) = (1 - wy) * ((1 - wx) * map.at(y0, x0) + wx * map.at(y0, x1)) +
                       wy * ((1 - wx) * map.at(y1, x0) + wx * map.at(y1, x1));
    }
  }
  return out;
}

namespace {

// blue -> cyan -> green -> yellow -> red ramp
void heat_color(double t, double rgb[3]) {
  t = std::clamp(t, 0.0, 1.0);
  const double r = std::clamp(1.5 - std::abs(4.0 * t - 3.0), 0.0, 1.0);
  const double g = std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0);
  const double b = std::clamp(1.5 - std::abs(4.0 * t - 1.0), 0.0, 1.0);
  rgb[0] = 255.0 * r;
  rgb[1] = 255.0 * g;
  rgb[2] = 255.0 * b;
}

}  // namespace

ImageBuffer colormap_render(const Tensor& map01) {
  ImageBuffer img(map01.dim(1), map01.dim(0));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double rgb[3];
      heat_color(map01.at(y, x), rgb);
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = uint8_t(std::clamp<long>(std::lround(rgb[c]), 0, 255));
    }
  return img;
}

ImageBuffer overlay(const Heatmap& heatmap, const ImageBuffer& image, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("overlay: alpha must lie in [0,1]");
  if (alpha == 0.0) return image;
  const Tensor up = upsample_bilinear(heatmap.values, image.height, image.width);
  ImageBuffer out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      double rgb[3];
      heat_color(up.at(y, x), rgb);
      for (int c = 0; c < 3; ++c) {
        const double v = (1.0 - alpha) * image.at(x, y, c) + alpha * rgb[c];
        out.at(x, y, c) = uint8_t(std::clamp<long>(std::lround(v), 0, 255));
      }
    }
  return out;
}

double hull_mass_ratio(const Heatmap& heatmap, const PadMeta& view_meta, int view_side,
                       std::span<const Point2> hull, double margin) {
  const int h = heatmap.height(), w = heatmap.width();
  double total = 0.0, inside = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = heatmap.values.at(y, x);
      if (v <= 0.0) continue;
      total += v;
      // heatmap cell center -> view pixel -> source image coordinates
      const Point2 view_pt{(x + 0.5) * double(view_side) / double(w) - 0.5,
                           (y + 0.5) * double(view_side) / double(h) - 0.5};
      const Point2 img_pt = view_meta.to_image(view_pt);
      if (distance_to_hull(hull, img_pt) <= margin) inside += v;
    }
  return total > 0.0 ? inside / total : 0.0;
}

}  // namespace mvdet
