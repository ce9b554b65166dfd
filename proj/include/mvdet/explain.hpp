#pragma once

#include <span>
#include <string>

#include "mvdet/geometry.hpp"
#include "mvdet/model.hpp"

namespace mvdet {

// Grad-CAM result: an (h, w) map normalized to [0, 1]. A map whose weighted
// activation sum rectifies to a constant (e.g. zero gradient) is returned as
// all zeros with the degenerate flag set.
struct Heatmap {
  Tensor values;  // (h, w)
  std::string view;
  std::string layer;
  bool degenerate = false;

  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
};

// Core Grad-CAM arithmetic: channel weights are the spatial means of the
// gradients; the map is the rectified weighted channel sum, min-max
// normalized to [0, 1].
Heatmap gradcam_from(const Tensor& activations, const Tensor& gradients);

// Runs the model on one face (batch of one), taps the requested encoder
// layer, backpropagates from the fake logit and returns the heatmap. An empty
// layer name selects the encoder's last spatial block. Token layers
// (transformer family) are reshaped onto their patch grid.
Heatmap gradcam(DetectorModel& model, const ViewBatch& single, ViewKind view,
                const std::string& layer = "");

// Bilinear upsampling of a heatmap to an arbitrary size.
Tensor upsample_bilinear(const Tensor& map, int out_h, int out_w);

// Alpha-blended colormapped composite; alpha 0 returns the image untouched.
ImageBuffer overlay(const Heatmap& heatmap, const ImageBuffer& image, double alpha);

// Pure colormap render of a [0,1] map (blue -> green -> red ramp).
ImageBuffer colormap_render(const Tensor& map01);

// Fraction of heatmap mass whose view-space position maps into the landmark
// hull dilated by `margin` (in source-image coordinates). view_side is the
// side of the view the heatmap was computed over.
double hull_mass_ratio(const Heatmap& heatmap, const PadMeta& view_meta, int view_side,
                       std::span<const Point2> hull, double margin);

}  // namespace mvdet
