#pragma once

// Colorized disparity and error maps as {3, H, W} images in [0, 1].

#include <algorithm>
#include <array>
#include <cmath>

#include "dtp/datasets.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

/// Jet ramp over [0, max_disparity]; near is warm.
inline Tensor<float> colorize_disparity(const Tensor<float>& disparity, float max_disparity) {
  if (disparity.rank() != 2) throw ShapeError("colorize_disparity expects H x W");
  if (!(max_disparity > 0)) throw DomainError("max_disparity must be positive");
  const int h = disparity.dim(0), w = disparity.dim(1);
  Tensor<float> rgb({3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = std::clamp(disparity.at(y, x) / max_disparity, 0.0f, 1.0f);
      rgb.at(0, y, x) = std::clamp(1.5f - std::abs(4 * v - 3), 0.0f, 1.0f);
      rgb.at(1, y, x) = std::clamp(1.5f - std::abs(4 * v - 2), 0.0f, 1.0f);
      rgb.at(2, y, x) = std::clamp(1.5f - std::abs(4 * v - 1), 0.0f, 1.0f);
    }
  }
  return rgb;
}

/// Absolute-error map on log-spaced bins (KITTI development kit colours):
/// cool below 1.5 px, warm above 3 px. Masked pixels are black.
inline Tensor<float> error_map(const Tensor<float>& pred, const Tensor<float>& gt, const Mask& valid) {
  require_shape(gt.shape(), pred.shape(), "error_map ground truth");
  require_shape(valid.shape(), pred.shape(), "error_map mask");
  if (pred.rank() != 2) throw ShapeError("error_map expects H x W");
  struct Bin {
    float upper;
    std::array<int, 3> rgb;
  };
  static constexpr std::array<Bin, 10> bins{{{0.1875f, {49, 54, 149}},
                                             {0.375f, {69, 117, 180}},
                                             {0.75f, {116, 173, 209}},
                                             {1.5f, {171, 217, 233}},
                                             {3.0f, {224, 243, 248}},
                                             {6.0f, {254, 224, 144}},
                                             {12.0f, {253, 174, 97}},
                                             {24.0f, {244, 109, 67}},
                                             {48.0f, {215, 48, 39}},
                                             {INFINITY, {165, 0, 38}}}};
  const int h = pred.dim(0), w = pred.dim(1);
  Tensor<float> rgb({3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!valid.at(y, x)) continue;
      const float e = std::abs(pred.at(y, x) - gt.at(y, x));
      const auto* b = std::find_if(bins.begin(), bins.end(), [e](const Bin& bin) { return e < bin.upper; });
      if (b == bins.end()) b = bins.end() - 1;
      for (int c = 0; c < 3; ++c) rgb.at(c, y, x) = static_cast<float>(b->rgb[c]) / 255.0f;
    }
  }
  return rgb;
}

}  // namespace dtp
