// SPDX-License-Identifier: Apache-2.0
//
// Axis-aligned box geometry for anchor-based detection. Coordinates are
// continuous pixels; area is (x_max - x_min) * (y_max - y_min).
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace homdet {

inline constexpr int kNumClasses = 2;
inline constexpr int kHardNegative = 0;
inline constexpr int kMitoticFigure = 1;

/// "hard_negative" / "mitotic_figure"
const char* class_name(int class_id);
/// Returns -1 for unknown names.
int class_from_name(const std::string& name);

struct BBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() * height(); }
  double cx() const noexcept { return 0.5 * (x_min + x_max); }
  double cy() const noexcept { return 0.5 * (y_min + y_max); }
  bool valid() const noexcept {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min < x_max && y_min < y_max;
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Ground-truth object: a box and its class.
struct Annotation {
  BBox box;
  int class_id = kMitoticFigure;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Detection {
  BBox box;
  int class_id = kMitoticFigure;
  double score = 0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct AnchorConfig {
  std::vector<int> strides{8, 16};
  std::vector<double> scales{4.0, 5.04};
  std::vector<double> aspect_ratios{0.5, 1.0, 2.0};

  int anchors_per_cell() const {
    return static_cast<int>(scales.size() * aspect_ratios.size());
  }
  /// Throws ErrorKind::Config on empty lists or non-positive entries.
  void validate() const;
};

/// Regression target parameterisation relative to an anchor.
struct BoxOffsets {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

enum class AnchorLabel { Negative, Ignore, Positive };

struct AnchorMatch {
  AnchorLabel label = AnchorLabel::Negative;
  int gt = -1;  // valid ground-truth index when label == Positive
};
using AnchorAssignment = std::vector<AnchorMatch>;

/// ln(1000 / 16): the largest log-scale factor decode_box will apply.
inline const double kDefaultLogScaleClamp = std::log(1000.0 / 16.0);

struct NmsParams {
  double iou_threshold = 0.5;
  double score_floor = 0.05;
  int max_detections = 100;
};

/// Throws ErrorKind::Contract if either box is degenerate or non-finite.
double iou(const BBox& a, const BBox& b);

/// Greedy per-class suppression. Survivors are sorted by descending score
/// (stable w.r.t. input order) and no two of the same class overlap by more
/// than `iou_threshold`.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold);

/// Score floor, then nms, then keep the `max_detections` best.
std::vector<Detection> postprocess(std::span<const Detection> dets, const NmsParams& params);

/// Anchors ordered stride-major, then row-major grid cells, then scale, then
/// aspect ratio. An anchor at stride s and scale k has side s*k; ratio r
/// means height/width = r at constant area.
std::vector<BBox> generate_anchors(const AnchorConfig& cfg, int image_height, int image_width);

BoxOffsets encode_box(const BBox& anchor, const BBox& gt);
/// tw and th are clamped to ±log_scale_clamp before exponentiation.
BBox decode_box(const BBox& anchor, const BoxOffsets& offsets,
                double log_scale_clamp = kDefaultLogScaleClamp);

/// IoU-threshold assignment with the best anchor of every ground truth forced
/// positive (when it overlaps at all).
AnchorAssignment match_anchors(std::span<const BBox> anchors, std::span<const Annotation> gts,
                               double pos_threshold = 0.5, double neg_threshold = 0.4);

/// TP flags aligned with `dets` (input order). Detections are visited by
/// descending score; each takes the unmatched same-class ground truth with
/// the highest IoU >= iou_threshold, if any.
std::vector<bool> greedy_match_detections(std::span<const Detection> dets,
                                          std::span<const Annotation> gts,
                                          double iou_threshold = 0.5);

/// Indices ordering `dets` by descending score, ties by input order.
std::vector<std::size_t> score_order(std::span<const Detection> dets);

}  // namespace homdet
