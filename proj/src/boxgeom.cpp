// SPDX-License-Identifier: Apache-2.0
#include "homdet/boxgeom.hpp"

#include <algorithm>
#include <numeric>

#include "homdet/error.hpp"

namespace homdet {

const char* class_name(int class_id) {
  switch (class_id) {
    case kHardNegative:
      return "hard_negative";
    case kMitoticFigure:
      return "mitotic_figure";
    default:
      return "unknown";
  }
}

int class_from_name(const std::string& name) {
  if (name == "hard_negative") return kHardNegative;
  if (name == "mitotic_figure") return kMitoticFigure;
  return -1;
}

void AnchorConfig::validate() const {
  if (strides.empty() || scales.empty() || aspect_ratios.empty())
    fail(ErrorKind::Config, "anchor config needs at least one stride, scale and aspect ratio");
  for (int s : strides)
    if (s <= 0) fail(ErrorKind::Config, "anchor strides must be positive");
  for (double s : scales)
    if (!(s > 0) || !std::isfinite(s)) fail(ErrorKind::Config, "anchor scales must be positive");
  for (double r : aspect_ratios)
    if (!(r > 0) || !std::isfinite(r)) fail(ErrorKind::Config, "anchor aspect ratios must be positive");
}

double iou(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid()) fail(ErrorKind::Contract, "iou: degenerate or non-finite box");
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return dets[i].score > dets[j].score; });
  return order;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  require(iou_threshold >= 0.0 && iou_threshold <= 1.0, "nms: iou_threshold outside [0,1]");
  std::vector<Detection> kept;
  for (std::size_t idx : score_order(dets)) {
    const Detection& d = dets[idx];
    bool suppressed = false;
    for (const Detection& k : kept)
      if (k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> postprocess(std::span<const Detection> dets, const NmsParams& params) {
  std::vector<Detection> candidates;
  for (const auto& d : dets)
    if (d.score >= params.score_floor) candidates.push_back(d);
  auto kept = nms(candidates, params.iou_threshold);
  if (params.max_detections >= 0 && kept.size() > static_cast<std::size_t>(params.max_detections))
    kept.resize(static_cast<std::size_t>(params.max_detections));
  return kept;
}

std::vector<BBox> generate_anchors(const AnchorConfig& cfg, int image_height, int image_width) {
  cfg.validate();
  std::vector<BBox> anchors;
  for (int stride : cfg.strides) {
    if (image_height % stride != 0 || image_width % stride != 0)
      fail(ErrorKind::Config, "image size " + std::to_string(image_height) + "x" +
                                  std::to_string(image_width) + " is not divisible by anchor stride " +
                                  std::to_string(stride));
    const int gh = image_height / stride, gw = image_width / stride;
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x) {
        const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
        for (double scale : cfg.scales)
          for (double ratio : cfg.aspect_ratios) {
            const double side = stride * scale;
            const double w = side / std::sqrt(ratio);
            const double h = side * std::sqrt(ratio);
            anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
          }
      }
  }
  return anchors;
}

BoxOffsets encode_box(const BBox& anchor, const BBox& gt) {
  if (!anchor.valid() || !gt.valid()) fail(ErrorKind::Contract, "encode_box: invalid box");
  return {(gt.cx() - anchor.cx()) / anchor.width(), (gt.cy() - anchor.cy()) / anchor.height(),
          std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height())};
}

BBox decode_box(const BBox& anchor, const BoxOffsets& o, double log_scale_clamp) {
  const double tw = std::clamp(o.tw, -log_scale_clamp, log_scale_clamp);
  const double th = std::clamp(o.th, -log_scale_clamp, log_scale_clamp);
  const double cx = anchor.cx() + o.tx * anchor.width();
  const double cy = anchor.cy() + o.ty * anchor.height();
  const double w = anchor.width() * std::exp(tw);
  const double h = anchor.height() * std::exp(th);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

AnchorAssignment match_anchors(std::span<const BBox> anchors, std::span<const Annotation> gts,
                               double pos_threshold, double neg_threshold) {
  require(pos_threshold >= neg_threshold, "match_anchors: pos_threshold < neg_threshold");
  AnchorAssignment out(anchors.size());
  if (gts.empty()) return out;

  std::vector<double> best_for_gt(gts.size(), 0.0);
  std::vector<int> best_anchor_for_gt(gts.size(), -1);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double best = -1.0;
    int arg = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a], gts[g].box);
      if (v > best) {
        best = v;
        arg = static_cast<int>(g);
      }
      if (v > best_for_gt[g]) {
        best_for_gt[g] = v;
        best_anchor_for_gt[g] = static_cast<int>(a);
      }
    }
    if (best >= pos_threshold)
      out[a] = {AnchorLabel::Positive, arg};
    else if (best < neg_threshold)
      out[a] = {AnchorLabel::Negative, -1};
    else
      out[a] = {AnchorLabel::Ignore, -1};
  }
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (best_anchor_for_gt[g] >= 0) out[best_anchor_for_gt[g]] = {AnchorLabel::Positive, static_cast<int>(g)};
  return out;
}

std::vector<bool> greedy_match_detections(std::span<const Detection> dets,
                                          std::span<const Annotation> gts, double iou_threshold) {
  std::vector<bool> tp(dets.size(), false);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t idx : score_order(dets)) {
    double best = -1.0;
    int arg = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != dets[idx].class_id) continue;
      const double v = iou(dets[idx].box, gts[g].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        arg = static_cast<int>(g);
      }
    }
    if (arg >= 0) {
      taken[arg] = true;
      tp[idx] = true;
    }
  }
  return tp;
}

}  // namespace homdet
