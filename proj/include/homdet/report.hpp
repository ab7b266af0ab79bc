// SPDX-License-Identifier: Apache-2.0
//
// Output artifacts: detection overlays, detection JSON and PR-curve plots.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "homdet/boxgeom.hpp"
#include "homdet/engine.hpp"
#include "homdet/image_io.hpp"

namespace homdet {

/// Box outline colour per class.
std::array<std::uint8_t, 3> class_color(int class_id);

/// Copy of `image` with every detection outlined in its class colour and
/// its score printed above the box.
RgbImage render_overlay(const RgbImage& image, const std::vector<Detection>& detections);

/// {"image", "width", "height", "detections": [{x_min, y_min, x_max, y_max,
/// class, class_id, score}]}
std::string detections_json(const std::string& image, int width, int height,
                            const std::vector<Detection>& detections);

struct PrSeries {
  std::string label;
  std::vector<PrPoint> points;
};

/// Parses a PR CSV (class, score_threshold, precision, recall). Every known
/// class gets a series, possibly empty. Malformed input raises Schema.
std::vector<PrSeries> read_pr_csv(const std::string& path);

/// Static SVG with one labelled curve per series over [0,1]^2. Empty series
/// are drawn as a flat line at precision 0.
std::string render_pr_svg(const std::vector<PrSeries>& series);

}  // namespace homdet
