// SPDX-License-Identifier: Apache-2.0
#include <string>

#include "doctest.h"
#include "fixtures.hpp"
#include "homdet/report.hpp"
#include "json.hpp"

using namespace homdet;
using fixture::kind;
using fixture::thrown_kind;

namespace {

std::size_t occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

const std::string kHeader = "class,score_threshold,precision,recall\n";

}  // namespace

TEST_CASE("pr plot: one labelled series per class") {
  fixture::TempDir dir("pr_two");
  fixture::write_file(dir.str("pr.csv"), kHeader +
                                             "hard_negative,0.9,1,0.5\nhard_negative,0.4,0.5,1\n"
                                             "mitotic_figure,0.8,1,0.25\nmitotic_figure,0.3,0.75,0.75\n");
  const auto series = read_pr_csv(dir.str("pr.csv"));
  REQUIRE(series.size() == 2);
  CHECK(series[0].label == "hard_negative");
  CHECK(series[1].points.size() == 2);
  fixture::WarningCapture w;
  const std::string svg = render_pr_svg(series);
  CHECK(w.messages().empty());
  CHECK(occurrences(svg, "<polyline") == 2);
  CHECK(occurrences(svg, "data-label=\"hard_negative\"") == 1);
  CHECK(occurrences(svg, "data-label=\"mitotic_figure\"") == 1);
  // plot area is 400 px from (60, 30): recall 0.5 -> x 260, precision 1 -> y 30
  CHECK(svg.find("points=\"260.00,30.00 460.00,230.00\"") != std::string::npos);
  CHECK(svg == render_pr_svg(series));
}

TEST_CASE("pr plot: single point and empty class") {
  fixture::TempDir dir("pr_single");
  fixture::write_file(dir.str("pr.csv"), kHeader + "mitotic_figure,0.6,0.5,1\n");
  const auto series = read_pr_csv(dir.str("pr.csv"));
  REQUIRE(series.size() == 2);
  CHECK(series[0].points.empty());
  fixture::WarningCapture w;
  const std::string svg = render_pr_svg(series);
  CHECK(w.contains("hard_negative"));
  CHECK(w.messages().size() == 1);
  CHECK(svg.find("points=\"60.00,430.00 460.00,430.00\"") != std::string::npos);
  CHECK(svg.find("points=\"460.00,230.00\"") != std::string::npos);
  CHECK(occurrences(svg, "<circle") == 1);
}

TEST_CASE("pr csv rejects malformed input") {
  fixture::TempDir dir("pr_bad");
  const std::vector<std::string> bad = {
      "class,precision,recall\n",
      kHeader + "mitotic_figure,0.5,1\n",
      kHeader + "mitosis,0.5,1,1\n",
      kHeader + "mitotic_figure,x,1,1\n",
      kHeader + "mitotic_figure,0.5,1.5,1\n",
      kHeader + "mitotic_figure,0.5,1,-0.1\n",
      kHeader + "mitotic_figure,0.5,nan,1\n",
      "",
  };
  for (std::size_t i = 0; i < bad.size(); ++i) {
    CAPTURE(i);
    fixture::write_file(dir.str("bad.csv"), bad[i]);
    CHECK(thrown_kind([&] { read_pr_csv(dir.str("bad.csv")); }) == kind(ErrorKind::Schema));
  }
  CHECK(thrown_kind([&] { read_pr_csv(dir.str("none.csv")); }) == kind(ErrorKind::MissingFile));
}

TEST_CASE("overlay outlines each detection in its class colour") {
  RgbImage img(40, 30);
  for (auto& v : img.pixels) v = 128;
  const std::vector<Detection> dets = {{BBox{5, 12, 15, 22}, kMitoticFigure, 0.9},
                                       {BBox{20.5, 10, 30, 20.5}, kHardNegative, 0.42}};
  const RgbImage out = render_overlay(img, dets);
  REQUIRE(out.width == 40);
  REQUIRE(out.height == 30);
  auto px = [&](int x, int y) { return std::array<std::uint8_t, 3>{out.at(x, y)[0], out.at(x, y)[1], out.at(x, y)[2]}; };
  const auto red = class_color(kMitoticFigure), blue = class_color(kHardNegative);
  CHECK(red != blue);
  // covered pixel columns 5..14, rows 12..21
  CHECK(px(5, 16) == red);
  CHECK(px(14, 16) == red);
  CHECK(px(10, 21) == red);
  CHECK(px(10, 16) == std::array<std::uint8_t, 3>{128, 128, 128});
  CHECK(px(15, 16) == std::array<std::uint8_t, 3>{128, 128, 128});
  // fractional edges widen to the covering pixels: columns 20..29, rows 10..20
  CHECK(px(20, 15) == blue);
  CHECK(px(29, 15) == blue);
  CHECK(px(25, 20) == blue);
  CHECK(px(35, 25) == std::array<std::uint8_t, 3>{128, 128, 128});
  CHECK(render_overlay(img, dets).pixels == out.pixels);
  CHECK(render_overlay(img, {}).pixels == img.pixels);
}

TEST_CASE("detections json") {
  const std::vector<Detection> dets = {{BBox{1, 2, 3, 4}, kMitoticFigure, 0.75}};
  const auto doc = nlohmann::json::parse(detections_json("a.png", 64, 48, dets));
  CHECK(doc["image"] == "a.png");
  CHECK(doc["width"] == 64);
  CHECK(doc["height"] == 48);
  REQUIRE(doc["detections"].size() == 1);
  const auto& d = doc["detections"][0];
  CHECK(d["x_min"] == 1.0);
  CHECK(d["y_max"] == 4.0);
  CHECK(d["class"] == "mitotic_figure");
  CHECK(d["class_id"] == 1);
  CHECK(d["score"] == 0.75);
  CHECK(nlohmann::json::parse(detections_json("b.png", 8, 8, {}))["detections"].empty());
}
