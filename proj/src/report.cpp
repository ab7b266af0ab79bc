// SPDX-License-Identifier: Apache-2.0
#include "homdet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "homdet/error.hpp"
#include "json.hpp"

namespace homdet {

std::array<std::uint8_t, 3> class_color(int class_id) {
  return class_id == kMitoticFigure ? std::array<std::uint8_t, 3>{230, 30, 40}
                                    : std::array<std::uint8_t, 3>{20, 140, 230};
}

namespace {

// 3x5 glyphs, one row per entry, most significant of the three bits on the left.
const std::uint8_t* glyph(char ch) {
  static const std::uint8_t digits[10][5] = {
      {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
      {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
  };
  static const std::uint8_t dot[5] = {0, 0, 0, 0, 2};
  if (ch >= '0' && ch <= '9') return digits[ch - '0'];
  if (ch == '.') return dot;
  return nullptr;
}

void put(RgbImage& img, int x, int y, const std::array<std::uint8_t, 3>& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  std::copy(c.begin(), c.end(), img.at(x, y));
}

void draw_text(RgbImage& img, int x, int y, const std::string& text, int scale,
               const std::array<std::uint8_t, 3>& fg) {
  const std::array<std::uint8_t, 3> bg{255, 255, 255};
  const int w = static_cast<int>(text.size()) * 4 * scale + scale, h = 7 * scale;
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) put(img, x + xx, y + yy, bg);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const std::uint8_t* g = glyph(text[i]);
    if (!g) continue;
    const int ox = x + scale + static_cast<int>(i) * 4 * scale, oy = y + scale;
    for (int r = 0; r < 5; ++r)
      for (int col = 0; col < 3; ++col)
        if (g[r] & (4 >> col))
          for (int dy = 0; dy < scale; ++dy)
            for (int dx = 0; dx < scale; ++dx) put(img, ox + col * scale + dx, oy + r * scale + dy, fg);
  }
}

}  // namespace

RgbImage render_overlay(const RgbImage& image, const std::vector<Detection>& detections) {
  RgbImage out = image;
  const int scale = std::max(1, std::min(image.width, image.height) / 256);
  for (const auto& d : detections) {
    const auto c = class_color(d.class_id);
    const int x0 = static_cast<int>(std::floor(d.box.x_min)), y0 = static_cast<int>(std::floor(d.box.y_min));
    const int x1 = static_cast<int>(std::ceil(d.box.x_max)) - 1, y1 = static_cast<int>(std::ceil(d.box.y_max)) - 1;
    for (int t = 0; t < scale; ++t) {
      for (int x = x0; x <= x1; ++x) {
        put(out, x, y0 + t, c);
        put(out, x, y1 - t, c);
      }
      for (int y = y0; y <= y1; ++y) {
        put(out, x0 + t, y, c);
        put(out, x1 - t, y, c);
      }
    }
    char label[16];
    std::snprintf(label, sizeof label, "%.2f", d.score);
    const int th = 7 * scale;
    draw_text(out, x0, y0 - th >= 0 ? y0 - th : y0 + scale, label, scale, c);
  }
  return out;
}

std::string detections_json(const std::string& image, int width, int height, const std::vector<Detection>& detections) {
  nlohmann::ordered_json doc;
  doc["image"] = image;
  doc["width"] = width;
  doc["height"] = height;
  doc["detections"] = nlohmann::ordered_json::array();
  for (const auto& d : detections)
    doc["detections"].push_back({{"x_min", d.box.x_min},
                                 {"y_min", d.box.y_min},
                                 {"x_max", d.box.x_max},
                                 {"y_max", d.box.y_max},
                                 {"class", class_name(d.class_id)},
                                 {"class_id", d.class_id},
                                 {"score", d.score}});
  return doc.dump(2) + "\n";
}

std::vector<PrSeries> read_pr_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingFile, "PR file not found: " + path);
  std::vector<PrSeries> series;
  for (int c = 0; c < kNumClasses; ++c) series.push_back({class_name(c), {}});
  std::string line;
  if (!std::getline(in, line) || line != "class,score_threshold,precision,recall")
    fail(ErrorKind::Schema, path + ": expected header class,score_threshold,precision,recall");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    const std::string where = path + ":" + std::to_string(lineno);
    if (f.size() != 4) fail(ErrorKind::Schema, where + ": expected 4 fields");
    const int cls = class_from_name(f[0]);
    if (cls < 0) fail(ErrorKind::Schema, where + ": unknown class \"" + f[0] + "\"");
    PrPoint p;
    double* dst[3] = {&p.score_threshold, &p.precision, &p.recall};
    for (int k = 0; k < 3; ++k) {
      char* end = nullptr;
      *dst[k] = std::strtod(f[k + 1].c_str(), &end);
      if (f[k + 1].empty() || *end != '\0' || !std::isfinite(*dst[k]))
        fail(ErrorKind::Schema, where + ": field " + std::to_string(k + 2) + " is not a number");
    }
    if (p.precision < 0 || p.precision > 1 || p.recall < 0 || p.recall > 1)
      fail(ErrorKind::Schema, where + ": precision and recall must lie in [0,1]");
    series[cls].points.push_back(p);
  }
  return series;
}

std::string render_pr_svg(const std::vector<PrSeries>& series) {
  const double left = 60, top = 30, size = 400;
  auto sx = [&](double r) { return left + r * size; };
  auto sy = [&](double p) { return top + (1 - p) * size; };
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", v);
    return std::string(b);
  };
  static const char* palette[] = {"#148ce6", "#e61e28", "#2ca02c", "#9467bd"};
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"620\" height=\"490\" viewBox=\"0 0 620 490\">\n"
    << "<rect width=\"620\" height=\"490\" fill=\"white\"/>\n"
    << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << size << "\" height=\"" << size
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    s << "<line x1=\"" << num(sx(v)) << "\" y1=\"" << num(top + size) << "\" x2=\"" << num(sx(v)) << "\" y2=\""
      << num(top + size + 5) << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << num(sx(v)) << "\" y=\"" << num(top + size + 18) << "\" font-size=\"11\" text-anchor=\"middle\">"
      << num(v) << "</text>\n"
      << "<line x1=\"" << num(left - 5) << "\" y1=\"" << num(sy(v)) << "\" x2=\"" << num(left) << "\" y2=\""
      << num(sy(v)) << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << num(left - 8) << "\" y=\"" << num(sy(v) + 4) << "\" font-size=\"11\" text-anchor=\"end\">"
      << num(v) << "</text>\n";
  }
  s << "<text x=\"" << num(left + size / 2) << "\" y=\"" << num(top + size + 38)
    << "\" font-size=\"13\" text-anchor=\"middle\">Recall</text>\n"
    << "<text x=\"18\" y=\"" << num(top + size / 2) << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << num(top + size / 2) << ")\">Precision</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = palette[k % 4];
    std::string pts;
    if (series[k].points.empty()) {
      warn("class " + series[k].label + " has no detections; drawing a flat curve at precision 0");
      pts = num(sx(0)) + "," + num(sy(0)) + " " + num(sx(1)) + "," + num(sy(0));
    } else {
      for (const auto& p : series[k].points) pts += num(sx(p.recall)) + "," + num(sy(p.precision)) + " ";
      pts.pop_back();
    }
    s << "<polyline class=\"series\" data-label=\"" << series[k].label << "\" points=\"" << pts << "\" fill=\"none\" stroke=\""
      << color << "\" stroke-width=\"2\"/>\n";
    if (series[k].points.size() == 1)
      s << "<circle cx=\"" << num(sx(series[k].points[0].recall)) << "\" cy=\"" << num(sy(series[k].points[0].precision))
        << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = top + 16 + 18.0 * static_cast<double>(k);
    s << "<line x1=\"" << num(left + size + 12) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(left + size + 32)
      << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << num(left + size + 36) << "\" y=\"" << num(ly + 4) << "\" font-size=\"12\">" << series[k].label
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace homdet
