// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "homdet/data.hpp"
#include "homdet/rng.hpp"
#include "json.hpp"

using namespace homdet;
using fixture::kind;
using fixture::thrown_kind;

namespace {

RgbImage noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage im(w, h);
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return im;
}

// A directory holding a.png (40x30) and a manifest built from `doc`.
struct ManifestDir {
  fixture::TempDir dir{"manifest"};
  std::string manifest;
  explicit ManifestDir(const nlohmann::ordered_json& doc) {
    write_png(dir.str("a.png"), noise_image(40, 30, 1));
    manifest = dir.str("manifest.json");
    fixture::write_file(manifest, doc.dump(2));
  }
};

nlohmann::ordered_json base_doc() {
  return nlohmann::ordered_json::parse(R"({
    "domains": [{"id": 0, "name": "scanner_a", "role": "labeled_source"},
                {"id": 1, "name": "scanner_b", "role": "labeled_target"}],
    "images": [{"path": "a.png", "domain": 0,
                "annotations": [{"x_min": 2, "y_min": 3, "x_max": 12, "y_max": 13, "class": "mitotic_figure"},
                                {"x_min": 30, "y_min": 20, "x_max": 50, "y_max": 40, "class": "hard_negative"}]},
               {"path": "a.png", "domain": 1, "annotations": []}]
  })");
}

}  // namespace

TEST_CASE("a valid manifest loads with clamped boxes") {
  ManifestDir m(base_doc());
  const Dataset ds = load_dataset(m.manifest);
  REQUIRE(ds.domains.size() == 2);
  CHECK(ds.domains.at(1).role == DomainRole::LabeledTarget);
  REQUIRE(ds.records.size() == 2);
  const auto& a = ds.records[0].annotations;
  REQUIRE(a.size() == 2);
  CHECK(a[0].class_id == kMitoticFigure);
  CHECK(a[1].class_id == kHardNegative);
  CHECK(a[1].box.x_max == 40);
  CHECK(a[1].box.y_max == 30);
  CHECK(ds.records[0].image.width == 40);
}

TEST_CASE("boxes outside the image are dropped with a warning") {
  auto doc = base_doc();
  doc["images"][0]["annotations"][1] = {{"x_min", 45}, {"y_min", 1}, {"x_max", 50}, {"y_max", 5}, {"class", "hard_negative"}};
  ManifestDir m(doc);
  fixture::WarningCapture w;
  const Dataset ds = load_dataset(m.manifest);
  CHECK(ds.records[0].annotations.size() == 1);
  CHECK(w.contains("outside"));
}

TEST_CASE("manifest schema violations") {
  SUBCASE("unknown class") {
    auto doc = base_doc();
    doc["images"][0]["annotations"][0]["class"] = "mitosis";
    ManifestDir m(doc);
    const std::string msg = fixture::thrown_message([&] { load_dataset(m.manifest); });
    CHECK(msg.find("mitosis") != std::string::npos);
    CHECK(msg.find("images[0].annotations[0].class") != std::string::npos);
    CHECK(thrown_kind([&] { load_dataset(m.manifest); }) == kind(ErrorKind::Schema));
  }
  SUBCASE("unknown field") {
    auto doc = base_doc();
    doc["images"][0]["magnification"] = 40;
    ManifestDir m(doc);
    CHECK(thrown_kind([&] { load_dataset(m.manifest); }) == kind(ErrorKind::Schema));
  }
  SUBCASE("non-dense domain ids") {
    auto doc = base_doc();
    doc["domains"][1]["id"] = 3;
    ManifestDir m(doc);
    CHECK(thrown_kind([&] { load_dataset(m.manifest); }) == kind(ErrorKind::Schema));
  }
  SUBCASE("unknown role") {
    auto doc = base_doc();
    doc["domains"][1]["role"] = "target";
    ManifestDir m(doc);
    CHECK(thrown_kind([&] { load_dataset(m.manifest); }) == kind(ErrorKind::Schema));
  }
  SUBCASE("degenerate box") {
    auto doc = base_doc();
    doc["images"][0]["annotations"][0]["x_max"] = 2;
    ManifestDir m(doc);
    CHECK(thrown_kind([&] { load_dataset(m.manifest); }) == kind(ErrorKind::Schema));
  }
  SUBCASE("missing raster") {
    auto doc = base_doc();
    doc["images"][1]["path"] = "nowhere.png";
    ManifestDir m(doc);
    CHECK(thrown_kind([&] { load_dataset(m.manifest); }) == kind(ErrorKind::MissingFile));
  }
  SUBCASE("missing manifest") {
    CHECK(thrown_kind([] { load_dataset("/nonexistent/manifest.json"); }) == kind(ErrorKind::MissingFile));
  }
  SUBCASE("not json") {
    ManifestDir m(base_doc());
    fixture::write_file(m.manifest, "{ domains: ");
    CHECK(thrown_kind([&] { load_dataset(m.manifest); }) == kind(ErrorKind::Schema));
  }
}

TEST_CASE("domain roles") {
  auto doc = base_doc();
  doc["domains"] = nlohmann::ordered_json::parse(R"([
    {"id": 0, "name": "a", "role": "labeled_source"}, {"id": 1, "name": "b", "role": "labeled_source"},
    {"id": 2, "name": "c", "role": "unlabeled_source"}, {"id": 3, "name": "d", "role": "labeled_target"}])");
  ManifestDir m(doc);
  const Dataset ds = load_dataset(m.manifest);
  CHECK(ds.domains.ids_with_role(DomainRole::LabeledSource) == std::vector<int>{0, 1});
  CHECK(ds.domains.ids_with_role(DomainRole::UnlabeledSource) == std::vector<int>{2});
  CHECK(ds.domains.ids_with_role(DomainRole::LabeledTarget) == std::vector<int>{3});
  CHECK(role_from_name("labeled_target") == DomainRole::LabeledTarget);
  CHECK(!role_from_name("target").has_value());
}

TEST_CASE("manifest round trip") {
  ManifestDir m(base_doc());
  const Dataset ds = load_dataset(m.manifest);
  const std::string again = m.dir.str("again.json");
  write_manifest(again, ds);
  const Dataset back = load_dataset(again);
  REQUIRE(back.records.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(back.records[i].domain_id == ds.records[i].domain_id);
    CHECK(back.records[i].annotations == ds.records[i].annotations);
    CHECK(back.records[i].image.pixels == ds.records[i].image.pixels);
  }
}

TEST_CASE("patch mining agrees with a window search") {
  const RgbImage im = noise_image(90, 70, 2);
  Rng rng(3);
  for (int t = 0; t < 40; ++t) {
    std::vector<Annotation> anns;
    const int n = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 80), y = rng.uniform(0, 60);
      anns.push_back({{x, y, x + rng.uniform(1, 10), y + rng.uniform(1, 10)}, static_cast<int>(rng.below(2))});
    }
    const auto patches = mine_patches(im, anns, 4, 32);
    REQUIRE(patches.size() == anns.size());
    for (std::size_t k = 0; k < patches.size(); ++k) {
      const PatchRecord& p = patches[k];
      CHECK(p.domain_id == 4);
      REQUIRE(p.image.width == 32);
      // Locate the window by exhaustive pixel comparison.
      int found = 0, wx = -1, wy = -1;
      for (int y0 = 0; y0 + 32 <= im.height; ++y0)
        for (int x0 = 0; x0 + 32 <= im.width; ++x0) {
          bool same = true;
          for (int y = 0; y < 32 && same; ++y)
            same = std::equal(p.image.at(0, y), p.image.at(0, y) + 96, im.at(x0, y0 + y));
          if (same) {
            ++found;
            wx = x0;
            wy = y0;
          }
        }
      REQUIRE(found == 1);
      // The owning annotation is as central as the image border allows.
      const double cx = anns[k].box.cx(), cy = anns[k].box.cy();
      CHECK(std::abs(wx + 16 - cx) <= std::max(0.5, std::max(16 - cx, cx - (im.width - 16)) + 0.5));
      CHECK(std::abs(wy + 16 - cy) <= std::max(0.5, std::max(16 - cy, cy - (im.height - 16)) + 0.5));
      std::vector<Annotation> want;
      for (const auto& a : anns) {
        if (a.box.cx() < wx || a.box.cx() >= wx + 32 || a.box.cy() < wy || a.box.cy() >= wy + 32) continue;
        want.push_back({{std::max(0.0, a.box.x_min - wx), std::max(0.0, a.box.y_min - wy),
                         std::min(32.0, a.box.x_max - wx), std::min(32.0, a.box.y_max - wy)},
                        a.class_id});
      }
      CHECK(p.annotations == want);
    }
  }
}

TEST_CASE("nearby annotations share patches") {
  const RgbImage im = noise_image(200, 200, 4);
  const std::vector<Annotation> anns{{{100, 100, 110, 110}, 1}, {{110, 100, 120, 110}, 0}};
  const auto patches = mine_patches(im, anns, 0, 64);
  REQUIRE(patches.size() == 2);
  for (const auto& p : patches) CHECK(p.annotations.size() == 2);
  CHECK(thrown_kind([&] { mine_patches(noise_image(20, 20, 1), anns, 0, 64); }) == kind(ErrorKind::Config));
  CHECK(mine_patches(im, {}, 0, 64).empty());
}

TEST_CASE("batches draw evenly from each domain") {
  std::vector<std::vector<std::size_t>> pools{{0, 1, 2, 3, 4}, {10, 11, 12}, {20, 21, 22, 23, 24, 25, 26}};
  const auto b = compose_batch(pools, 12, 7, 5);
  REQUIRE(b.size() == 12);
  for (int d = 0; d < 3; ++d)
    for (int j = 0; j < 4; ++j) {
      const auto& pool = pools[d];
      CHECK(std::find(pool.begin(), pool.end(), b[d * 4 + j]) != pool.end());
    }
  CHECK(compose_batch(pools, 12, 7, 5) == b);
  CHECK(compose_batch(pools, 12, 8, 5) != b);
  std::vector<std::vector<std::size_t>> five(5, std::vector<std::size_t>{1, 2});
  CHECK(thrown_kind([&] { compose_batch(five, 12, 0, 0); }) == kind(ErrorKind::Config));
  std::vector<std::vector<std::size_t>> with_empty{{1}, {}};
  CHECK(thrown_kind([&] { compose_batch(with_empty, 2, 0, 0); }) == kind(ErrorKind::Config));
}

TEST_CASE("each epoch of a domain is a permutation") {
  std::vector<std::vector<std::size_t>> pools{{0, 1, 2, 3, 4, 5, 6}, {7, 8, 9}};
  const int per = 2;
  std::map<int, std::vector<std::size_t>> stream;
  for (long step = 0; step < 21; ++step) {
    const auto b = compose_batch(pools, 2 * per, 3, step);
    for (int d = 0; d < 2; ++d)
      for (int j = 0; j < per; ++j) stream[d].push_back(b[d * per + j]);
  }
  for (int d = 0; d < 2; ++d) {
    const auto& s = stream[d];
    const std::size_t n = pools[d].size();
    for (std::size_t e = 0; (e + 1) * n <= s.size(); ++e) {
      std::vector<std::size_t> epoch(s.begin() + e * n, s.begin() + (e + 1) * n);
      std::sort(epoch.begin(), epoch.end());
      CHECK(epoch == pools[d]);
    }
  }
}

TEST_CASE("stratified split") {
  Dataset ds;
  ds.domains.entries = {{0, "a", DomainRole::LabeledSource}, {1, "b", DomainRole::UnlabeledSource},
                        {2, "c", DomainRole::LabeledTarget}};
  for (int d = 0; d < 3; ++d)
    for (int i = 0; i < 50; ++i) {
      PatchRecord r;
      r.domain_id = d;
      r.path = std::to_string(i);
      ds.records.push_back(r);
    }
  split_dataset(ds, SplitFractions{}, 11);
  std::map<std::pair<int, Split>, int> count;
  for (const auto& r : ds.records) ++count[{r.domain_id, r.split}];
  for (int d = 0; d < 2; ++d) {
    CHECK(count[{d, Split::Train}] == 40);
    CHECK(count[{d, Split::Val}] == 5);
    CHECK(count[{d, Split::Test}] == 5);
  }
  CHECK(count[{2, Split::Test}] == 50);
  Dataset again = ds;
  split_dataset(again, SplitFractions{}, 11);
  for (std::size_t i = 0; i < ds.records.size(); ++i) CHECK(again.records[i].split == ds.records[i].split);
  CHECK(thrown_kind([&] { split_dataset(again, SplitFractions{0.5, 0.1, 0.1}, 1); }) == kind(ErrorKind::Config));
}

TEST_CASE("synthetic corpus is reproducible") {
  fixture::TempDir a("synth_a"), b("synth_b"), c("synth_c");
  SynthSpec spec;
  spec.num_domains = 2;
  spec.images_per_domain = 4;
  spec.seed = 42;
  const auto ra = synth_dataset(spec, a.str());
  const auto rb = synth_dataset(spec, b.str());
  CHECK(ra.checksum == rb.checksum);
  CHECK(fixture::read_file(ra.manifest_path) == fixture::read_file(rb.manifest_path));
  CHECK(dataset_checksum(ra.manifest_path) == ra.checksum);
  spec.seed = 43;
  CHECK(synth_dataset(spec, c.str()).checksum != ra.checksum);
  const Dataset back = load_dataset(ra.manifest_path);
  REQUIRE(back.records.size() == 8);
  for (std::size_t i = 0; i < back.records.size(); ++i) {
    CHECK(back.records[i].annotations == ra.dataset.records[i].annotations);
    CHECK(back.records[i].image.pixels == ra.dataset.records[i].image.pixels);
  }
}

TEST_CASE("synthetic annotations are well formed") {
  fixture::TempDir dir("synth_ann");
  SynthSpec spec;
  spec.num_domains = 2;
  spec.images_per_domain = 20;
  spec.seed = 5;
  const auto r = synth_dataset(spec, dir.str());
  std::set<int> classes;
  for (const auto& rec : r.dataset.records) {
    CHECK(static_cast<int>(rec.annotations.size()) >= spec.min_cells);
    CHECK(static_cast<int>(rec.annotations.size()) <= spec.max_cells);
    for (const auto& a : rec.annotations) {
      CHECK(a.box.valid());
      CHECK(a.box.x_min >= 0);
      CHECK(a.box.y_max <= 64);
      classes.insert(a.class_id);
      // Mitotic figures are the darkest objects on the slide.
      if (a.class_id == kMitoticFigure && rec.domain_id == 0) {
        const auto* px = rec.image.at(static_cast<int>(a.box.cx()), static_cast<int>(a.box.cy()));
        CHECK(px[0] + px[1] + px[2] < 3 * 160);
      }
    }
  }
  CHECK(classes == std::set<int>{0, 1});
}

TEST_CASE("synthetic domains differ in colour beyond within-domain spread") {
  fixture::TempDir dir("synth_style");
  SynthSpec spec;
  spec.num_domains = 3;
  spec.images_per_domain = 12;
  spec.seed = 9;
  const auto r = synth_dataset(spec, dir.str());
  // per-image channel means, grouped by domain
  std::map<int, std::vector<std::array<double, 3>>> per_image;
  for (const auto& rec : r.dataset.records) {
    std::array<double, 3> m{};
    const double n = static_cast<double>(rec.image.pixels.size() / 3);
    for (std::size_t i = 0; i < rec.image.pixels.size(); ++i) m[i % 3] += rec.image.pixels[i] / 255.0 / n;
    per_image[rec.domain_id].push_back(m);
  }
  std::map<int, std::array<double, 3>> mean, sd;
  for (const auto& [d, v] : per_image) {
    REQUIRE(v.size() == 12);
    for (int ch = 0; ch < 3; ++ch) {
      double s1 = 0, s2 = 0;
      for (const auto& m : v) s1 += m[ch];
      mean[d][ch] = s1 / v.size();
      for (const auto& m : v) s2 += (m[ch] - mean[d][ch]) * (m[ch] - mean[d][ch]);
      sd[d][ch] = std::sqrt(s2 / (v.size() - 1));
    }
  }
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) {
      bool separated = false;
      for (int ch = 0; ch < 3; ++ch)
        separated = separated || std::abs(mean[a][ch] - mean[b][ch]) > std::max(sd[a][ch], sd[b][ch]);
      CAPTURE(a);
      CAPTURE(b);
      CHECK(separated);
    }
}

TEST_CASE("images without cells") {
  fixture::TempDir dir("synth_empty");
  SynthSpec spec;
  spec.num_domains = 1;
  spec.images_per_domain = 3;
  spec.min_cells = 0;
  spec.max_cells = 0;
  const auto r = synth_dataset(spec, dir.str());
  const Dataset back = load_dataset(r.manifest_path);
  for (const auto& rec : back.records) CHECK(rec.annotations.empty());
  spec.max_cells = -1;
  CHECK(thrown_kind([&] { spec.validate(); }) == kind(ErrorKind::Config));
}

TEST_CASE("synthetic roles") {
  fixture::TempDir dir("synth_roles");
  SynthSpec spec;
  spec.num_domains = 3;
  spec.images_per_domain = 1;
  spec.roles = {DomainRole::LabeledSource, DomainRole::UnlabeledSource, DomainRole::LabeledTarget};
  const Dataset ds = load_dataset(synth_dataset(spec, dir.str()).manifest_path);
  CHECK(ds.domains.at(1).role == DomainRole::UnlabeledSource);
  CHECK(ds.domains.at(2).role == DomainRole::LabeledTarget);
  spec.roles.pop_back();
  CHECK(thrown_kind([&] { spec.validate(); }) == kind(ErrorKind::Config));
}

TEST_CASE("point annotations become squares") {
  fixture::TempDir dir("points");
  write_png(dir.str("p.png"), noise_image(100, 80, 3));
  fixture::write_file(dir.str("points.json"), R"({
    "domains": [{"id": 0, "name": "a", "role": "labeled_source"}],
    "images": [{"path": "p.png", "domain": 0,
                "annotations": [{"x": 50, "y": 40, "class": "mitotic_figure"},
                                {"x": 5, "y": 70, "class": "hard_negative"}]}]})");
  convert_point_manifest(dir.str("points.json"), dir.str("boxes.json"), 20);
  const Dataset ds = load_dataset(dir.str("boxes.json"));
  const auto& a = ds.records[0].annotations;
  REQUIRE(a.size() == 2);
  CHECK(a[0].box == BBox{40, 30, 60, 50});
  CHECK(a[1].box == BBox{0, 60, 15, 80});
  CHECK(a[1].class_id == kHardNegative);
  CHECK(thrown_kind([&] { convert_point_manifest(dir.str("points.json"), dir.str("x.json"), 0); }) ==
        kind(ErrorKind::Config));
}
