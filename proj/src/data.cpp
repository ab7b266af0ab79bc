// SPDX-License-Identifier: Apache-2.0
#include "homdet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include "json.hpp"

#include "homdet/error.hpp"
#include "homdet/rng.hpp"
#include "homdet/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace homdet {

const char* role_name(DomainRole role) {
  switch (role) {
    case DomainRole::LabeledSource:
      return "labeled_source";
    case DomainRole::UnlabeledSource:
      return "unlabeled_source";
    case DomainRole::LabeledTarget:
      return "labeled_target";
  }
  return "?";
}

std::optional<DomainRole> role_from_name(const std::string& name) {
  if (name == "labeled_source") return DomainRole::LabeledSource;
  if (name == "unlabeled_source") return DomainRole::UnlabeledSource;
  if (name == "labeled_target") return DomainRole::LabeledTarget;
  return std::nullopt;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

std::optional<Split> split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  return std::nullopt;
}

std::vector<int> DomainTable::ids_with_role(DomainRole role) const {
  std::vector<int> out;
  for (const auto& e : entries)
    if (e.role == role) out.push_back(e.id);
  return out;
}

const DomainEntry& DomainTable::at(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= entries.size())
    fail(ErrorKind::Contract, "unknown domain id " + std::to_string(id));
  return entries[id];
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

[[noreturn]] void schema_error(const std::string& where, const std::string& what) {
  fail(ErrorKind::Schema, "manifest " + where + ": " + what);
}

void check_fields(const json& obj, const std::string& where, std::initializer_list<const char*> required,
                  std::initializer_list<const char*> optional = {}) {
  if (!obj.is_object()) schema_error(where, "expected an object");
  for (const char* k : required)
    if (!obj.contains(k)) schema_error(where, "missing field \"" + std::string(k) + "\"");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const std::string& k = it.key();
    const bool known = std::find_if(required.begin(), required.end(), [&](const char* r) { return k == r; }) !=
                           required.end() ||
                       std::find_if(optional.begin(), optional.end(), [&](const char* r) { return k == r; }) !=
                           optional.end();
    if (!known) schema_error(where, "unknown field \"" + k + "\"");
  }
}

double number_field(const json& obj, const char* key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_number()) schema_error(where + "." + key, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) schema_error(where + "." + key, "must be finite");
  return d;
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_string()) schema_error(where + "." + key, "expected a string");
  return v.get<std::string>();
}

int int_field(const json& obj, const char* key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_number_integer()) schema_error(where + "." + key, "expected an integer");
  return v.get<int>();
}

json read_json_file(const std::string& path) {
  if (!fs::exists(path)) fail(ErrorKind::MissingFile, "manifest not found: " + path);
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open manifest: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Schema, "manifest " + path + " is not valid JSON: " + e.what());
  }
}

BBox clamp_box(BBox b, int width, int height) {
  b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(width));
  b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(width));
  b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(height));
  b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(height));
  return b;
}

}  // namespace

Dataset load_dataset(const std::string& manifest_path) {
  const json doc = read_json_file(manifest_path);
  check_fields(doc, "root", {"domains", "images"});
  if (!doc["domains"].is_array()) schema_error("domains", "expected an array");
  if (!doc["images"].is_array()) schema_error("images", "expected an array");

  Dataset ds;
  std::vector<DomainEntry> entries;
  for (std::size_t i = 0; i < doc["domains"].size(); ++i) {
    const std::string where = "domains[" + std::to_string(i) + "]";
    const json& d = doc["domains"][i];
    check_fields(d, where, {"id", "name", "role"});
    DomainEntry e;
    e.id = int_field(d, "id", where);
    e.name = string_field(d, "name", where);
    const std::string role = string_field(d, "role", where);
    const auto r = role_from_name(role);
    if (!r) schema_error(where + ".role", "unknown role \"" + role + "\"");
    e.role = *r;
    entries.push_back(e);
  }
  if (entries.empty()) schema_error("domains", "must list at least one domain");
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].id != static_cast<int>(i))
      fail(ErrorKind::Schema, "manifest domains: ids must be dense from 0 (expected " + std::to_string(i) +
                                  ", found " + std::to_string(entries[i].id) + ")");
  ds.domains.entries = entries;

  const fs::path base = fs::path(manifest_path).parent_path();
  for (std::size_t i = 0; i < doc["images"].size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    const json& im = doc["images"][i];
    check_fields(im, where, {"path", "domain", "annotations"});
    PatchRecord rec;
    rec.path = string_field(im, "path", where);
    rec.domain_id = int_field(im, "domain", where);
    if (rec.domain_id < 0 || static_cast<std::size_t>(rec.domain_id) >= entries.size())
      schema_error(where + ".domain", "refers to undeclared domain " + std::to_string(rec.domain_id));
    const fs::path full = base / rec.path;
    if (!fs::exists(full)) fail(ErrorKind::MissingFile, "manifest " + where + ".path: file not found: " + full.string());
    rec.image = read_png(full.string());

    const json& anns = im["annotations"];
    if (!anns.is_array()) schema_error(where + ".annotations", "expected an array");
    for (std::size_t j = 0; j < anns.size(); ++j) {
      const std::string aw = where + ".annotations[" + std::to_string(j) + "]";
      const json& a = anns[j];
      check_fields(a, aw, {"x_min", "y_min", "x_max", "y_max", "class"});
      const std::string cls = string_field(a, "class", aw);
      const int cid = class_from_name(cls);
      if (cid < 0)
        schema_error(aw + ".class", "unknown class \"" + cls + "\" (expected \"mitotic_figure\" or \"hard_negative\")");
      BBox b{number_field(a, "x_min", aw), number_field(a, "y_min", aw), number_field(a, "x_max", aw),
             number_field(a, "y_max", aw)};
      if (!(b.x_min < b.x_max && b.y_min < b.y_max)) schema_error(aw, "box has non-positive extent");
      b = clamp_box(b, rec.image.width, rec.image.height);
      if (!b.valid()) {
        warn(aw + " lies outside its image and was dropped");
        continue;
      }
      rec.annotations.push_back({b, cid});
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

void write_manifest(const std::string& manifest_path, const Dataset& dataset) {
  ordered_json doc;
  doc["domains"] = ordered_json::array();
  for (const auto& e : dataset.domains.entries)
    doc["domains"].push_back({{"id", e.id}, {"name", e.name}, {"role", role_name(e.role)}});
  doc["images"] = ordered_json::array();
  for (const auto& r : dataset.records) {
    ordered_json anns = ordered_json::array();
    for (const auto& a : r.annotations)
      anns.push_back({{"x_min", a.box.x_min},
                      {"y_min", a.box.y_min},
                      {"x_max", a.box.x_max},
                      {"y_max", a.box.y_max},
                      {"class", class_name(a.class_id)}});
    doc["images"].push_back({{"path", r.path}, {"domain", r.domain_id}, {"annotations", anns}});
  }
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write manifest: " + manifest_path);
  out << doc.dump(2) << '\n';
  if (!out) fail(ErrorKind::Io, "write failed: " + manifest_path);
}

void convert_point_manifest(const std::string& in_path, const std::string& out_path, double box_size) {
  if (!(box_size > 0)) fail(ErrorKind::Config, "point box size must be > 0");
  json doc = read_json_file(in_path);
  check_fields(doc, "root", {"domains", "images"});
  if (!doc["images"].is_array()) schema_error("images", "expected an array");
  for (std::size_t i = 0; i < doc["images"].size(); ++i) {
    json& im = doc["images"][i];
    const std::string where = "images[" + std::to_string(i) + "]";
    if (!im.is_object() || !im.contains("annotations") || !im["annotations"].is_array())
      schema_error(where, "expected an object with an annotations array");
    json boxes = json::array();
    for (std::size_t j = 0; j < im["annotations"].size(); ++j) {
      const json& a = im["annotations"][j];
      const std::string aw = where + ".annotations[" + std::to_string(j) + "]";
      check_fields(a, aw, {"x", "y", "class"});
      const double x = number_field(a, "x", aw), y = number_field(a, "y", aw);
      const double h = 0.5 * box_size;
      boxes.push_back({{"x_min", x - h}, {"y_min", y - h}, {"x_max", x + h}, {"y_max", y + h}, {"class", a["class"]}});
    }
    im["annotations"] = boxes;
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write manifest: " + out_path);
  out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Patches and batches

std::vector<PatchRecord> mine_patches(const RgbImage& image, const std::vector<Annotation>& annotations,
                                      int domain_id, int patch_size) {
  if (patch_size < 1 || image.width < patch_size || image.height < patch_size)
    fail(ErrorKind::Config, "image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                                " is smaller than patch size " + std::to_string(patch_size));
  std::vector<PatchRecord> out;
  for (const auto& centre : annotations) {
    const int x0 = std::clamp(static_cast<int>(std::lround(centre.box.cx() - 0.5 * patch_size)), 0,
                              image.width - patch_size);
    const int y0 = std::clamp(static_cast<int>(std::lround(centre.box.cy() - 0.5 * patch_size)), 0,
                              image.height - patch_size);
    PatchRecord rec;
    rec.domain_id = domain_id;
    rec.image = RgbImage(patch_size, patch_size);
    for (int y = 0; y < patch_size; ++y)
      std::copy_n(image.at(x0, y0 + y), static_cast<std::size_t>(patch_size) * 3, rec.image.at(0, y));
    for (const auto& a : annotations) {
      const double cx = a.box.cx(), cy = a.box.cy();
      if (cx < x0 || cx >= x0 + patch_size || cy < y0 || cy >= y0 + patch_size) continue;
      BBox b{a.box.x_min - x0, a.box.y_min - y0, a.box.x_max - x0, a.box.y_max - y0};
      b = clamp_box(b, patch_size, patch_size);
      if (b.valid()) rec.annotations.push_back({b, a.class_id});
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<std::size_t> compose_batch(const std::vector<std::vector<std::size_t>>& records_by_domain,
                                       int batch_size, std::uint64_t seed, long step) {
  const int domains = static_cast<int>(records_by_domain.size());
  if (domains == 0) fail(ErrorKind::Config, "compose_batch: no training domains");
  if (batch_size <= 0 || batch_size % domains != 0)
    fail(ErrorKind::Config, "batch size " + std::to_string(batch_size) + " is not divisible by the " +
                                std::to_string(domains) + " training domains");
  require(step >= 0, "compose_batch: negative step");
  const int per = batch_size / domains;
  std::vector<std::size_t> out;
  for (int d = 0; d < domains; ++d) {
    const auto& pool = records_by_domain[d];
    if (pool.empty()) fail(ErrorKind::Config, "compose_batch: training domain slot " + std::to_string(d) + " is empty");
    const long n = static_cast<long>(pool.size());
    long cached_epoch = -1;
    std::vector<std::size_t> perm;
    for (int j = 0; j < per; ++j) {
      const long pos = step * per + j;
      const long epoch = pos / n;
      if (epoch != cached_epoch) {
        perm.resize(pool.size());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        Rng rng = Rng::derive(seed, {0x62617463ULL, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(epoch)});
        rng.shuffle(perm);
        cached_epoch = epoch;
      }
      out.push_back(pool[perm[pos % n]]);
    }
  }
  return out;
}

void split_dataset(Dataset& dataset, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    fail(ErrorKind::Config, "split fractions must be non-negative and sum to 1");
  for (const auto& dom : dataset.domains.entries) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dataset.records.size(); ++i)
      if (dataset.records[i].domain_id == dom.id) idx.push_back(i);
    if (dom.role == DomainRole::LabeledTarget) {
      for (auto i : idx) dataset.records[i].split = Split::Test;
      continue;
    }
    Rng rng = Rng::derive(seed, {0x73706c6974ULL, static_cast<std::uint64_t>(dom.id)});
    rng.shuffle(idx);
    const auto n = static_cast<double>(idx.size());
    const std::size_t n_train = std::min(idx.size(), static_cast<std::size_t>(std::llround(f.train * n)));
    const std::size_t n_val =
        std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(f.val * n)));
    for (std::size_t k = 0; k < idx.size(); ++k)
      dataset.records[idx[k]].split = k < n_train ? Split::Train : (k < n_train + n_val ? Split::Val : Split::Test);
    if (n_train == 0 && !idx.empty())
      warn("domain " + dom.name + " has no training records after splitting");
  }
}

Tensor stack_images(const std::vector<const PatchRecord*>& records) {
  require(!records.empty(), "stack_images: no records");
  const int h = records.front()->image.height, w = records.front()->image.width;
  Tensor out({static_cast<int>(records.size()), 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t n = 0; n < records.size(); ++n) {
    const RgbImage& im = records[n]->image;
    if (im.height != h || im.width != w)
      fail(ErrorKind::Contract, "all patches in a batch must share one size (" + std::to_string(w) + "x" +
                                    std::to_string(h) + " vs " + std::to_string(im.width) + "x" +
                                    std::to_string(im.height) + ")");
    double* dst = out.data() + n * 3 * plane;
    for (std::size_t p = 0; p < plane; ++p)
      for (int c = 0; c < 3; ++c) dst[c * plane + p] = im.pixels[p * 3 + c] / 255.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SynthSpec::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::Config, "synth: " + m); };
  if (num_domains < 1) bad("num_domains must be >= 1");
  if (images_per_domain < 0) bad("images_per_domain must be >= 0");
  if (patch_size < 16) bad("patch_size must be >= 16");
  if (min_cells < 0 || max_cells < min_cells) bad("need 0 <= min_cells <= max_cells");
  if (background_nuclei < 0) bad("background_nuclei must be >= 0");
  if (!(mitotic_fraction >= 0 && mitotic_fraction <= 1)) bad("mitotic_fraction must lie in [0,1]");
  if (!(cell_radius_min > 0 && cell_radius_max >= cell_radius_min)) bad("bad cell radius range");
  if (!roles.empty() && roles.size() != static_cast<std::size_t>(num_domains)) bad("roles must list every domain");
  if (!styles.empty() && styles.size() != static_cast<std::size_t>(num_domains)) bad("styles must list every domain");
}

DomainStyle default_style(int d, std::uint64_t seed) {
  static const DomainStyle table[] = {
      {{1.00, 1.00, 1.00}, {0.00, 0.00, 0.00}, {1.00, 1.00, 1.00}},
      {{0.80, 1.05, 1.10}, {0.10, -0.08, -0.05}, {1.40, 0.85, 1.00}},
      {{1.10, 0.75, 0.85}, {-0.08, 0.12, 0.10}, {0.75, 1.30, 1.35}},
      {{0.85, 0.90, 1.05}, {0.05, 0.00, -0.10}, {1.60, 1.50, 0.80}},
  };
  if (d >= 0 && d < 4) return table[d];
  Rng rng = Rng::derive(seed, {0x7374796c65ULL, static_cast<std::uint64_t>(d)});
  DomainStyle s;
  for (int c = 0; c < 3; ++c) {
    s.gain[c] = rng.uniform(0.7, 1.15);
    s.bias[c] = rng.uniform(-0.12, 0.12);
    s.gamma[c] = rng.uniform(0.7, 1.6);
  }
  return s;
}

namespace {

struct Blob {
  double cx, cy, a, b, theta, amp, phase;
  int lobes;
  std::array<double, 3> color;
};

// Renders `blob` over `img` (H x W x 3, row-major) and returns the bounding
// box of pixels whose coverage is at least one half.
std::optional<BBox> render_blob(std::vector<double>& img, int size, const Blob& blob, Rng& rng) {
  const double reach = blob.a * (1.0 + blob.amp) + 2.0;
  const int x_lo = std::max(0, static_cast<int>(std::floor(blob.cx - reach)));
  const int x_hi = std::min(size - 1, static_cast<int>(std::ceil(blob.cx + reach)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(blob.cy - reach)));
  const int y_hi = std::min(size - 1, static_cast<int>(std::ceil(blob.cy + reach)));
  const double ct = std::cos(blob.theta), st = std::sin(blob.theta);
  int bx0 = size, by0 = size, bx1 = -1, by1 = -1;
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x) {
      const double dx = x + 0.5 - blob.cx, dy = y + 0.5 - blob.cy;
      const double u = (dx * ct + dy * st) / blob.a;
      const double v = (-dx * st + dy * ct) / blob.b;
      const double rho = std::sqrt(u * u + v * v);
      const double boundary = 1.0 + blob.amp * std::sin(blob.lobes * std::atan2(v, u) + blob.phase);
      const double alpha = std::clamp((boundary - rho) * blob.b + 0.5, 0.0, 1.0);
      if (alpha <= 0) continue;
      const double grain = 0.03 * rng.normal();
      double* px = img.data() + (static_cast<std::size_t>(y) * size + x) * 3;
      for (int c = 0; c < 3; ++c) px[c] = (1 - alpha) * px[c] + alpha * (blob.color[c] + grain);
      if (alpha >= 0.5) {
        bx0 = std::min(bx0, x);
        by0 = std::min(by0, y);
        bx1 = std::max(bx1, x + 1);
        by1 = std::max(by1, y + 1);
      }
    }
  if (bx1 < 0) return std::nullopt;
  return BBox{static_cast<double>(bx0), static_cast<double>(by0), static_cast<double>(bx1), static_cast<double>(by1)};
}

struct RenderedPatch {
  std::vector<double> pixels;  // pre-style, H x W x 3
  std::vector<Annotation> annotations;
};

RenderedPatch render_patch(const SynthSpec& spec, Rng& rng) {
  const int s = spec.patch_size;
  const double scale = s / 64.0;
  RenderedPatch out;
  out.pixels.resize(static_cast<std::size_t>(s) * s * 3);

  // Eosin-like background with low-frequency texture.
  const std::array<double, 3> bg{0.93, 0.76, 0.85};
  double fx[3], fy[3], ph[3];
  for (int k = 0; k < 3; ++k) {
    fx[k] = rng.uniform(0.5, 3.0) * 2 * M_PI / s;
    fy[k] = rng.uniform(0.5, 3.0) * 2 * M_PI / s;
    ph[k] = rng.uniform(0, 2 * M_PI);
  }
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      double tex = 0;
      for (int k = 0; k < 3; ++k) tex += std::sin(fx[k] * x + fy[k] * y + ph[k]);
      tex *= 0.015;
      const double noise = 0.012 * rng.normal();
      double* px = out.pixels.data() + (static_cast<std::size_t>(y) * s + x) * 3;
      for (int c = 0; c < 3; ++c) px[c] = bg[c] + tex + noise;
    }

  std::vector<Blob> placed;
  auto place = [&](double a) -> std::optional<std::pair<double, double>> {
    for (int attempt = 0; attempt < 60; ++attempt) {
      const double margin = a * 1.3 + 2.0;
      if (s - 2 * margin <= 0) return std::nullopt;
      const double cx = rng.uniform(margin, s - margin), cy = rng.uniform(margin, s - margin);
      bool clear = true;
      for (const auto& p : placed)
        if (std::hypot(cx - p.cx, cy - p.cy) < 1.3 * (a + p.a) + 2.0) clear = false;
      if (clear) return std::pair{cx, cy};
    }
    return std::nullopt;
  };

  const int cells = rng.uniform_int(spec.min_cells, spec.max_cells);
  for (int i = 0; i < cells; ++i) {
    const bool mitotic = rng.uniform() < spec.mitotic_fraction;
    Blob blob{};
    const double r = rng.uniform(spec.cell_radius_min, spec.cell_radius_max) * scale;
    if (mitotic) {
      blob.a = r;
      blob.b = r * rng.uniform(0.45, 0.65);
      blob.amp = rng.uniform(0.12, 0.22);
      blob.lobes = rng.uniform_int(3, 5);
      const double j = 0.04 * rng.normal();
      blob.color = {0.30 + j, 0.13 + j, 0.40 + j};
    } else {
      blob.a = r;
      blob.b = r * rng.uniform(0.82, 1.0);
      blob.amp = rng.uniform(0.0, 0.04);
      blob.lobes = rng.uniform_int(2, 4);
      const double j = 0.04 * rng.normal();
      blob.color = {0.58 + j, 0.42 + j, 0.68 + j};
    }
    blob.theta = rng.uniform(0, M_PI);
    blob.phase = rng.uniform(0, 2 * M_PI);
    const auto pos = place(blob.a);
    if (!pos) continue;
    blob.cx = pos->first;
    blob.cy = pos->second;
    placed.push_back(blob);
    if (auto box = render_blob(out.pixels, s, blob, rng))
      out.annotations.push_back({*box, mitotic ? kMitoticFigure : kHardNegative});
  }
  for (int i = 0; i < spec.background_nuclei; ++i) {
    Blob blob{};
    const double r = rng.uniform(0.6, 0.9) * spec.cell_radius_min * scale;
    blob.a = r;
    blob.b = r * rng.uniform(0.85, 1.0);
    blob.amp = 0.02;
    blob.lobes = 3;
    blob.theta = rng.uniform(0, M_PI);
    blob.phase = rng.uniform(0, 2 * M_PI);
    blob.color = {0.80, 0.66, 0.82};
    const auto pos = place(blob.a);
    if (!pos) continue;
    blob.cx = pos->first;
    blob.cy = pos->second;
    placed.push_back(blob);
    render_blob(out.pixels, s, blob, rng);
  }
  return out;
}

RgbImage apply_style(const std::vector<double>& pixels, int size, const DomainStyle& style) {
  RgbImage img(size, size);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const int c = static_cast<int>(i % 3);
    const double v = std::clamp(pixels[i], 0.0, 1.0);
    const double t = std::clamp(style.gain[c] * std::pow(v, style.gamma[c]) + style.bias[c], 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(t * 255.0));
  }
  return img;
}

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, "cannot open: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

SynthResult synth_dataset(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory " + out_dir + ": " + ec.message());

  SynthResult res;
  Dataset& ds = res.dataset;
  for (int d = 0; d < spec.num_domains; ++d) {
    const DomainRole role = spec.roles.empty() ? DomainRole::LabeledSource : spec.roles[d];
    ds.domains.entries.push_back({d, "synth_scanner_" + std::to_string(d), role});
  }
  for (int d = 0; d < spec.num_domains; ++d) {
    const DomainStyle style = spec.styles.empty() ? default_style(d, spec.seed) : spec.styles[d];
    for (int i = 0; i < spec.images_per_domain; ++i) {
      Rng rng = Rng::derive(spec.seed, {0x73796e7468ULL, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(i)});
      RenderedPatch patch = render_patch(spec, rng);
      PatchRecord rec;
      rec.domain_id = d;
      rec.image = apply_style(patch.pixels, spec.patch_size, style);
      rec.annotations = std::move(patch.annotations);
      char name[64];
      std::snprintf(name, sizeof name, "images/d%d_%05d.png", d, i);
      rec.path = name;
      write_png((fs::path(out_dir) / rec.path).string(), rec.image);
      ds.records.push_back(std::move(rec));
    }
  }
  res.manifest_path = (fs::path(out_dir) / "manifest.json").string();
  write_manifest(res.manifest_path, ds);
  res.checksum = dataset_checksum(res.manifest_path);
  return res;
}

std::uint64_t dataset_checksum(const std::string& manifest_path) {
  auto bytes = read_bytes(manifest_path);
  std::uint64_t h = fnv1a(bytes.data(), bytes.size());
  const json doc = read_json_file(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  if (doc.contains("images") && doc["images"].is_array())
    for (const auto& im : doc["images"]) {
      if (!im.is_object() || !im.contains("path") || !im["path"].is_string()) continue;
      auto raster = read_bytes((base / im["path"].get<std::string>()).string());
      h = fnv1a(raster.data(), raster.size(), h);
    }
  return h;
}

}  // namespace homdet
