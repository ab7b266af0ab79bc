// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "homdet/boxgeom.hpp"
#include "homdet/image_io.hpp"
#include "homdet/tensor.hpp"

namespace homdet {

enum class DomainRole { LabeledSource, UnlabeledSource, LabeledTarget };
const char* role_name(DomainRole role);
std::optional<DomainRole> role_from_name(const std::string& name);

struct DomainEntry {
  int id = 0;
  std::string name;
  DomainRole role = DomainRole::LabeledSource;
};

struct DomainTable {
  std::vector<DomainEntry> entries;  // entries[i].id == i

  std::vector<int> ids_with_role(DomainRole role) const;
  const DomainEntry& at(int id) const;
  std::size_t size() const { return entries.size(); }
};

enum class Split { Train, Val, Test };
const char* split_name(Split s);
std::optional<Split> split_from_name(const std::string& name);

struct PatchRecord {
  RgbImage image;
  std::string path;  // source raster, informational
  int domain_id = 0;
  std::vector<Annotation> annotations;
  Split split = Split::Train;
};

struct Dataset {
  DomainTable domains;
  std::vector<PatchRecord> records;
};

/// Parses and validates a dataset manifest, loading every referenced raster.
/// Unknown fields, unknown class names, non-dense domain ids and missing
/// files raise distinct errors. Boxes are clamped to the image bounds.
Dataset load_dataset(const std::string& manifest_path);

/// Writes `dataset` as a manifest next to already-written rasters; each
/// record's `path` must be relative to the manifest directory.
void write_manifest(const std::string& manifest_path, const Dataset& dataset);

/// Rewrites a manifest whose annotations are points {"x","y","class"} into
/// the box form, using squares of side `box_size` centred on each point.
void convert_point_manifest(const std::string& in_path, const std::string& out_path,
                            double box_size = 50.0);

/// One patch per annotation, centred on it and clamped into the image. Each
/// patch carries every annotation whose centre falls inside its window,
/// rebased and clipped to the patch.
std::vector<PatchRecord> mine_patches(const RgbImage& image, const std::vector<Annotation>& annotations,
                                      int domain_id, int patch_size = 512);

/// Record indices for one batch: batch_size / num_domains from each domain,
/// without replacement inside an epoch of that domain. Pure in (seed, step).
std::vector<std::size_t> compose_batch(const std::vector<std::vector<std::size_t>>& records_by_domain,
                                       int batch_size, std::uint64_t seed, long step);

struct SplitFractions {
  double train = 0.8, val = 0.1, test = 0.1;
};

/// Per-domain stratified split of source domains; labeled-target domains go
/// entirely to test.
void split_dataset(Dataset& dataset, const SplitFractions& fractions, std::uint64_t seed);

/// Per-channel affine-gamma colour transform: out = gain * in^gamma + bias.
struct DomainStyle {
  std::array<double, 3> gain{1, 1, 1};
  std::array<double, 3> bias{0, 0, 0};
  std::array<double, 3> gamma{1, 1, 1};
};

struct SynthSpec {
  int num_domains = 3;
  int images_per_domain = 50;
  int patch_size = 64;
  int min_cells = 1;
  int max_cells = 4;
  int background_nuclei = 2;      // unannotated faint nuclei per image
  double mitotic_fraction = 0.5;  // probability that a cell is class 1
  double cell_radius_min = 4.0;   // pixels at patch_size 64; scaled linearly
  double cell_radius_max = 7.0;
  std::vector<DomainRole> roles;    // empty: all labeled_source
  std::vector<DomainStyle> styles;  // empty: default_style(d, seed)
  std::uint64_t seed = 0;

  void validate() const;
};

/// Style used for domain `d` when the spec does not list one.
DomainStyle default_style(int d, std::uint64_t seed);

struct SynthResult {
  Dataset dataset;
  std::string manifest_path;
  std::uint64_t checksum = 0;  // over the manifest and every raster file
};

/// Renders the corpus into `out_dir` (images/ + manifest.json).
SynthResult synth_dataset(const SynthSpec& spec, const std::string& out_dir);

/// Checksum of a manifest file and every raster file it references.
std::uint64_t dataset_checksum(const std::string& manifest_path);

/// Stacks records into [N, 3, H, W]; all must share one size.
Tensor stack_images(const std::vector<const PatchRecord*>& records);

}  // namespace homdet
