// SPDX-License-Identifier: Apache-2.0
//
// Training loop, checkpoints and detection metrics.
//
// Checkpoint layout (little-endian):
//   magic "HDCK" | u32 version (=1) | str config echo | i64 step |
//   u32 count | count x { str name | tensor value | tensor m | tensor v }
#pragma once

#include <array>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "homdet/config.hpp"
#include "homdet/data.hpp"
#include "homdet/nets.hpp"

namespace homdet {

struct LogRow {
  long step = 0;
  LossBreakdown losses;
  double domain_acc = 0;
  double lr = 0;
  double wall_time = 0;  // seconds since the run (or resume) started
};

struct TrainLog {
  std::vector<LogRow> rows;
};

struct EvalRow {
  long step = 0;
  std::array<double, kNumClasses> ap{};
  double map = 0;
};

struct AdamState {
  std::vector<Tensor> m, v;
};

/// Adam update applied in place to every parameter of `model` that holds a
/// gradient. `t` is the 1-based update count.
void adam_step(Model& model, AdamState& state, const TrainConfig& cfg, double lr, long t);

struct Checkpoint {
  RunConfig config;
  Model model;
  AdamState adam;
  long step = 0;
};

void save_checkpoint(const std::string& path, const RunConfig& cfg, const Model& model,
                     const AdamState& adam, long step);
Checkpoint load_checkpoint(const std::string& path);
/// "ckpt_000123.bin"
std::string checkpoint_name(long step);

/// Domains feeding training batches, ordered by id. The classifier target of
/// a record is the position of its domain in this list.
std::vector<int> training_domains(const Dataset& dataset, bool include_unlabeled);

struct TrainOptions {
  std::string out_dir;      // empty: keep everything in memory
  std::string resume_from;  // checkpoint to continue from
  std::function<void(const LogRow&)> on_step;
};

struct TrainResult {
  RunConfig config;  // num_domains filled in from the dataset
  Model model;
  AdamState adam;
  long step = 0;
  TrainLog log;
  std::vector<EvalRow> evals;
};

/// Trains on the records marked Split::Train. Throws DivergenceError with the
/// offending step when the loss is non-finite or above the threshold.
TrainResult train(const RunConfig& cfg, const Dataset& dataset, const TrainOptions& options = {});

void write_train_log(const std::string& path, const TrainLog& log, const RunConfig& cfg);
std::string train_log_header(const RunConfig& cfg);
std::string train_log_row(const LogRow& row);

// ---------------------------------------------------------------------------
// Metrics

/// All-points interpolated AP for TP flags already sorted by descending
/// score. num_gt == 0 yields 0 with a warning.
double average_precision(const std::vector<bool>& tp_sorted, long num_gt);

struct PrPoint {
  double score_threshold = 0, precision = 0, recall = 0;
};

struct ClassReport {
  double ap = 0;
  long tp = 0, fp = 0, fn = 0, num_gt = 0;
  std::vector<PrPoint> pr;  // one point per distinct score, descending
};

struct EvalReport {
  std::array<ClassReport, kNumClasses> classes;
  double map = 0;
  std::map<int, std::array<double, kNumClasses>> per_domain_ap;
  std::size_t images = 0;
};

/// Per-class pooled evaluation of prepared detections.
EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& detections,
                               const std::vector<std::vector<Annotation>>& ground_truth,
                               double iou_threshold = 0.5);

/// Runs the model over `records` and evaluates its detections. Adds a
/// per-domain breakdown.
EvalReport evaluate(const Model& model, const std::vector<const PatchRecord*>& records,
                    const NmsParams& nms, double iou_threshold = 0.5);
/// Ground truth replayed as score-1 detections.
EvalReport evaluate_oracle(const std::vector<const PatchRecord*>& records, double iou_threshold = 0.5);

std::vector<const PatchRecord*> records_in_split(const Dataset& dataset, Split split);

struct InferResult {
  std::vector<Detection> detections;
  Tensor homogenized;  // [3, H, W]; the input itself without a homogenizer
};

InferResult infer(const Model& model, const RgbImage& image, const NmsParams& nms);

/// Fraction of records whose homogenized image the domain head assigns to
/// the record's training slot. `slot_of_domain` maps domain id to slot.
double domain_accuracy(const Model& model, const std::vector<const PatchRecord*>& records,
                       const std::map<int, int>& slot_of_domain);

/// Mean over pixels of the Euclidean RGB distance between input and
/// homogenized output.
double reconstruction_l2(const Model& model, const std::vector<const PatchRecord*>& records);

void write_metrics_csv(const std::string& path, const EvalReport& report);
void write_pr_csv(const std::string& path, const EvalReport& report);

}  // namespace homdet
