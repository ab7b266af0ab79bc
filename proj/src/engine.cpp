// SPDX-License-Identifier: Apache-2.0
#include "homdet/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "homdet/error.hpp"
#include "homdet/serialize.hpp"

namespace fs = std::filesystem;

namespace homdet {

namespace {
constexpr char kCheckpointMagic[4] = {'H', 'D', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr int kEvalChunk = 8;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

// ---------------------------------------------------------------------------
// Optimizer and checkpoints

void adam_step(Model& model, AdamState& state, const TrainConfig& cfg, double lr, long t) {
  const auto& params = model.parameters();
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.var->value.shape());
      state.v.emplace_back(p.var->value.shape());
    }
  }
  require(state.m.size() == params.size() && state.v.size() == params.size(), "adam_step: state size mismatch");
  require(t >= 1, "adam_step: update count starts at 1");
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Node& node = *params[i].var;
    if (node.grad.empty()) continue;
    double* w = node.value.data();
    const double* g = node.grad.data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    for (std::size_t j = 0; j < node.value.size(); ++j) {
      m[j] = b1 * m[j] + (1 - b1) * g[j];
      v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.adam_eps);
    }
  }
}

std::string checkpoint_name(long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06ld.bin", step);
  return buf;
}

void save_checkpoint(const std::string& path, const RunConfig& cfg, const Model& model, const AdamState& adam,
                     long step) {
  const auto& params = model.parameters();
  require(adam.m.empty() || adam.m.size() == params.size(), "save_checkpoint: optimizer state size mismatch");
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(config_to_text(cfg));
  w.i64(step);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& value = params[i].var->value;
    w.str(params[i].name);
    w.tensor(value);
    w.tensor(adam.m.empty() ? Tensor(value.shape()) : adam.m[i]);
    w.tensor(adam.v.empty() ? Tensor(value.shape()) : adam.v[i]);
  }
  w.write_file(path);
}

Checkpoint load_checkpoint(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kCheckpointMagic))
    fail(ErrorKind::Version, path + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    fail(ErrorKind::Version, path + ": unsupported checkpoint version " + std::to_string(version));
  RunConfig cfg = config_from_text(r.str(), path + " (config echo)");
  cfg.validate();
  const long step = static_cast<long>(r.i64());
  Checkpoint ck{cfg, Model(cfg.model), {}, step};
  const auto& params = ck.model.parameters();
  const std::uint32_t count = r.u32();
  if (count != params.size())
    fail(ErrorKind::Schema, path + ": holds " + std::to_string(count) + " tensors, model expects " +
                                std::to_string(params.size()));
  for (const auto& p : params) {
    const std::string name = r.str();
    if (name != p.name) fail(ErrorKind::Schema, path + ": expected parameter " + p.name + ", found " + name);
    Tensor value = r.tensor(), m = r.tensor(), v = r.tensor();
    if (!value.same_shape(p.var->value) || !m.same_shape(p.var->value) || !v.same_shape(p.var->value))
      fail(ErrorKind::Schema, path + ": shape mismatch for " + name);
    p.var->value = std::move(value);
    ck.adam.m.push_back(std::move(m));
    ck.adam.v.push_back(std::move(v));
  }
  if (!r.at_end()) fail(ErrorKind::Schema, path + ": trailing bytes after the last tensor");
  return ck;
}

// ---------------------------------------------------------------------------
// Training

std::vector<int> training_domains(const Dataset& dataset, bool include_unlabeled) {
  std::vector<int> out;
  for (const auto& e : dataset.domains.entries) {
    if (e.role == DomainRole::LabeledSource || (include_unlabeled && e.role == DomainRole::UnlabeledSource)) {
      const bool has_train = std::any_of(dataset.records.begin(), dataset.records.end(), [&](const PatchRecord& r) {
        return r.domain_id == e.id && r.split == Split::Train;
      });
      if (has_train) out.push_back(e.id);
    }
  }
  return out;
}

std::string train_log_header(const RunConfig& cfg) {
  return "# lambda1=" + config_get(cfg, "lambda1") + " lambda2=" + config_get(cfg, "lambda2") +
         " batch_size=" + config_get(cfg, "batch_size") + " learning_rate=" + config_get(cfg, "learning_rate") +
         " seed=" + config_get(cfg, "seed") + "\nstep,l_bb,l_inst,l_percep,l_ce,total,domain_acc,lr\n";
}

std::string train_log_row(const LogRow& row) {
  return std::to_string(row.step) + "," + fmt17(row.losses.l_bb) + "," + fmt17(row.losses.l_inst) + "," +
         fmt17(row.losses.l_percep) + "," + fmt17(row.losses.l_ce) + "," + fmt17(row.losses.total) + "," +
         fmt17(row.domain_acc) + "," + fmt17(row.lr) + "\n";
}

void write_train_log(const std::string& path, const TrainLog& log, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << train_log_header(cfg);
  for (const auto& row : log.rows) out << train_log_row(row);
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

namespace {

std::string model_echo(const RunConfig& cfg) {
  RunConfig model_only;
  model_only.model = cfg.model;
  std::string text;
  for (const auto& k : config_keys()) {
    if (k.name == "batch_size") break;  // model keys come first
    text += k.name + "=" + config_get(model_only, k.name) + "\n";
  }
  return text;
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& idx, const std::map<int, int>& slot) {
  Batch b;
  std::vector<const PatchRecord*> recs;
  for (std::size_t i : idx) {
    const PatchRecord& r = ds.records[i];
    recs.push_back(&r);
    b.domains.push_back(slot.at(r.domain_id));
    const bool labeled = ds.domains.at(r.domain_id).role != DomainRole::UnlabeledSource;
    b.labeled.push_back(labeled);
    b.annotations.push_back(labeled ? r.annotations : std::vector<Annotation>{});
  }
  b.images = stack_images(recs);
  return b;
}

}  // namespace

TrainResult train(const RunConfig& cfg_in, const Dataset& dataset, const TrainOptions& options) {
  RunConfig cfg = cfg_in;
  const std::vector<int> domains = training_domains(dataset, cfg.train.include_unlabeled);
  if (std::none_of(domains.begin(), domains.end(),
                   [&](int d) { return dataset.domains.at(d).role == DomainRole::LabeledSource; }))
    fail(ErrorKind::Config, "training needs at least one labeled_source domain with train records");
  cfg.model.num_domains = static_cast<int>(domains.size());
  cfg.validate();
  if (domains.size() == 1) warn("only one training domain: the domain loss is degenerate");

  std::map<int, int> slot;
  std::vector<std::vector<std::size_t>> by_domain(domains.size());
  for (std::size_t s = 0; s < domains.size(); ++s) slot[domains[s]] = static_cast<int>(s);
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const PatchRecord& r = dataset.records[i];
    if (r.split != Split::Train || !slot.count(r.domain_id)) continue;
    by_domain[slot[r.domain_id]].push_back(i);
  }
  if (cfg.train.batch_size % static_cast<int>(domains.size()) != 0)
    fail(ErrorKind::Config, "batch_size " + std::to_string(cfg.train.batch_size) + " is not divisible by the " +
                                std::to_string(domains.size()) + " training domains");

  TrainResult res{cfg, Model(cfg.model), {}, 0, {}, {}};
  if (!options.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(options.resume_from);
    if (model_echo(ck.config) != model_echo(cfg))
      fail(ErrorKind::Config, options.resume_from + ": model configuration differs from the run configuration");
    res.model = std::move(ck.model);
    res.adam = std::move(ck.adam);
    res.step = ck.step;
    if (res.step > cfg.train.max_steps)
      fail(ErrorKind::Config, "checkpoint step " + std::to_string(res.step) + " is past max_steps " +
                                  std::to_string(cfg.train.max_steps));
  }

  const bool to_disk = !options.out_dir.empty();
  std::ofstream log_file;
  if (to_disk) {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + options.out_dir + ": " + ec.message());
    log_file.open(fs::path(options.out_dir) / "train_log.csv", std::ios::trunc);
    if (!log_file) fail(ErrorKind::Io, "cannot write train_log.csv in " + options.out_dir);
    log_file << train_log_header(cfg) << std::flush;
  }
  auto checkpoint = [&](long step) {
    if (to_disk)
      save_checkpoint((fs::path(options.out_dir) / checkpoint_name(step)).string(), cfg, res.model, res.adam, step);
  };
  if (res.step == 0) checkpoint(0);

  const std::vector<const PatchRecord*> val = records_in_split(dataset, Split::Val);
  const auto t0 = std::chrono::steady_clock::now();
  ObjectiveParams obj;
  obj.weights = cfg.train.weights;
  obj.focal = cfg.train.focal;
  obj.smooth_l1_beta = cfg.train.smooth_l1_beta;
  obj.pos_threshold = cfg.train.pos_threshold;
  obj.neg_threshold = cfg.train.neg_threshold;

  for (long step = res.step; step < cfg.train.max_steps; ++step) {
    const Batch batch = make_batch(dataset, compose_batch(by_domain, cfg.train.batch_size, cfg.train.seed, step), slot);
    obj.grl_strength = cfg.train.grl_at(step);
    TrainForward fw;
    try {
      fw = res.model.forward_train(batch, obj);
    } catch (const DivergenceError& e) {
      throw DivergenceError(step, "training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(fw.losses.total) || fw.losses.total > cfg.train.divergence_threshold)
      throw DivergenceError(step, "training diverged at step " + std::to_string(step) + ": loss " +
                                      fmt17(fw.losses.total));
    res.model.zero_grad();
    ad::backward(fw.total);
    const double lr = cfg.train.lr_at(step);
    adam_step(res.model, res.adam, cfg.train, lr, step + 1);

    LogRow row;
    row.step = step;
    row.losses = fw.losses;
    row.domain_acc = fw.domain_accuracy;
    row.lr = lr;
    row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.rows.push_back(row);
    if (to_disk) log_file << train_log_row(row) << std::flush;
    if (options.on_step) options.on_step(row);
    res.step = step + 1;

    if (cfg.train.eval_interval > 0 && res.step % cfg.train.eval_interval == 0 && !val.empty()) {
      const EvalReport rep = evaluate(res.model, val, cfg.nms, cfg.eval_iou);
      res.evals.push_back({res.step, {rep.classes[0].ap, rep.classes[1].ap}, rep.map});
    }
    if (cfg.train.checkpoint_interval > 0 && res.step % cfg.train.checkpoint_interval == 0 &&
        res.step != cfg.train.max_steps)
      checkpoint(res.step);
  }
  res.model.zero_grad();
  if (res.step == cfg.train.max_steps && cfg.train.max_steps > 0) checkpoint(res.step);

  if (to_disk && !res.evals.empty()) {
    std::ofstream ev(fs::path(options.out_dir) / "eval_log.csv", std::ios::trunc);
    ev << "step,ap_hard_negative,ap_mitotic_figure,map\n";
    for (const auto& e : res.evals)
      ev << e.step << "," << fmt17(e.ap[0]) << "," << fmt17(e.ap[1]) << "," << fmt17(e.map) << "\n";
  }
  return res;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

double ap_unchecked(const std::vector<bool>& tp_sorted, long num_gt) {
  const std::size_t n = tp_sorted.size();
  std::vector<double> precision(n), recall(n);
  long tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += tp_sorted[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace

double average_precision(const std::vector<bool>& tp_sorted, long num_gt) {
  require(num_gt >= 0, "average_precision: num_gt must be >= 0");
  require(std::count(tp_sorted.begin(), tp_sorted.end(), true) <= num_gt,
          "average_precision: more true positives than ground truths");
  if (num_gt == 0) {
    warn(tp_sorted.empty() ? "average precision with no ground truth and no detections is defined as 0"
                           : "average precision with no ground truth is defined as 0");
    return 0.0;
  }
  return ap_unchecked(tp_sorted, num_gt);
}

namespace {

EvalReport evaluate_impl(const std::vector<std::vector<Detection>>& detections,
                         const std::vector<std::vector<Annotation>>& ground_truth, double iou_threshold,
                         bool quiet) {
  require(detections.size() == ground_truth.size(), "evaluate_detections: one detection list per image");
  if (detections.empty()) fail(ErrorKind::Contract, "evaluate: empty split");
  EvalReport rep;
  rep.images = detections.size();
  struct Scored {
    double score;
    bool tp;
  };
  std::array<std::vector<Scored>, kNumClasses> scored;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const std::vector<bool> flags = greedy_match_detections(detections[i], ground_truth[i], iou_threshold);
    for (std::size_t j = 0; j < detections[i].size(); ++j) {
      const Detection& d = detections[i][j];
      require(d.class_id >= 0 && d.class_id < kNumClasses, "evaluate: detection class out of range");
      scored[d.class_id].push_back({d.score, flags[j]});
    }
    for (const auto& g : ground_truth[i]) {
      require(g.class_id >= 0 && g.class_id < kNumClasses, "evaluate: annotation class out of range");
      ++rep.classes[g.class_id].num_gt;
    }
  }
  double sum = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    ClassReport& cr = rep.classes[c];
    auto& s = scored[c];
    std::stable_sort(s.begin(), s.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
    std::vector<bool> flags(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) flags[i] = s[i].tp;
    if (cr.num_gt > 0) cr.ap = ap_unchecked(flags, cr.num_gt);
    else if (!quiet) warn(std::string("no ground truth for class ") + class_name(c) + "; its AP is defined as 0");
    long tp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      tp += s[i].tp;
      const bool last_of_score = i + 1 == s.size() || s[i + 1].score != s[i].score;
      if (last_of_score)
        cr.pr.push_back({s[i].score, static_cast<double>(tp) / static_cast<double>(i + 1),
                         cr.num_gt > 0 ? static_cast<double>(tp) / static_cast<double>(cr.num_gt) : 0.0});
    }
    cr.tp = tp;
    cr.fp = static_cast<long>(s.size()) - tp;
    cr.fn = cr.num_gt - tp;
    sum += cr.ap;
  }
  rep.map = sum / kNumClasses;
  return rep;
}

}  // namespace

EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& detections,
                               const std::vector<std::vector<Annotation>>& ground_truth, double iou_threshold) {
  return evaluate_impl(detections, ground_truth, iou_threshold, false);
}

std::vector<const PatchRecord*> records_in_split(const Dataset& dataset, Split split) {
  std::vector<const PatchRecord*> out;
  for (const auto& r : dataset.records)
    if (r.split == split) out.push_back(&r);
  return out;
}

namespace {

/// Runs `fn(bundle, chunk)` on consecutive chunks of equally sized records.
template <class Fn>
void for_each_chunk(const Model& model, const std::vector<const PatchRecord*>& records, Fn fn) {
  std::size_t i = 0;
  while (i < records.size()) {
    std::vector<const PatchRecord*> chunk{records[i]};
    std::size_t j = i + 1;
    while (j < records.size() && chunk.size() < static_cast<std::size_t>(kEvalChunk) &&
           records[j]->image.width == records[i]->image.width &&
           records[j]->image.height == records[i]->image.height)
      chunk.push_back(records[j++]);
    const ForwardBundle bundle = model.forward(stack_images(chunk), 0.0);
    fn(bundle, chunk);
    i = j;
  }
}

EvalReport with_domains(const std::vector<std::vector<Detection>>& dets, const std::vector<const PatchRecord*>& records,
                        double iou_threshold) {
  std::vector<std::vector<Annotation>> gts;
  for (const auto* r : records) gts.push_back(r->annotations);
  EvalReport rep = evaluate_detections(dets, gts, iou_threshold);
  std::set<int> ids;
  for (const auto* r : records) ids.insert(r->domain_id);
  if (ids.size() > 1) {
    for (int d : ids) {
      std::vector<std::vector<Detection>> dd;
      std::vector<std::vector<Annotation>> gg;
      for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i]->domain_id == d) {
          dd.push_back(dets[i]);
          gg.push_back(gts[i]);
        }
      const EvalReport sub = evaluate_impl(dd, gg, iou_threshold, true);
      rep.per_domain_ap[d] = {sub.classes[0].ap, sub.classes[1].ap};
    }
  } else if (!ids.empty()) {
    rep.per_domain_ap[*ids.begin()] = {rep.classes[0].ap, rep.classes[1].ap};
  }
  return rep;
}

}  // namespace

EvalReport evaluate(const Model& model, const std::vector<const PatchRecord*>& records, const NmsParams& nms,
                    double iou_threshold) {
  if (records.empty()) fail(ErrorKind::Contract, "evaluate: empty split");
  std::vector<std::vector<Detection>> dets;
  for_each_chunk(model, records, [&](const ForwardBundle& b, const std::vector<const PatchRecord*>& chunk) {
    for (std::size_t n = 0; n < chunk.size(); ++n)
      dets.push_back(model.detections(b.detector_out, static_cast<int>(n), chunk[n]->image.height,
                                      chunk[n]->image.width, nms));
  });
  return with_domains(dets, records, iou_threshold);
}

EvalReport evaluate_oracle(const std::vector<const PatchRecord*>& records, double iou_threshold) {
  if (records.empty()) fail(ErrorKind::Contract, "evaluate: empty split");
  std::vector<std::vector<Detection>> dets;
  for (const auto* r : records) {
    std::vector<Detection> d;
    for (const auto& a : r->annotations) d.push_back({a.box, a.class_id, 1.0});
    dets.push_back(std::move(d));
  }
  return with_domains(dets, records, iou_threshold);
}

InferResult infer(const Model& model, const RgbImage& image, const NmsParams& nms) {
  const int m = model.config().size_multiple();
  if (image.width <= 0 || image.height <= 0 || image.width % m != 0 || image.height % m != 0)
    fail(ErrorKind::Config, "image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                                " does not fit the model: sides must be positive multiples of " + std::to_string(m));
  PatchRecord rec;
  rec.image = image;
  const ForwardBundle b = model.forward(stack_images({&rec}), 0.0);
  InferResult out;
  out.detections = model.detections(b.detector_out, 0, image.height, image.width, nms);
  out.homogenized = b.homogenized->value.reshaped({3, image.height, image.width});
  return out;
}

double domain_accuracy(const Model& model, const std::vector<const PatchRecord*>& records,
                       const std::map<int, int>& slot_of_domain) {
  require(model.config().use_homogenizer, "domain_accuracy: model has no domain head");
  require(!records.empty(), "domain_accuracy: no records");
  long correct = 0;
  const int d = model.config().num_domains;
  for_each_chunk(model, records, [&](const ForwardBundle& b, const std::vector<const PatchRecord*>& chunk) {
    const Tensor& logits = b.domain_logits->value;
    for (std::size_t n = 0; n < chunk.size(); ++n) {
      const double* row = logits.data() + n * d;
      const int pred = static_cast<int>(std::max_element(row, row + d) - row);
      correct += pred == slot_of_domain.at(chunk[n]->domain_id);
    }
  });
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double reconstruction_l2(const Model& model, const std::vector<const PatchRecord*>& records) {
  require(!records.empty(), "reconstruction_l2: no records");
  double sum = 0;
  std::size_t pixels = 0;
  for_each_chunk(model, records, [&](const ForwardBundle& b, const std::vector<const PatchRecord*>& chunk) {
    const Tensor x = stack_images(chunk);
    const Tensor& h = b.homogenized->value;
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    for (int n = 0; n < x.dim(0); ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        double s = 0;
        for (int c = 0; c < 3; ++c) {
          const std::size_t k = (static_cast<std::size_t>(n) * 3 + c) * plane + p;
          s += (x[k] - h[k]) * (x[k] - h[k]);
        }
        sum += std::sqrt(s);
        ++pixels;
      }
  });
  return sum / static_cast<double>(pixels);
}

void write_metrics_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << "class,ap,tp,fp,fn\n";
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassReport& cr = report.classes[c];
    out << class_name(c) << "," << fmt17(cr.ap) << "," << cr.tp << "," << cr.fp << "," << cr.fn << "\n";
  }
  long tp = 0, fp = 0, fn = 0;
  for (const auto& cr : report.classes) {
    tp += cr.tp;
    fp += cr.fp;
    fn += cr.fn;
  }
  out << "mAP," << fmt17(report.map) << "," << tp << "," << fp << "," << fn << "\n";
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

void write_pr_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << "class,score_threshold,precision,recall\n";
  for (int c = 0; c < kNumClasses; ++c)
    for (const auto& p : report.classes[c].pr)
      out << class_name(c) << "," << fmt17(p.score_threshold) << "," << fmt17(p.precision) << ","
          << fmt17(p.recall) << "\n";
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

}  // namespace homdet
