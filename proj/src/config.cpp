// SPDX-License-Identifier: Apache-2.0
#include "homdet/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_map>

#include "homdet/error.hpp"

namespace homdet {

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::Config, m); };
  if (batch_size <= 0) bad("batch_size must be > 0");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) bad("learning_rate must be > 0");
  if (max_steps < 0) bad("max_steps must be >= 0");
  weights.validate();
  focal.validate();
  if (!(smooth_l1_beta > 0)) bad("smooth_l1_beta must be > 0");
  if (!(neg_threshold <= pos_threshold) || !(neg_threshold >= 0) || !(pos_threshold <= 1))
    bad("need 0 <= neg_threshold <= pos_threshold <= 1");
  if (eval_interval < 0 || checkpoint_interval < 0) bad("intervals must be >= 0");
  if (!(grl_strength >= 0) || !std::isfinite(grl_strength)) bad("grl_strength must be >= 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) || !(adam_eps > 0))
    bad("adam betas must lie in [0,1) and adam_eps must be > 0");
  if (!(divergence_threshold > 0)) bad("divergence_threshold must be > 0");
  if (split.train < 0 || split.val < 0 || split.test < 0 ||
      std::abs(split.train + split.val + split.test - 1.0) > 1e-9)
    bad("split fractions must be non-negative and sum to 1");
}

double TrainConfig::lr_at(long step) const {
  if (lr_schedule == LrSchedule::Constant || max_steps <= 1) return learning_rate;
  // Warm up over the first quarter, then anneal; both legs are cosine.
  const double p = static_cast<double>(step) / static_cast<double>(max_steps - 1);
  const double start = learning_rate / 25.0, end = learning_rate / 25.0 / 1e5;
  auto cosine = [](double a, double b, double t) { return b + 0.5 * (a - b) * (1 + std::cos(M_PI * t)); };
  const double pct = 0.25;
  return p < pct ? cosine(start, learning_rate, p / pct) : cosine(learning_rate, end, (p - pct) / (1 - pct));
}

double TrainConfig::grl_at(long step) const {
  if (grl_schedule == GrlSchedule::Constant || max_steps <= 0) return grl_strength;
  const double p = static_cast<double>(step) / static_cast<double>(max_steps);
  return grl_strength * (2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0);
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (!(nms.iou_threshold > 0 && nms.iou_threshold <= 1)) fail(ErrorKind::Config, "nms_iou must lie in (0,1]");
  if (!(nms.score_floor >= 0 && nms.score_floor <= 1)) fail(ErrorKind::Config, "score_floor must lie in [0,1]");
  if (nms.max_detections < 1) fail(ErrorKind::Config, "max_detections must be >= 1");
  if (!(eval_iou > 0 && eval_iou <= 1)) fail(ErrorKind::Config, "eval_iou must lie in (0,1]");
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string fmt(long v) { return std::to_string(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  fail(ErrorKind::Config, "config key " + key + ": cannot parse \"" + value + "\" as " + expected);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, v, std::is_floating_point_v<T> ? "a number" : "an integer");
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = v.find(',', start);
    std::string item = v.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto a = item.find_first_not_of(" \t"), b = item.find_last_not_of(" \t");
    item = a == std::string::npos ? "" : item.substr(a, b - a + 1);
    out.push_back(parse_number<T>(key, item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

struct Entry {
  ConfigKey key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define HD_NUM(name, field, type, doc)                                                         \
  Entry {                                                                                      \
    {name, doc}, [](const RunConfig& c) { return fmt(c.field); },                              \
        [](RunConfig& c, const std::string& v) { c.field = parse_number<type>(name, v); }      \
  }
#define HD_BOOL(name, field, doc)                                                              \
  Entry {                                                                                      \
    {name, doc}, [](const RunConfig& c) { return fmt(c.field); },                              \
        [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }              \
  }
#define HD_LIST(name, field, type, doc)                                                        \
  Entry {                                                                                      \
    {name, doc}, [](const RunConfig& c) { return fmt_list(c.field); },                         \
        [](RunConfig& c, const std::string& v) { c.field = parse_list<type>(name, v); }        \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      // model
      HD_NUM("unet_depth", model.unet_depth, int, "homogenizer encoder levels"),
      HD_NUM("unet_base_channels", model.unet_base_channels, int, "channels at the first encoder level"),
      HD_NUM("num_domains", model.num_domains, int,
             "domain classifier outputs; training sets this to the number of training domains"),
      HD_LIST("anchor_strides", model.anchor_cfg.strides, int, "pyramid strides, must be s,2s"),
      HD_LIST("anchor_scales", model.anchor_cfg.scales, double, "anchor side in units of the stride"),
      HD_LIST("anchor_ratios", model.anchor_cfg.aspect_ratios, double, "anchor height/width ratios"),
      HD_NUM("detector_channels", model.detector_channels, int, "detector pyramid width"),
      HD_NUM("detector_head_convs", model.detector_head_convs, int, "convs in each detector subnet"),
      HD_NUM("domain_head_channels", model.domain_head_channels, int, "domain classifier width"),
      Entry{{"grl_mode", "reverse | identity (identity disables the adversarial coupling)"},
            [](const RunConfig& c) -> std::string { return c.model.grl_mode == GrlMode::Reverse ? "reverse" : "identity"; },
            [](RunConfig& c, const std::string& v) {
              if (v == "reverse") c.model.grl_mode = GrlMode::Reverse;
              else if (v == "identity") c.model.grl_mode = GrlMode::Identity;
              else bad_value("grl_mode", v, "reverse or identity");
            }},
      Entry{{"head_placement", "decoder_output | latent"},
            [](const RunConfig& c) -> std::string {
              return c.model.head_placement == HeadPlacement::DecoderOutput ? "decoder_output" : "latent";
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "decoder_output") c.model.head_placement = HeadPlacement::DecoderOutput;
              else if (v == "latent") c.model.head_placement = HeadPlacement::Latent;
              else bad_value("head_placement", v, "decoder_output or latent");
            }},
      HD_BOOL("use_homogenizer", model.use_homogenizer, "false trains the detector on raw input"),
      HD_NUM("extractor_channels", model.extractor_channels, int, "width of the fixed perceptual network"),
      HD_LIST("feature_layers", model.feature_layers, int, "perceptual blocks compared by the loss"),
      Entry{{"extractor_weights", "tensor container with perceptual weights; empty uses seeded weights"},
            [](const RunConfig& c) { return c.model.extractor_weights; },
            [](RunConfig& c, const std::string& v) { c.model.extractor_weights = v; }},
      // training
      HD_NUM("batch_size", train.batch_size, int, "patches per step, split evenly across training domains"),
      HD_NUM("learning_rate", train.learning_rate, double, "peak learning rate"),
      Entry{{"lr_schedule", "constant | one_cycle"},
            [](const RunConfig& c) -> std::string {
              return c.train.lr_schedule == LrSchedule::Constant ? "constant" : "one_cycle";
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "constant") c.train.lr_schedule = LrSchedule::Constant;
              else if (v == "one_cycle") c.train.lr_schedule = LrSchedule::OneCycle;
              else bad_value("lr_schedule", v, "constant or one_cycle");
            }},
      HD_NUM("max_steps", train.max_steps, long, "optimizer steps"),
      Entry{{"seed", "seeds initialisation, batch order and the split"},
            [](const RunConfig& c) { return fmt(c.train.seed); },
            [](RunConfig& c, const std::string& v) {
              c.train.seed = parse_number<std::uint64_t>("seed", v);
              c.model.init_seed = c.train.seed;
            }},
      HD_NUM("init_seed", model.init_seed, std::uint64_t, "parameter and perceptual-network seed; seed also sets it"),
      HD_NUM("lambda1", train.weights.lambda1, double, "perceptual loss weight"),
      HD_NUM("lambda2", train.weights.lambda2, double, "domain cross-entropy weight"),
      HD_NUM("focal_alpha", train.focal.alpha, double, "focal loss positive weight"),
      HD_NUM("focal_gamma", train.focal.gamma, double, "focal loss focusing exponent"),
      HD_NUM("smooth_l1_beta", train.smooth_l1_beta, double, "box loss transition point"),
      HD_NUM("pos_threshold", train.pos_threshold, double, "anchor IoU for a positive"),
      HD_NUM("neg_threshold", train.neg_threshold, double, "anchor IoU below which an anchor is negative"),
      HD_NUM("grl_strength", train.grl_strength, double, "gradient reversal strength"),
      Entry{{"grl_schedule", "constant | ramp"},
            [](const RunConfig& c) -> std::string {
              return c.train.grl_schedule == GrlSchedule::Constant ? "constant" : "ramp";
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "constant") c.train.grl_schedule = GrlSchedule::Constant;
              else if (v == "ramp") c.train.grl_schedule = GrlSchedule::Ramp;
              else bad_value("grl_schedule", v, "constant or ramp");
            }},
      HD_BOOL("include_unlabeled", train.include_unlabeled, "admit unlabeled_source patches"),
      HD_NUM("eval_interval", train.eval_interval, long, "validation every N steps; 0 disables"),
      HD_NUM("checkpoint_interval", train.checkpoint_interval, long, "checkpoint every N steps; 0: first and last"),
      HD_NUM("adam_beta1", train.adam_beta1, double, "first-moment decay"),
      HD_NUM("adam_beta2", train.adam_beta2, double, "second-moment decay"),
      HD_NUM("adam_eps", train.adam_eps, double, "denominator offset"),
      HD_NUM("divergence_threshold", train.divergence_threshold, double, "abort when the loss exceeds this"),
      HD_NUM("split_train", train.split.train, double, "fraction of each source domain used for training"),
      HD_NUM("split_val", train.split.val, double, "fraction held out for validation"),
      HD_NUM("split_test", train.split.test, double, "fraction held out for testing"),
      // evaluation
      HD_NUM("nms_iou", nms.iou_threshold, double, "suppression overlap"),
      HD_NUM("score_floor", nms.score_floor, double, "minimum detection score"),
      HD_NUM("max_detections", nms.max_detections, int, "detections kept per image"),
      HD_NUM("eval_iou", eval_iou, double, "IoU for a true positive"),
  };
  return table;
}

#undef HD_NUM
#undef HD_BOOL
#undef HD_LIST

const Entry& find(const std::string& key) {
  static const auto index = [] {
    std::unordered_map<std::string, std::size_t> m;
    for (std::size_t i = 0; i < entries().size(); ++i) m[entries()[i].key.name] = i;
    return m;
  }();
  auto it = index.find(key);
  if (it == index.end()) {
    if (key.find_first_of(".[") != std::string::npos)
      fail(ErrorKind::Schema, "nested configuration is not supported: " + key);
    fail(ErrorKind::Schema, "unknown config key: " + key);
  }
  return entries()[it->second];
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : entries()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

std::string config_get(const RunConfig& cfg, const std::string& key) { return find(key).get(cfg); }

void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
  find(key).set(cfg, value);
}

std::string config_to_text(const RunConfig& cfg, bool with_docs) {
  std::string out;
  for (const auto& e : entries()) {
    if (with_docs) out += "# " + e.key.doc + "\n";
    out += e.key.name + " = " + e.get(cfg) + "\n";
  }
  return out;
}

RunConfig config_from_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' || line.front() == '{')
      fail(ErrorKind::Schema, where + ": nested configuration is not supported");
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Schema, where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      config_set(cfg, key, value);
    } catch (const Error& e) {
      fail(e.kind(), where + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingFile, "config not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = config_from_text(ss.str(), path);
  cfg.validate();
  return cfg;
}

}  // namespace homdet
