// SPDX-License-Identifier: Apache-2.0
#include "homdet/homdet.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <new>
#include <sstream>
#include <string>

#include "homdet/config.hpp"
#include "homdet/data.hpp"
#include "homdet/engine.hpp"
#include "homdet/error.hpp"
#include "homdet/report.hpp"

struct homdet_config {
  homdet::RunConfig cfg;
};
struct homdet_dataset {
  homdet::Dataset ds;
};
struct homdet_model {
  homdet::Checkpoint ck;
};

namespace {

thread_local std::string g_error;
thread_local long g_divergence_step = -1;

homdet_status status_of(homdet::ErrorKind k) {
  using homdet::ErrorKind;
  switch (k) {
    case ErrorKind::Contract:
      return HOMDET_E_CONTRACT;
    case ErrorKind::Config:
      return HOMDET_E_CONFIG;
    case ErrorKind::Schema:
      return HOMDET_E_SCHEMA;
    case ErrorKind::MissingFile:
      return HOMDET_E_MISSING_FILE;
    case ErrorKind::Io:
      return HOMDET_E_IO;
    case ErrorKind::Version:
      return HOMDET_E_VERSION;
    case ErrorKind::Truncated:
      return HOMDET_E_TRUNCATED;
    case ErrorKind::Divergence:
      return HOMDET_E_DIVERGENCE;
  }
  return HOMDET_E_INTERNAL;
}

template <class Fn>
homdet_status guarded(Fn&& fn) {
  g_error.clear();
  try {
    fn();
    return HOMDET_OK;
  } catch (const homdet::DivergenceError& e) {
    g_error = e.what();
    g_divergence_step = e.step();
    return HOMDET_E_DIVERGENCE;
  } catch (const homdet::Error& e) {
    g_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    return HOMDET_E_INTERNAL;
  } catch (const std::exception& e) {
    g_error = e.what();
    return HOMDET_E_INTERNAL;
  }
}

void require_arg(const void* p, const char* name) {
  if (!p) homdet::fail(homdet::ErrorKind::Contract, std::string(name) + " must not be NULL");
}

void copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > 0) {
    const size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
}

homdet::Split parse_split(const char* split) {
  require_arg(split, "split");
  const auto s = homdet::split_from_name(split);
  if (!s) homdet::fail(homdet::ErrorKind::Config, std::string("unknown split \"") + split + "\"");
  return *s;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) homdet::fail(homdet::ErrorKind::Io, "cannot write " + path);
  out << text;
  if (!out) homdet::fail(homdet::ErrorKind::Io, "write failed: " + path);
}

void write_reports(const homdet::EvalReport& rep, const char* metrics_csv, const char* pr_csv, double* map_out) {
  if (metrics_csv) homdet::write_metrics_csv(metrics_csv, rep);
  if (pr_csv) homdet::write_pr_csv(pr_csv, rep);
  if (map_out) *map_out = rep.map;
}

}  // namespace

extern "C" {

const char* homdet_version(void) { return "0.1.0"; }
const char* homdet_last_error(void) { return g_error.c_str(); }
long homdet_last_divergence_step(void) { return g_divergence_step; }

const char* homdet_status_name(homdet_status status) {
  switch (status) {
    case HOMDET_OK:
      return "ok";
    case HOMDET_E_CONTRACT:
      return "contract";
    case HOMDET_E_CONFIG:
      return "config";
    case HOMDET_E_SCHEMA:
      return "schema";
    case HOMDET_E_MISSING_FILE:
      return "missing_file";
    case HOMDET_E_IO:
      return "io";
    case HOMDET_E_VERSION:
      return "version";
    case HOMDET_E_TRUNCATED:
      return "truncated";
    case HOMDET_E_DIVERGENCE:
      return "divergence";
    case HOMDET_E_INTERNAL:
      return "internal";
  }
  return "unknown";
}

void homdet_set_warning_handler(homdet_warning_fn fn, void* user) { homdet::set_warning_handler(fn, user); }

homdet_status homdet_config_default(homdet_config** out) {
  return guarded([&] {
    require_arg(out, "out");
    *out = new homdet_config{};
  });
}

homdet_status homdet_config_load(const char* path, homdet_config** out) {
  return guarded([&] {
    require_arg(path, "path");
    require_arg(out, "out");
    *out = new homdet_config{homdet::load_config(path)};
  });
}

homdet_status homdet_config_set(homdet_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require_arg(cfg, "cfg");
    require_arg(key, "key");
    require_arg(value, "value");
    homdet::config_set(cfg->cfg, key, value);
  });
}

homdet_status homdet_config_get(const homdet_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require_arg(cfg, "cfg");
    require_arg(key, "key");
    copy_out(homdet::config_get(cfg->cfg, key), buf, cap, needed);
  });
}

homdet_status homdet_config_to_text(const homdet_config* cfg, int with_docs, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require_arg(cfg, "cfg");
    copy_out(homdet::config_to_text(cfg->cfg, with_docs != 0), buf, cap, needed);
  });
}

homdet_status homdet_config_validate(const homdet_config* cfg) {
  return guarded([&] {
    require_arg(cfg, "cfg");
    cfg->cfg.validate();
  });
}

void homdet_config_free(homdet_config* cfg) { delete cfg; }

homdet_status homdet_synth(const char* out_dir, uint64_t seed, int domains, int images_per_domain, int patch_size,
                           const char* roles, uint64_t* checksum) {
  return guarded([&] {
    require_arg(out_dir, "out_dir");
    homdet::SynthSpec spec;
    spec.num_domains = domains;
    spec.images_per_domain = images_per_domain;
    spec.patch_size = patch_size;
    spec.seed = seed;
    if (roles && *roles) {
      std::stringstream ss(roles);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto r = homdet::role_from_name(item);
        if (!r) homdet::fail(homdet::ErrorKind::Config, "unknown domain role \"" + item + "\"");
        spec.roles.push_back(*r);
      }
    }
    const homdet::SynthResult res = homdet::synth_dataset(spec, out_dir);
    if (domains == 1) homdet::warn("single-domain dataset: the domain loss will be degenerate");
    if (checksum) *checksum = res.checksum;
  });
}

homdet_status homdet_dataset_load(const char* manifest_path, homdet_dataset** out) {
  return guarded([&] {
    require_arg(manifest_path, "manifest_path");
    require_arg(out, "out");
    *out = new homdet_dataset{homdet::load_dataset(manifest_path)};
  });
}

size_t homdet_dataset_size(const homdet_dataset* ds) { return ds ? ds->ds.records.size() : 0; }
size_t homdet_dataset_domains(const homdet_dataset* ds) { return ds ? ds->ds.domains.size() : 0; }
void homdet_dataset_free(homdet_dataset* ds) { delete ds; }

homdet_status homdet_train(const homdet_config* cfg, const homdet_dataset* ds, const char* out_dir,
                           const char* resume_ckpt, homdet_progress_fn progress, void* user, long* final_step) {
  g_divergence_step = -1;
  return guarded([&] {
    require_arg(cfg, "cfg");
    require_arg(ds, "ds");
    require_arg(out_dir, "out_dir");
    cfg->cfg.validate();
    homdet::Dataset data = ds->ds;
    homdet::split_dataset(data, cfg->cfg.train.split, cfg->cfg.train.seed);
    homdet::TrainOptions opts;
    opts.out_dir = out_dir;
    if (resume_ckpt) opts.resume_from = resume_ckpt;
    if (progress)
      opts.on_step = [&](const homdet::LogRow& r) { progress(r.step, r.losses.total, r.domain_acc, user); };
    const homdet::TrainResult res = homdet::train(cfg->cfg, data, opts);
    if (final_step) *final_step = res.step;
  });
}

homdet_status homdet_model_load(const char* ckpt_path, homdet_model** out) {
  return guarded([&] {
    require_arg(ckpt_path, "ckpt_path");
    require_arg(out, "out");
    *out = new homdet_model{homdet::load_checkpoint(ckpt_path)};
  });
}

homdet_status homdet_model_config(const homdet_model* model, homdet_config** out) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(out, "out");
    *out = new homdet_config{model->ck.config};
  });
}

long homdet_model_step(const homdet_model* model) { return model ? model->ck.step : -1; }
void homdet_model_free(homdet_model* model) { delete model; }

homdet_status homdet_evaluate(const homdet_model* model, const homdet_dataset* ds, const char* split,
                              const char* metrics_csv, const char* pr_csv, double* map_out, char* breakdown,
                              size_t cap, size_t* needed) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(ds, "ds");
    const homdet::Split which = parse_split(split);
    const homdet::RunConfig& cfg = model->ck.config;
    homdet::Dataset data = ds->ds;
    homdet::split_dataset(data, cfg.train.split, cfg.train.seed);
    const auto records = homdet::records_in_split(data, which);
    if (records.empty()) homdet::fail(homdet::ErrorKind::Config, std::string("split \"") + split + "\" is empty");
    const homdet::EvalReport rep = homdet::evaluate(model->ck.model, records, cfg.nms, cfg.eval_iou);
    write_reports(rep, metrics_csv, pr_csv, map_out);
    std::ostringstream text;
    for (const auto& [domain, ap] : rep.per_domain_ap)
      text << "domain " << domain << " (" << data.domains.at(domain).name << "): ap_hard_negative=" << ap[0]
           << " ap_mitotic_figure=" << ap[1] << "\n";
    copy_out(text.str(), breakdown, cap, needed);
  });
}

homdet_status homdet_evaluate_oracle(const homdet_config* cfg, const homdet_dataset* ds, const char* split,
                                     const char* metrics_csv, const char* pr_csv, double* map_out) {
  return guarded([&] {
    require_arg(ds, "ds");
    const homdet::Split which = parse_split(split);
    const homdet::RunConfig run = cfg ? cfg->cfg : homdet::RunConfig{};
    homdet::Dataset data = ds->ds;
    homdet::split_dataset(data, run.train.split, run.train.seed);
    const auto records = homdet::records_in_split(data, which);
    if (records.empty()) homdet::fail(homdet::ErrorKind::Config, std::string("split \"") + split + "\" is empty");
    write_reports(homdet::evaluate_oracle(records, run.eval_iou), metrics_csv, pr_csv, map_out);
  });
}

homdet_status homdet_infer(const homdet_model* model, const char* image_png, const char* overlay_png,
                           const char* detections_json, const char* homogenized_png, size_t* num_detections) {
  return guarded([&] {
    require_arg(model, "model");
    require_arg(image_png, "image_png");
    const homdet::RgbImage image = homdet::read_png(image_png);
    const homdet::InferResult res = homdet::infer(model->ck.model, image, model->ck.config.nms);
    if (overlay_png) homdet::write_png(overlay_png, homdet::render_overlay(image, res.detections));
    if (detections_json)
      write_text(detections_json,
                 homdet::detections_json(std::filesystem::path(image_png).filename().string(), image.width,
                                         image.height, res.detections));
    if (homogenized_png) homdet::write_png(homogenized_png, homdet::from_tensor(res.homogenized));
    if (num_detections) *num_detections = res.detections.size();
  });
}

homdet_status homdet_plot_pr(const char* pr_csv, const char* svg_out) {
  return guarded([&] {
    require_arg(pr_csv, "pr_csv");
    require_arg(svg_out, "svg_out");
    write_text(svg_out, homdet::render_pr_svg(homdet::read_pr_csv(pr_csv)));
  });
}

}  // extern "C"
