// SPDX-License-Identifier: Apache-2.0
// homdet: synthesize data, train, evaluate, infer and plot PR curves.
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "homdet/homdet.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitInternal = 1;

int report(homdet_status s) {
  if (s == HOMDET_OK) return kExitOk;
  std::cerr << "homdet: error (" << homdet_status_name(s) << "): " << homdet_last_error() << "\n";
  if (s == HOMDET_E_DIVERGENCE) return kExitDivergence;
  if (s == HOMDET_E_INTERNAL) return kExitInternal;
  return kExitUsage;
}

void to_stderr(const char* message, void*) { std::cerr << "homdet: warning: " << message << "\n"; }

std::string config_text(const homdet_config* cfg, bool docs) {
  size_t needed = 0;
  homdet_config_to_text(cfg, docs, nullptr, 0, &needed);
  std::string s(needed, '\0');
  homdet_config_to_text(cfg, docs, s.data(), s.size(), &needed);
  s.resize(needed - 1);
  return s;
}

struct ConfigHandle {
  homdet_config* p = nullptr;
  ~ConfigHandle() { homdet_config_free(p); }
};
struct DatasetHandle {
  homdet_dataset* p = nullptr;
  ~DatasetHandle() { homdet_dataset_free(p); }
};
struct ModelHandle {
  homdet_model* p = nullptr;
  ~ModelHandle() { homdet_model_free(p); }
};

}  // namespace

int main(int argc, char** argv) {
  homdet_set_warning_handler(to_stderr, nullptr);

  CLI::App app{"Domain-homogenized detection of mitotic figures and hard negatives"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", homdet_version());

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic multi-domain dataset");
  std::string synth_out = "synth_data";
  std::uint64_t synth_seed = 0;
  int synth_domains = 3, synth_images = 50, synth_size = 64;
  std::string synth_roles;
  synth->add_option("--out", synth_out, "Output directory (env HOMDET_OUT)")->envname("HOMDET_OUT");
  synth->add_option("--seed", synth_seed, "Random seed (env HOMDET_SEED)")->envname("HOMDET_SEED");
  synth->add_option("--domains", synth_domains, "Number of domains")->check(CLI::PositiveNumber);
  synth->add_option("--images", synth_images, "Images per domain")->check(CLI::NonNegativeNumber);
  synth->add_option("--size", synth_size, "Patch side in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--roles", synth_roles,
                    "Comma-separated role per domain (labeled_source, unlabeled_source, labeled_target); "
                    "(default: all labeled_source)");

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  std::string train_config, train_data, train_out = "run", train_resume;
  std::vector<std::string> train_set;
  std::uint64_t train_seed = 0;
  train->add_option("--config", train_config, "Key-value config file (default: none, built-in defaults)");
  train->add_option("--data", train_data, "Dataset manifest")->required();
  train->add_option("--out", train_out, "Output directory (env HOMDET_OUT)")->envname("HOMDET_OUT");
  train->add_option("--resume", train_resume, "Checkpoint to continue from (default: none)");
  auto* seed_opt = train->add_option("--seed", train_seed, "Override the config seed when given (env HOMDET_SEED)")
                       ->envname("HOMDET_SEED");
  train->add_option("--set", train_set, "Override a config key, as key=value (repeatable; default: none)");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Compute per-class AP, mAP and PR curves");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out = "metrics.csv", eval_pr = "pr.csv",
                                    eval_config;
  bool eval_oracle = false;
  evaluate->add_option("--ckpt", eval_ckpt, "Checkpoint, not needed with --oracle (default: none)");
  evaluate->add_option("--data", eval_data, "Dataset manifest")->required();
  evaluate->add_option("--split", eval_split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--out", eval_out, "Metrics CSV");
  evaluate->add_option("--pr", eval_pr, "PR curve CSV");
  evaluate->add_flag("--oracle", eval_oracle, "Replay ground truth as detections");
  evaluate->add_option("--config", eval_config, "Config for --oracle splitting (default: none, built-in defaults)");

  // infer
  auto* infer = app.add_subcommand("infer", "Detect on one image");
  std::string infer_ckpt, infer_image, infer_out = "overlay.png", infer_json = "detections.json", infer_hom;
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint")->required();
  infer->add_option("--image", infer_image, "Input PNG")->required();
  infer->add_option("--out", infer_out, "Overlay PNG");
  infer->add_option("--json", infer_json, "Detections JSON");
  infer->add_option("--homogenized", infer_hom, "Also write the homogenized image here (default: none)");

  // plot-pr
  auto* plot = app.add_subcommand("plot-pr", "Render a PR CSV as SVG");
  std::string plot_in, plot_out = "pr.svg";
  plot->add_option("pr_csv", plot_in, "PR curve CSV")->required();
  plot->add_option("--out", plot_out, "Output SVG");

  // config
  auto* config = app.add_subcommand("config", "Print the default configuration with documentation");
  std::string config_out;
  config->add_option("--out", config_out, "Write to this file instead of stdout (default: none)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (synth->parsed()) {
    std::uint64_t checksum = 0;
    const int rc = report(homdet_synth(synth_out.c_str(), synth_seed, synth_domains, synth_images, synth_size,
                                       synth_roles.c_str(), &checksum));
    if (rc == kExitOk) {
      std::printf("manifest: %s/manifest.json\nimages: %d\nchecksum: %016llx\n", synth_out.c_str(),
                  synth_domains * synth_images, static_cast<unsigned long long>(checksum));
    }
    return rc;
  }

  if (train->parsed()) {
    ConfigHandle cfg;
    int rc = report(train_config.empty() ? homdet_config_default(&cfg.p)
                                         : homdet_config_load(train_config.c_str(), &cfg.p));
    if (rc) return rc;
    if (seed_opt->count() > 0 || std::getenv("HOMDET_SEED")) {
      rc = report(homdet_config_set(cfg.p, "seed", std::to_string(train_seed).c_str()));
      if (rc) return rc;
    }
    for (const auto& kv : train_set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::cerr << "homdet: error: --set expects key=value, got \"" << kv << "\"\n";
        return kExitUsage;
      }
      rc = report(homdet_config_set(cfg.p, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
      if (rc) return rc;
    }
    if ((rc = report(homdet_config_validate(cfg.p)))) return rc;
    DatasetHandle ds;
    if ((rc = report(homdet_dataset_load(train_data.c_str(), &ds.p)))) return rc;
    long step = 0;
    auto progress = [](long s, double total, double acc, void*) {
      if ((s + 1) % 50 == 0) std::fprintf(stderr, "step %ld  total %.5f  domain_acc %.3f\n", s + 1, total, acc);
    };
    rc = report(homdet_train(cfg.p, ds.p, train_out.c_str(), train_resume.empty() ? nullptr : train_resume.c_str(),
                             progress, nullptr, &step));
    if (rc == kExitDivergence) std::cerr << "homdet: diverged at step " << homdet_last_divergence_step() << "\n";
    if (rc == kExitOk) std::printf("trained to step %ld; outputs in %s\n", step, train_out.c_str());
    return rc;
  }

  if (evaluate->parsed()) {
    DatasetHandle ds;
    int rc = report(homdet_dataset_load(eval_data.c_str(), &ds.p));
    if (rc) return rc;
    double map = 0;
    if (eval_oracle) {
      ConfigHandle cfg;
      if (!eval_config.empty() && (rc = report(homdet_config_load(eval_config.c_str(), &cfg.p)))) return rc;
      rc = report(homdet_evaluate_oracle(cfg.p, ds.p, eval_split.c_str(), eval_out.c_str(), eval_pr.c_str(), &map));
    } else {
      if (eval_ckpt.empty()) {
        std::cerr << "homdet: error: evaluate needs --ckpt unless --oracle is given\n";
        return kExitUsage;
      }
      ModelHandle model;
      if ((rc = report(homdet_model_load(eval_ckpt.c_str(), &model.p)))) return rc;
      size_t needed = 0;
      std::string breakdown(4096, '\0');
      rc = report(homdet_evaluate(model.p, ds.p, eval_split.c_str(), eval_out.c_str(), eval_pr.c_str(), &map,
                                  breakdown.data(), breakdown.size(), &needed));
      if (rc == kExitOk) std::fputs(breakdown.c_str(), stdout);
    }
    if (rc == kExitOk) std::printf("mAP %.6f\nmetrics: %s\npr: %s\n", map, eval_out.c_str(), eval_pr.c_str());
    return rc;
  }

  if (infer->parsed()) {
    ModelHandle model;
    int rc = report(homdet_model_load(infer_ckpt.c_str(), &model.p));
    if (rc) return rc;
    size_t n = 0;
    rc = report(homdet_infer(model.p, infer_image.c_str(), infer_out.c_str(), infer_json.c_str(),
                             infer_hom.empty() ? nullptr : infer_hom.c_str(), &n));
    if (rc == kExitOk) std::printf("%zu detections\n", n);
    return rc;
  }

  if (plot->parsed()) {
    const int rc = report(homdet_plot_pr(plot_in.c_str(), plot_out.c_str()));
    if (rc == kExitOk) std::printf("plot: %s\n", plot_out.c_str());
    return rc;
  }

  if (config->parsed()) {
    ConfigHandle cfg;
    int rc = report(homdet_config_default(&cfg.p));
    if (rc) return rc;
    const std::string text = config_text(cfg.p, true);
    if (config_out.empty()) {
      std::fputs(text.c_str(), stdout);
      return kExitOk;
    }
    std::FILE* f = std::fopen(config_out.c_str(), "w");
    if (!f) {
      std::cerr << "homdet: error: cannot write " << config_out << "\n";
      return kExitUsage;
    }
    std::fputs(text.c_str(), f);
    std::fclose(f);
    return kExitOk;
  }
  return kExitUsage;
}
