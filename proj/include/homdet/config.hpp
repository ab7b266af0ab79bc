// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: model, training and evaluation settings, plus the flat
// `key = value` text form used by config files and checkpoint echoes.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "homdet/boxgeom.hpp"
#include "homdet/data.hpp"
#include "homdet/losses.hpp"
#include "homdet/nets.hpp"

namespace homdet {

enum class LrSchedule { Constant, OneCycle };
enum class GrlSchedule { Constant, Ramp };

struct TrainConfig {
  int batch_size = 12;
  double learning_rate = 1e-4;
  long max_steps = 2000;
  std::uint64_t seed = 0;
  LossWeights weights;
  FocalParams focal;
  double smooth_l1_beta = 1.0;
  double pos_threshold = 0.5;
  double neg_threshold = 0.4;
  long eval_interval = 0;        // 0: no periodic validation
  long checkpoint_interval = 0;  // 0: first and last step only
  bool include_unlabeled = false;
  double grl_strength = 1.0;
  GrlSchedule grl_schedule = GrlSchedule::Constant;
  LrSchedule lr_schedule = LrSchedule::Constant;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double divergence_threshold = 1e4;
  SplitFractions split;

  void validate() const;
  /// Learning rate used for the update at `step`.
  double lr_at(long step) const;
  /// Reversal strength used at `step`.
  double grl_at(long step) const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  NmsParams nms;
  double eval_iou = 0.5;

  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string doc;
};

/// Every recognised key, in canonical order, with its documentation.
const std::vector<ConfigKey>& config_keys();

/// Current value of `key` in canonical text form.
std::string config_get(const RunConfig& cfg, const std::string& key);
/// Throws ErrorKind::Schema for unknown keys and ErrorKind::Config for bad
/// values. `seed` sets both the training and the initialisation seed.
void config_set(RunConfig& cfg, const std::string& key, const std::string& value);

/// Canonical text: every key in order, one per line.
std::string config_to_text(const RunConfig& cfg, bool with_docs = false);
/// Starts from the defaults and applies each line of `text`.
RunConfig config_from_text(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::string& path);

}  // namespace homdet
