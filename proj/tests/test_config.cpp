// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "homdet/config.hpp"

using namespace homdet;
using fixture::kind;
using fixture::thrown_kind;

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.train.weights.lambda1 == 10.0);
  CHECK(c.train.weights.lambda2 == 25.0);
  CHECK(c.train.batch_size == 12);
  CHECK(c.train.learning_rate == 1e-4);
  CHECK(c.train.max_steps == 2000);
  CHECK(c.nms.iou_threshold == 0.5);
  CHECK(c.nms.score_floor == 0.05);
  CHECK(c.nms.max_detections == 100);
  CHECK(c.model.anchor_cfg.strides == std::vector<int>{8, 16});
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("text round trip covers every key") {
  RunConfig c;
  config_set(c, "learning_rate", "0.000123456789");
  config_set(c, "anchor_scales", "2.5, 3.5");
  config_set(c, "grl_mode", "identity");
  config_set(c, "head_placement", "latent");
  config_set(c, "lr_schedule", "one_cycle");
  config_set(c, "seed", "77");
  CHECK(c.model.init_seed == 77);
  const std::string text = config_to_text(c);
  const RunConfig back = config_from_text(text);
  CHECK(config_to_text(back) == text);
  for (const auto& k : config_keys()) CHECK(config_get(back, k.name) == config_get(c, k.name));
  CHECK(back.train.learning_rate == 0.000123456789);
  CHECK(back.model.anchor_cfg.scales == std::vector<double>{2.5, 3.5});
  CHECK(back.model.grl_mode == GrlMode::Identity);
  // Documented text parses to the same configuration.
  CHECK(config_to_text(config_from_text(config_to_text(c, true))) == text);
}

TEST_CASE("comments and blank lines") {
  const RunConfig c = config_from_text("# header\n\nbatch_size = 6   # trailing\n  max_steps=10\n");
  CHECK(c.train.batch_size == 6);
  CHECK(c.train.max_steps == 10);
}

TEST_CASE("bad keys and values") {
  CHECK(thrown_kind([] { config_from_text("batchsize = 3\n"); }) == kind(ErrorKind::Schema));
  CHECK(thrown_kind([] { config_from_text("[train]\nbatch_size = 3\n"); }) == kind(ErrorKind::Schema));
  CHECK(thrown_kind([] { config_from_text("train.batch_size = 3\n"); }) == kind(ErrorKind::Schema));
  CHECK(fixture::thrown_message([] { config_from_text("train.batch_size = 3\n"); }).find("nested") !=
        std::string::npos);
  CHECK(thrown_kind([] { config_from_text("batch_size = three\n"); }) == kind(ErrorKind::Config));
  CHECK(thrown_kind([] { config_from_text("learning_rate = 1e-4x\n"); }) == kind(ErrorKind::Config));
  CHECK(thrown_kind([] { config_from_text("learning_rate = nan\n"); }) == kind(ErrorKind::Config));
  CHECK(thrown_kind([] { config_from_text("grl_mode = sideways\n"); }) == kind(ErrorKind::Config));
  CHECK(thrown_kind([] { config_from_text("batch_size\n"); }) == kind(ErrorKind::Schema));
  CHECK(thrown_kind([] { load_config("/nonexistent/run.cfg"); }) == kind(ErrorKind::MissingFile));
}

TEST_CASE("validation") {
  fixture::TempDir dir("config");
  fixture::write_file(dir.str("a.cfg"), "pos_threshold = 0.3\nneg_threshold = 0.4\n");
  CHECK(thrown_kind([&] { load_config(dir.str("a.cfg")); }) == kind(ErrorKind::Config));
  fixture::write_file(dir.str("b.cfg"), "anchor_strides = 8,32\n");
  CHECK(thrown_kind([&] { load_config(dir.str("b.cfg")); }) == kind(ErrorKind::Config));
  fixture::write_file(dir.str("c.cfg"), "split_train = 0.9\n");
  CHECK(thrown_kind([&] { load_config(dir.str("c.cfg")); }) == kind(ErrorKind::Config));
  fixture::write_file(dir.str("d.cfg"), "lambda1 = -1\n");
  CHECK(thrown_kind([&] { load_config(dir.str("d.cfg")); }) == kind(ErrorKind::Config));
  fixture::write_file(dir.str("e.cfg"), "lambda1 = 0\nbatch_size = 6\n");
  CHECK(load_config(dir.str("e.cfg")).train.weights.lambda1 == 0.0);
}

TEST_CASE("learning rate schedule") {
  TrainConfig t;
  t.max_steps = 101;
  CHECK(t.lr_at(0) == t.learning_rate);
  t.lr_schedule = LrSchedule::OneCycle;
  CHECK(t.lr_at(0) == doctest::Approx(t.learning_rate / 25));
  CHECK(t.lr_at(25) == doctest::Approx(t.learning_rate));
  CHECK(t.lr_at(100) == doctest::Approx(t.learning_rate / 25 / 1e5));
  for (long s = 1; s <= 25; ++s) CHECK(t.lr_at(s) >= t.lr_at(s - 1));
  for (long s = 26; s <= 100; ++s) CHECK(t.lr_at(s) <= t.lr_at(s - 1));
}

TEST_CASE("reversal strength schedule") {
  TrainConfig t;
  t.max_steps = 100;
  t.grl_strength = 2.0;
  CHECK(t.grl_at(50) == 2.0);
  t.grl_schedule = GrlSchedule::Ramp;
  CHECK(t.grl_at(0) == 0.0);
  CHECK(t.grl_at(50) == doctest::Approx(2.0 * (2.0 / (1.0 + std::exp(-5.0)) - 1.0)));
  for (long s = 1; s <= 100; ++s) CHECK(t.grl_at(s) > t.grl_at(s - 1));
  CHECK(t.grl_at(100) < 2.0);
}
