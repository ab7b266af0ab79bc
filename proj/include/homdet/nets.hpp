// SPDX-License-Identifier: Apache-2.0
//
// The trainable model: a U-Net homogenizer, a domain classifier attached
// through gradient reversal, and an anchor-based detector that reads the
// homogenized image.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "homdet/autograd.hpp"
#include "homdet/boxgeom.hpp"
#include "homdet/losses.hpp"

namespace homdet {

/// Where the domain classifier reads from.
enum class HeadPlacement { DecoderOutput, Latent };
/// Coupling between the homogenizer and the domain classifier.
enum class GrlMode { Reverse, Identity };

struct ModelConfig {
  int unet_depth = 4;
  int unet_base_channels = 16;
  int num_domains = 2;
  int num_classes = kNumClasses;
  AnchorConfig anchor_cfg;
  int detector_channels = 32;
  int detector_head_convs = 4;
  int domain_head_channels = 32;
  double grl_strength = 1.0;
  GrlMode grl_mode = GrlMode::Reverse;
  HeadPlacement head_placement = HeadPlacement::DecoderOutput;
  bool use_homogenizer = true;  // false: detector reads raw input (baseline)
  int extractor_channels = 16;
  std::vector<int> feature_layers{0, 1, 2};
  std::string extractor_weights;  // empty: seeded fixed weights
  std::uint64_t init_seed = 0;

  void validate() const;
  /// Smallest multiple every input side must be divisible by.
  int size_multiple() const;
};

struct Parameter {
  std::string name;
  std::string group;  // encoder | decoder | domain_head | detector
  ad::Var var;
};

struct DetectorOutput {
  ad::Var class_logits;  // [N, A, num_classes]
  ad::Var box_offsets;   // [N, A, 4]
};

struct ForwardBundle {
  ad::Var homogenized;    // [N, 3, H, W]
  ad::Var domain_logits;  // [N, num_domains]; null without a homogenizer
  DetectorOutput detector_out;
};

/// One training batch. Images are [N, 3, H, W] in [0, 1].
struct Batch {
  Tensor images;
  std::vector<int> domains;
  std::vector<std::vector<Annotation>> annotations;
  std::vector<bool> labeled;  // false: unlabeled-source sample
};

struct ObjectiveParams {
  LossWeights weights;
  FocalParams focal;
  double smooth_l1_beta = 1.0;
  double pos_threshold = 0.5;
  double neg_threshold = 0.4;
  double grl_strength = 1.0;  // value at the current step
};

struct TrainForward {
  LossBreakdown losses;
  ad::Var total;
  ForwardBundle bundle;
  double domain_accuracy = 0;  // batch accuracy of the domain head
};

class Model {
 public:
  explicit Model(ModelConfig cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  const PerceptualExtractor& extractor() const { return extractor_; }
  void zero_grad();

  /// Same spatial shape as `x`, values in (0, 1). `latent` receives the
  /// bottleneck activation when non-null.
  ad::Var homogenize(const ad::Var& x, ad::Var* latent = nullptr) const;
  /// Domain logits for a homogenized image (or a bottleneck activation in
  /// latent placement), with the configured coupling applied first.
  ad::Var classify_domain(const ad::Var& features, double strength) const;
  DetectorOutput detect(const ad::Var& h) const;

  /// Everything the losses need from one forward pass.
  ForwardBundle forward(const Tensor& images, double grl_strength) const;
  TrainForward forward_train(const Batch& batch, const ObjectiveParams& params) const;

  /// Decoded, score-filtered, per-class suppressed detections for item `n`
  /// of a detector output. Boxes are clipped to the image.
  std::vector<Detection> detections(const DetectorOutput& out, int n, int height, int width,
                                    const NmsParams& nms) const;

  std::vector<BBox> anchors(int height, int width) const;
  void check_input(const Tensor& images) const;

 private:
  struct Conv {
    ad::Var w, b;
  };
  Conv add_conv(const std::string& name, const std::string& group, int in, int out, int k,
                double bias_init = 0.0, double weight_scale = 1.0);
  ad::Var conv(const Conv& c, const ad::Var& x, int stride = 1) const;
  ad::Var conv_act(const Conv& c, const ad::Var& x, int stride = 1) const;

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  PerceptualExtractor extractor_;

  // homogenizer
  std::vector<std::pair<Conv, Conv>> enc_blocks_, dec_blocks_;
  std::pair<Conv, Conv> bottleneck_;
  Conv out_conv_;
  // domain head
  std::vector<Conv> dom_convs_;
  ad::Var dom_fc_w_, dom_fc_b_;
  // detector
  Conv stem_;
  int stem_stride_ = 2, stem_pools_ = 0;
  std::pair<Conv, Conv> stage1_, stage2_res_, stage3_res_;
  Conv stage2_down_, stage3_down_, lateral_lo_, lateral_hi_;
  std::vector<Conv> cls_tower_, box_tower_;
  Conv cls_out_, box_out_;
};

}  // namespace homdet
