// SPDX-License-Identifier: Apache-2.0
#include "homdet/nets.hpp"

#include <algorithm>
#include <cmath>

#include "homdet/error.hpp"
#include "homdet/rng.hpp"

namespace homdet {
namespace {

constexpr double kSlope = 0.1;
constexpr double kClassPrior = 0.01;
constexpr int kPreNmsTopK = 1000;

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void ModelConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::Config, m); };
  if (unet_depth < 1) bad("unet_depth must be >= 1");
  if (unet_base_channels < 1) bad("unet_base_channels must be >= 1");
  if (num_domains < 1) bad("num_domains must be >= 1");
  if (num_classes != kNumClasses) bad("num_classes must be 2 (hard_negative, mitotic_figure)");
  anchor_cfg.validate();
  if (anchor_cfg.strides.size() != 2 || anchor_cfg.strides[1] != 2 * anchor_cfg.strides[0] ||
      anchor_cfg.strides[0] < 2 || !is_pow2(anchor_cfg.strides[0]))
    bad("detector pyramid needs anchor_strides = [s, 2s] with s a power of two >= 2");
  if (detector_channels < 1 || detector_head_convs < 0) bad("detector sizes must be positive");
  if (domain_head_channels < 1) bad("domain_head_channels must be >= 1");
  if (!(grl_strength >= 0) || !std::isfinite(grl_strength)) bad("grl_strength must be >= 0");
  if (extractor_channels < 1) bad("extractor_channels must be >= 1");
  if (feature_layers.empty()) bad("feature_layers must not be empty");
}

int ModelConfig::size_multiple() const {
  int m = anchor_cfg.strides.back();
  if (use_homogenizer) m = std::max(m, 1 << unet_depth);
  return std::max(m, 8);  // perceptual extractor pools three times
}

Model::Conv Model::add_conv(const std::string& name, const std::string& group, int in, int out, int k,
                            double bias_init, double weight_scale) {
  Rng rng = Rng::derive(cfg_.init_seed, {params_.size(), 0x636f6e76ULL});
  Tensor w({out, in, k, k});
  const double sd = weight_scale * std::sqrt(2.0 / ((1.0 + kSlope * kSlope) * in * k * k));
  for (auto& v : w.values()) v = sd * rng.normal();
  Conv c{ad::leaf(std::move(w), true), ad::leaf(Tensor({out}, bias_init), true)};
  params_.push_back({name + ".w", group, c.w});
  params_.push_back({name + ".b", group, c.b});
  return c;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  extractor_ = cfg_.extractor_weights.empty()
                   ? PerceptualExtractor(cfg_.extractor_channels, cfg_.feature_layers,
                                         cfg_.init_seed ^ 0xe87ac7ULL)
                   : PerceptualExtractor::from_file(cfg_.extractor_weights, cfg_.feature_layers);

  if (cfg_.use_homogenizer) {
    const int c = cfg_.unet_base_channels;
    int in = 3;
    for (int l = 0; l < cfg_.unet_depth; ++l) {
      const int ch = c << l;
      const std::string n = "homogenizer.enc" + std::to_string(l);
      enc_blocks_.push_back({add_conv(n + ".conv0", "encoder", in, ch, 3), add_conv(n + ".conv1", "encoder", ch, ch, 3)});
      in = ch;
    }
    const int bott = c << cfg_.unet_depth;
    bottleneck_ = {add_conv("homogenizer.bottleneck.conv0", "encoder", in, bott, 3),
                   add_conv("homogenizer.bottleneck.conv1", "encoder", bott, bott, 3)};
    int below = bott;
    dec_blocks_.resize(cfg_.unet_depth);
    for (int l = cfg_.unet_depth - 1; l >= 0; --l) {
      const int ch = c << l;
      const std::string n = "homogenizer.dec" + std::to_string(l);
      dec_blocks_[l] = {add_conv(n + ".conv0", "decoder", below + ch, ch, 3), add_conv(n + ".conv1", "decoder", ch, ch, 3)};
      below = ch;
    }
    out_conv_ = add_conv("homogenizer.out", "decoder", c, 3, 1);

    const int head_in = cfg_.head_placement == HeadPlacement::DecoderOutput ? 3 : bott;
    const int hc = cfg_.domain_head_channels;
    for (int i = 0; i < 3; ++i)
      dom_convs_.push_back(add_conv("domain_head.conv" + std::to_string(i), "domain_head", i == 0 ? head_in : hc, hc, 3));
    Rng rng = Rng::derive(cfg_.init_seed, {params_.size(), 0x6663ULL});
    Tensor w({cfg_.num_domains, hc});
    for (auto& v : w.values()) v = std::sqrt(1.0 / hc) * rng.normal();
    dom_fc_w_ = ad::leaf(std::move(w), true);
    dom_fc_b_ = ad::leaf(Tensor({cfg_.num_domains}), true);
    params_.push_back({"domain_head.fc.w", "domain_head", dom_fc_w_});
    params_.push_back({"domain_head.fc.b", "domain_head", dom_fc_b_});
  }

  const int dc = cfg_.detector_channels;
  const int s = cfg_.anchor_cfg.strides[0];
  stem_ = add_conv("detector.stem", "detector", 3, dc, 3);
  stem_stride_ = s >= 4 ? 2 : 1;
  for (int st = s / 2; st > 2; st /= 2) ++stem_pools_;
  stage1_ = {add_conv("detector.stage1.conv0", "detector", dc, dc, 3), add_conv("detector.stage1.conv1", "detector", dc, dc, 3)};
  stage2_down_ = add_conv("detector.stage2.down", "detector", dc, 2 * dc, 3);
  stage2_res_ = {add_conv("detector.stage2.conv0", "detector", 2 * dc, 2 * dc, 3),
                 add_conv("detector.stage2.conv1", "detector", 2 * dc, 2 * dc, 3)};
  stage3_down_ = add_conv("detector.stage3.down", "detector", 2 * dc, 2 * dc, 3);
  stage3_res_ = {add_conv("detector.stage3.conv0", "detector", 2 * dc, 2 * dc, 3),
                 add_conv("detector.stage3.conv1", "detector", 2 * dc, 2 * dc, 3)};
  lateral_lo_ = add_conv("detector.fpn.lateral_lo", "detector", 2 * dc, dc, 1);
  lateral_hi_ = add_conv("detector.fpn.lateral_hi", "detector", 2 * dc, dc, 1);
  for (int i = 0; i < cfg_.detector_head_convs; ++i) {
    cls_tower_.push_back(add_conv("detector.cls_tower" + std::to_string(i), "detector", dc, dc, 3));
    box_tower_.push_back(add_conv("detector.box_tower" + std::to_string(i), "detector", dc, dc, 3));
  }
  const int a = cfg_.anchor_cfg.anchors_per_cell();
  cls_out_ = add_conv("detector.cls_out", "detector", dc, a * cfg_.num_classes, 3,
                      -std::log((1.0 - kClassPrior) / kClassPrior), 0.1);
  box_out_ = add_conv("detector.box_out", "detector", dc, a * 4, 3, 0.0, 0.1);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var->value.size();
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.var->zero_grad();
}

ad::Var Model::conv(const Conv& c, const ad::Var& x, int stride) const {
  const int k = c.w->value.dim(2);
  return ad::conv2d(x, c.w, c.b, stride, k / 2);
}

ad::Var Model::conv_act(const Conv& c, const ad::Var& x, int stride) const {
  return ad::leaky_relu(conv(c, x, stride), kSlope);
}

void Model::check_input(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3)
    fail(ErrorKind::Config, "model input must be [N,3,H,W], got " + images.shape_string());
  const int m = cfg_.size_multiple();
  if (images.dim(2) % m != 0 || images.dim(3) % m != 0)
    fail(ErrorKind::Config, "input size " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                                " must be divisible by " + std::to_string(m));
}

ad::Var Model::homogenize(const ad::Var& x, ad::Var* latent) const {
  require(cfg_.use_homogenizer, "homogenize: model was built without a homogenizer");
  check_input(x->value);
  std::vector<ad::Var> skips;
  ad::Var h = x;
  for (const auto& [c0, c1] : enc_blocks_) {
    h = conv_act(c1, conv_act(c0, h));
    skips.push_back(h);
    h = ad::avg_pool2(h);
  }
  h = conv_act(bottleneck_.second, conv_act(bottleneck_.first, h));
  if (latent) *latent = h;
  for (int l = cfg_.unet_depth - 1; l >= 0; --l) {
    h = ad::concat_channels(ad::upsample2(h), skips[l]);
    h = conv_act(dec_blocks_[l].second, conv_act(dec_blocks_[l].first, h));
  }
  return ad::sigmoid(conv(out_conv_, h));
}

ad::Var Model::classify_domain(const ad::Var& features, double strength) const {
  require(cfg_.use_homogenizer, "classify_domain: model was built without a domain head");
  ad::Var h = cfg_.grl_mode == GrlMode::Reverse ? ad::grad_reverse(features, strength) : features;
  for (const auto& c : dom_convs_) h = conv_act(c, h, 2);
  return ad::linear(ad::global_avg_pool(h), dom_fc_w_, dom_fc_b_);
}

DetectorOutput Model::detect(const ad::Var& h) const {
  check_input(h->value);
  auto residual = [this](const std::pair<Conv, Conv>& blk, const ad::Var& x) {
    return ad::leaky_relu(ad::add(x, conv(blk.second, conv_act(blk.first, x))), kSlope);
  };
  ad::Var x = conv_act(stem_, h, stem_stride_);
  for (int i = 0; i < stem_pools_; ++i) x = ad::avg_pool2(x);
  x = residual(stage1_, x);
  ad::Var c2 = residual(stage2_res_, conv_act(stage2_down_, x, 2));
  ad::Var c3 = residual(stage3_res_, conv_act(stage3_down_, c2, 2));
  ad::Var p_hi = conv(lateral_hi_, c3);
  ad::Var p_lo = ad::add(conv(lateral_lo_, c2), ad::upsample2(p_hi));

  std::vector<ad::Var> cls_maps, box_maps;
  for (const ad::Var& p : {p_lo, p_hi}) {
    ad::Var c = p, b = p;
    for (const auto& t : cls_tower_) c = conv_act(t, c);
    for (const auto& t : box_tower_) b = conv_act(t, b);
    cls_maps.push_back(conv(cls_out_, c));
    box_maps.push_back(conv(box_out_, b));
  }
  const int a = cfg_.anchor_cfg.anchors_per_cell();
  return {ad::gather_anchors(cls_maps, a, cfg_.num_classes), ad::gather_anchors(box_maps, a, 4)};
}

std::vector<BBox> Model::anchors(int height, int width) const {
  return generate_anchors(cfg_.anchor_cfg, height, width);
}

ForwardBundle Model::forward(const Tensor& images, double grl_strength) const {
  check_input(images);
  ForwardBundle out;
  ad::Var x = ad::constant(images);
  if (cfg_.use_homogenizer) {
    ad::Var latent;
    out.homogenized = homogenize(x, &latent);
    out.domain_logits = classify_domain(
        cfg_.head_placement == HeadPlacement::DecoderOutput ? out.homogenized : latent, grl_strength);
  } else {
    out.homogenized = x;
  }
  out.detector_out = detect(out.homogenized);
  return out;
}

TrainForward Model::forward_train(const Batch& batch, const ObjectiveParams& params) const {
  const int n = batch.images.rank() == 4 ? batch.images.dim(0) : 0;
  require(n > 0, "forward_train: empty batch");
  require(batch.domains.size() == static_cast<std::size_t>(n) &&
              batch.annotations.size() == static_cast<std::size_t>(n) &&
              batch.labeled.size() == static_cast<std::size_t>(n),
          "forward_train: batch field sizes disagree");
  for (int d : batch.domains)
    if (d < 0 || d >= cfg_.num_domains)
      fail(ErrorKind::Contract, "forward_train: domain id " + std::to_string(d) + " outside [0, " +
                                    std::to_string(cfg_.num_domains) + ")");
  params.weights.validate();
  params.focal.validate();

  TrainForward out;
  out.bundle = forward(batch.images, params.grl_strength);
  const int h = batch.images.dim(2), w = batch.images.dim(3);

  ad::Var l_percep = ad::constant(Tensor({1}));
  ad::Var l_ce = ad::constant(Tensor({1}));
  if (cfg_.use_homogenizer) {
    l_percep = ad::perceptual_loss(batch.images, out.bundle.homogenized, extractor_);
    l_ce = ad::domain_cross_entropy(out.bundle.domain_logits, batch.domains);
    const Tensor& logits = out.bundle.domain_logits->value;
    int correct = 0;
    for (int i = 0; i < n; ++i) {
      const double* row = logits.data() + i * cfg_.num_domains;
      correct += static_cast<int>(std::max_element(row, row + cfg_.num_domains) - row) == batch.domains[i];
    }
    out.domain_accuracy = static_cast<double>(correct) / n;
  }

  // Detector terms over labeled samples only.
  const std::vector<BBox> anchor_boxes = anchors(h, w);
  const std::size_t num_anchors = anchor_boxes.size();
  const int k = cfg_.num_classes;
  std::vector<std::size_t> cls_idx, box_idx;
  std::vector<int> cls_tgt;
  std::vector<double> box_tgt;
  for (int i = 0; i < n; ++i) {
    if (!batch.labeled[i]) continue;
    const auto& gts = batch.annotations[i];
    const AnchorAssignment assign =
        match_anchors(anchor_boxes, gts, params.pos_threshold, params.neg_threshold);
    for (std::size_t a = 0; a < num_anchors; ++a) {
      const AnchorMatch& m = assign[a];
      if (m.label == AnchorLabel::Ignore) continue;
      const std::size_t base = (static_cast<std::size_t>(i) * num_anchors + a);
      for (int c = 0; c < k; ++c) {
        cls_idx.push_back(base * k + c);
        cls_tgt.push_back(m.label == AnchorLabel::Positive && gts[m.gt].class_id == c ? 1 : 0);
      }
      if (m.label == AnchorLabel::Positive) {
        const BoxOffsets t = encode_box(anchor_boxes[a], gts[m.gt].box);
        for (int j = 0; j < 4; ++j) box_idx.push_back(base * 4 + j);
        box_tgt.insert(box_tgt.end(), {t.tx, t.ty, t.tw, t.th});
      }
    }
  }
  ad::Var probs = ad::sigmoid(out.bundle.detector_out.class_logits);
  ad::Var l_inst = ad::focal_loss(probs, std::move(cls_idx), std::move(cls_tgt), params.focal);
  ad::Var l_bb = ad::smooth_l1(out.bundle.detector_out.box_offsets, std::move(box_idx),
                               std::move(box_tgt), params.smooth_l1_beta);

  out.losses = total_loss(l_bb->value[0], l_inst->value[0], l_percep->value[0], l_ce->value[0], params.weights);
  out.total = ad::weighted_sum({l_bb, l_inst, l_percep, l_ce},
                               {1.0, 1.0, params.weights.lambda1, params.weights.lambda2});
  return out;
}

std::vector<Detection> Model::detections(const DetectorOutput& out, int n, int height, int width,
                                         const NmsParams& nms_params) const {
  const std::vector<BBox> anchor_boxes = anchors(height, width);
  const std::size_t num_anchors = anchor_boxes.size();
  const int k = cfg_.num_classes;
  const Tensor& logits = out.class_logits->value;
  const Tensor& offsets = out.box_offsets->value;
  require(logits.dim(1) == static_cast<int>(num_anchors), "detections: anchor count mismatch");

  struct Candidate {
    double score;
    std::size_t anchor;
    int cls;
  };
  std::vector<Candidate> cands;
  for (std::size_t a = 0; a < num_anchors; ++a)
    for (int c = 0; c < k; ++c) {
      const double s = 1.0 / (1.0 + std::exp(-logits[(n * num_anchors + a) * k + c]));
      if (s >= nms_params.score_floor) cands.push_back({s, a, c});
    }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) { return x.score > y.score; });
  if (cands.size() > static_cast<std::size_t>(kPreNmsTopK)) cands.resize(kPreNmsTopK);

  std::vector<Detection> dets;
  for (const auto& c : cands) {
    const double* o = offsets.data() + (n * num_anchors + c.anchor) * 4;
    BBox b = decode_box(anchor_boxes[c.anchor], {o[0], o[1], o[2], o[3]});
    b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(width));
    b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(width));
    b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(height));
    b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(height));
    if (!b.valid()) continue;
    dets.push_back({b, c.cls, c.score});
  }
  return postprocess(dets, nms_params);
}

}  // namespace homdet
