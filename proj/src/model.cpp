#include "dce/model.hpp"

#include <algorithm>
#include <cmath>

#include "dce/random.hpp"

namespace dce {

void validate(const ModelConfig& c) {
  require(c.backbone.channels.size() == 5, ErrorKind::kValue, "backbone needs exactly 5 stage channel counts");
  for (auto ch : c.backbone.channels) require(ch >= 1, ErrorKind::kValue, "backbone channel counts must be >= 1");
  require(c.lnet_h >= 16 && c.lnet_w >= 16 && c.lnet_h % 16 == 0 && c.lnet_w % 16 == 0, ErrorKind::kValue,
          "L-Net input extents must be positive multiples of 16");
  require(c.local_radius.size() == 3, ErrorKind::kValue, "local_radius needs one entry per local level (L2, L3, L4)");
  for (int r : c.local_radius) require(r >= 1, ErrorKind::kValue, "local radius must be >= 1");
  require(c.decoder_channels.size() == 5, ErrorKind::kValue, "decoder needs exactly 5 channel counts");
  require(c.refinement_channels.size() == 6, ErrorKind::kValue, "refinement needs exactly 6 channel counts");
  for (auto ch : c.decoder_channels) require(ch >= 1, ErrorKind::kValue, "decoder channel counts must be >= 1");
  for (auto ch : c.refinement_channels) require(ch >= 1, ErrorKind::kValue, "refinement channel counts must be >= 1");
}

namespace {

Tensor kaiming(Rng& rng, Shape shape) {
  const double fan_in = static_cast<double>(shape.c * shape.h * shape.w);
  const double std = std::sqrt(2.0 / fan_in);
  std::vector<float> v(static_cast<size_t>(shape.numel()));
  for (auto& x : v) x = static_cast<float>(rng.normal() * std);
  return Tensor::from(shape, std::move(v));
}

Tensor uniform_fan_in(Rng& rng, Shape shape, double fan_in) {
  const double bound = 1.0 / std::sqrt(fan_in);
  std::vector<float> v(static_cast<size_t>(shape.numel()));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from(shape, std::move(v));
}

ConvBlock make_block(Rng& rng, int64_t in_c, int64_t out_c, int stride, int dilation, bool trainable) {
  ConvBlock b;
  b.weight = kaiming(rng, {out_c, in_c, 3, 3});
  b.scale = Tensor::full({1, out_c, 1, 1}, 1.0);
  b.shift = Tensor::zeros({1, out_c, 1, 1});
  b.stats = RunningStats::init(out_c);
  b.stride = stride;
  b.dilation = dilation;
  b.weight.set_requires_grad(trainable);
  b.scale.set_requires_grad(trainable);
  b.shift.set_requires_grad(trainable);
  return b;
}

LinearConv make_linear(Rng& rng, int64_t in_c, int64_t out_c, int64_t k) {
  const double fan_in = static_cast<double>(in_c * k * k);
  LinearConv l{uniform_fan_in(rng, {out_c, in_c, k, k}, fan_in), uniform_fan_in(rng, {1, out_c, 1, 1}, fan_in)};
  l.weight.set_requires_grad(true);
  l.bias.set_requires_grad(true);
  return l;
}

FlowDecoderParams make_flow_decoder(Rng& rng, int64_t in_c, const std::vector<int64_t>& channels) {
  FlowDecoderParams d;
  int64_t width = in_c;
  for (auto ch : channels) {
    d.blocks.push_back(make_block(rng, width, ch, 1, 1, true));
    width += ch;
  }
  d.head = make_linear(rng, width, 2, 3);
  return d;
}

RefinementParams make_refinement(Rng& rng, int64_t in_c, const std::vector<int64_t>& channels) {
  RefinementParams r;
  const auto& dil = refinement_dilations();
  int64_t width = in_c;
  for (size_t i = 0; i < channels.size(); ++i) {
    r.blocks.push_back(make_block(rng, width, channels[i], 1, dil[i], true));
    width = channels[i];
  }
  r.head = make_linear(rng, width, 2, 3);
  return r;
}

void add_block(ModelParams& out, const std::string& prefix, const ConvBlock& b) {
  out.emplace_back(prefix + ".weight", b.weight);
  out.emplace_back(prefix + ".bn.scale", b.scale);
  out.emplace_back(prefix + ".bn.shift", b.shift);
}

void add_stats(ModelParams& out, const std::string& prefix, const ConvBlock& b) {
  out.emplace_back(prefix + ".bn.running_mean", b.stats.mean);
  out.emplace_back(prefix + ".bn.running_var", b.stats.var);
}

void add_linear(ModelParams& out, const std::string& prefix, const LinearConv& l) {
  out.emplace_back(prefix + ".weight", l.weight);
  out.emplace_back(prefix + ".bias", l.bias);
}

template <class Fn>
void visit_blocks(const GLUNetModel& m, Fn&& fn) {
  for (size_t i = 0; i < m.backbone.stages.size(); ++i) fn("backbone.stage" + std::to_string(i), m.backbone.stages[i]);
  for (size_t i = 0; i < m.mapping.blocks.size(); ++i) fn("mapping.block" + std::to_string(i), m.mapping.blocks[i]);
  const std::pair<const char*, const FlowDecoderParams*> decoders[] = {
      {"decoder_l2", &m.decoder_l2}, {"decoder_l3", &m.decoder_l3}, {"decoder_l4", &m.decoder_l4}};
  for (const auto& [name, d] : decoders) {
    for (size_t i = 0; i < d->blocks.size(); ++i) fn(std::string(name) + ".block" + std::to_string(i), d->blocks[i]);
  }
  const std::pair<const char*, const std::optional<RefinementParams>*> refinements[] = {
      {"refinement_l2", &m.refinement_l2}, {"refinement_l4", &m.refinement_l4}};
  for (const auto& [name, r] : refinements) {
    if (!r->has_value()) continue;
    for (size_t i = 0; i < (*r)->blocks.size(); ++i) fn(std::string(name) + ".block" + std::to_string(i), (*r)->blocks[i]);
  }
}

}  // namespace

GLUNetModel GLUNetModel::create(const ModelConfig& config, uint64_t seed) {
  validate(config);
  Rng rng(seed);
  GLUNetModel m;
  m.config = config;
  const auto& bc = config.backbone.channels;
  const bool backbone_trainable = config.backbone.variant == BackboneVariant::kToyTrainable;
  int64_t width = 3;
  for (size_t i = 0; i < bc.size(); ++i) {
    m.backbone.stages.push_back(make_block(rng, width, bc[i], i == 0 ? 1 : 2, 1, backbone_trainable));
    width = bc[i];
  }

  const int64_t global_channels = (config.lnet_h / 16) * (config.lnet_w / 16);
  width = global_channels;
  for (auto ch : config.decoder_channels) {
    m.mapping.blocks.push_back(make_block(rng, width, ch, 1, 1, true));
    width = ch;
  }
  m.mapping.head = make_linear(rng, width, 2, 3);

  auto cost_channels = [](int r) { return static_cast<int64_t>((2 * r + 1) * (2 * r + 1)); };
  m.decoder_l2 = make_flow_decoder(rng, cost_channels(config.local_radius[0]) + 2, config.decoder_channels);
  m.decoder_l3 = make_flow_decoder(rng, cost_channels(config.local_radius[1]) + 2, config.decoder_channels);
  m.decoder_l4 = make_flow_decoder(rng, cost_channels(config.local_radius[2]) + 4, config.decoder_channels);
  // Transposed conv weight is (in_c, out_c, k, k): 32 -> 2, kernel 4, stride 2.
  const int64_t act = config.decoder_channels.back();
  LinearConv carry{uniform_fan_in(rng, {act, 2, 4, 4}, static_cast<double>(act * 16)),
                   uniform_fan_in(rng, {1, 2, 1, 1}, static_cast<double>(act * 16))};
  carry.weight.set_requires_grad(true);
  carry.bias.set_requires_grad(true);
  m.decoder_l4.carry = carry;

  if (config.refine_l2) m.refinement_l2 = make_refinement(rng, act, config.refinement_channels);
  if (config.refine_l4) m.refinement_l4 = make_refinement(rng, act, config.refinement_channels);
  return m;
}

ModelParams GLUNetModel::parameters() const {
  ModelParams out;
  for (size_t i = 0; i < backbone.stages.size(); ++i) add_block(out, "backbone.stage" + std::to_string(i), backbone.stages[i]);
  for (size_t i = 0; i < mapping.blocks.size(); ++i) add_block(out, "mapping.block" + std::to_string(i), mapping.blocks[i]);
  add_linear(out, "mapping.head", mapping.head);
  const std::pair<const char*, const FlowDecoderParams*> decoders[] = {
      {"decoder_l2", &decoder_l2}, {"decoder_l3", &decoder_l3}, {"decoder_l4", &decoder_l4}};
  for (const auto& [name, d] : decoders) {
    const std::string prefix(name);
    for (size_t i = 0; i < d->blocks.size(); ++i) add_block(out, prefix + ".block" + std::to_string(i), d->blocks[i]);
    add_linear(out, prefix + ".head", d->head);
    if (d->carry) add_linear(out, prefix + ".carry", *d->carry);
  }
  const std::pair<const char*, const std::optional<RefinementParams>*> refinements[] = {
      {"refinement_l2", &refinement_l2}, {"refinement_l4", &refinement_l4}};
  for (const auto& [name, r] : refinements) {
    if (!r->has_value()) continue;
    const std::string prefix(name);
    for (size_t i = 0; i < (*r)->blocks.size(); ++i) add_block(out, prefix + ".block" + std::to_string(i), (*r)->blocks[i]);
    add_linear(out, prefix + ".head", (*r)->head);
  }
  return out;
}

ModelParams GLUNetModel::buffers() const {
  ModelParams out;
  visit_blocks(*this, [&](const std::string& name, const ConvBlock& b) { add_stats(out, name, b); });
  return out;
}

int64_t count_params(const GLUNetModel& model) {
  int64_t total = 0;
  for (const auto& [name, t] : model.parameters()) total += t.numel();
  return total;
}

// ---------------------------------------------------------------------------
// forward pieces

Tensor normalize_image(const Tensor& rgb) {
  require(rgb.shape().c == 3, ErrorKind::kShape, "normalize_image: expected 3 channels, got " + std::to_string(rgb.shape().c));
  static const double mean[3] = {0.485, 0.456, 0.406};
  static const double stddev[3] = {0.229, 0.224, 0.225};
  Tensor out = rgb.clone();
  const Shape s = rgb.shape();
  dispatch(out.dtype(), [&](auto zero) {
    using T = decltype(zero);
    auto v = out.mutable_data<T>();
    for (int64_t n = 0; n < s.n; ++n) {
      for (int64_t c = 0; c < 3; ++c) {
        T* p = v.data() + (n * 3 + c) * s.h * s.w;
        for (int64_t i = 0; i < s.h * s.w; ++i) p[i] = static_cast<T>((p[i] - mean[c]) / stddev[c]);
      }
    }
  });
  return out;
}

Tensor conv_block_forward(const ConvBlock& block, const Tensor& input, bool training) {
  Tensor y = conv2d(input, block.weight, {}, {block.stride, block.dilation, block.dilation});
  RunningStats stats = block.stats;  // handles share storage with the block
  return relu(batch_norm(y, block.scale, block.shift, stats, training));
}

namespace {

Tensor linear_forward(const LinearConv& l, const Tensor& input) {
  return conv2d(input, l.weight, l.bias, {1, static_cast<int>(l.weight.shape().h / 2), 1});
}

void require_divisible(int64_t h, int64_t w) {
  require(h % 8 == 0 && w % 8 == 0 && h > 0 && w > 0, ErrorKind::kShape,
          "image extents " + std::to_string(h) + "x" + std::to_string(w) + " must be positive multiples of 8");
}

}  // namespace

Pyramid extract_pyramid(const GLUNetModel& model, const Tensor& image) {
  const Shape s = image.shape();
  require(s.c == 3, ErrorKind::kShape, "extract_pyramid: expected 3-channel images, got " + std::to_string(s.c));
  require_divisible(s.h, s.w);
  const bool train = model.training && model.config.backbone.variant == BackboneVariant::kToyTrainable;
  const auto& stages = model.backbone.stages;

  Pyramid p;
  Tensor x = bilinear_resize(image, model.config.lnet_h, model.config.lnet_w);
  for (size_t i = 0; i < stages.size(); ++i) {
    x = conv_block_forward(stages[i], x, train);
    if (i == 3) p.l2 = x;
    if (i == 4) p.l1 = x;
  }
  x = image;
  for (size_t i = 0; i < 4; ++i) {
    x = conv_block_forward(stages[i], x, train);
    if (i == 2) p.l4 = x;
    if (i == 3) p.l3 = x;
  }
  return p;
}

CorrespondenceMap mapping_decoder_forward(const GLUNetModel& model, const GlobalCostVolume& cost) {
  const auto& dec = model.mapping;
  const int64_t expected = dec.blocks.front().weight.shape().c;
  require(cost.volume.shape().c == expected, ErrorKind::kShape,
          "mapping decoder: cost volume channel dimension " + std::to_string(cost.volume.shape().c) + " != " +
              std::to_string(expected));
  Tensor x = cost.volume;
  for (const auto& b : dec.blocks) x = conv_block_forward(b, x, model.training);
  return {linear_forward(dec.head, x)};
}

DecoderOutput flow_decoder_forward(const FlowDecoderParams& params, const LocalCostVolume& cost,
                                   const FlowField& up_flow, const std::optional<Tensor>& carry, bool training) {
  const Shape cs = cost.volume.shape();
  const Shape fs = up_flow.values.shape();
  require(cs.n == fs.n && cs.h == fs.h && cs.w == fs.w, ErrorKind::kShape,
          "flow decoder: cost volume " + cs.str() + " and flow " + fs.str() + " disagree");
  std::vector<Tensor> parts = {cost.volume, up_flow.values};
  if (carry) {
    const Shape ks = carry->shape();
    require(ks.n == cs.n && ks.h == cs.h && ks.w == cs.w, ErrorKind::kShape,
            "flow decoder: carry " + ks.str() + " and cost volume " + cs.str() + " disagree");
    parts.push_back(*carry);
  }
  Tensor dense = concat_channels(parts);
  const int64_t expected = params.blocks.front().weight.shape().c;
  require(dense.shape().c == expected, ErrorKind::kShape,
          "flow decoder: input channel dimension " + std::to_string(dense.shape().c) + " != " + std::to_string(expected));
  Tensor last;
  for (const auto& b : params.blocks) {
    last = conv_block_forward(b, dense, training);
    dense = concat_channels({dense, last});
  }
  Tensor delta = linear_forward(params.head, dense);
  return {{delta, up_flow.frame_h, up_flow.frame_w}, last};
}

Tensor refinement_forward(const RefinementParams& params, const Tensor& activation, bool training) {
  Tensor x = activation;
  for (const auto& b : params.blocks) x = conv_block_forward(b, x, training);
  return linear_forward(params.head, x);
}

std::vector<Extent> iterative_refinement_schedule(int64_t height, int64_t width, int64_t lnet_h, int64_t lnet_w) {
  const int64_t high_h = height / 8, high_w = width / 8;
  const int64_t low_h = lnet_h / 8, low_w = lnet_w / 8;
  std::vector<Extent> out;
  if (low_h <= 0 || low_w <= 0) return out;
  const double ratio = std::max(static_cast<double>(high_h) / static_cast<double>(low_h),
                                static_cast<double>(high_w) / static_cast<double>(low_w));
  // One halving step per factor of two above a gap of 3.
  const auto steps = static_cast<int64_t>(std::llround(std::log2(ratio / 3.0)));
  for (int64_t k = 1; k <= steps; ++k) {
    const int64_t div = int64_t{1} << k;
    out.push_back({std::max<int64_t>(high_h / div, 1), std::max<int64_t>(high_w / div, 1)});
  }
  return out;
}

namespace {

struct LevelResult {
  FlowField flow;
  Tensor activation;
};

// Warp source features by up_flow, correlate locally and decode the residual.
LevelResult run_local_level(const FlowDecoderParams& decoder, const Tensor& target_feat, const Tensor& source_feat,
                            const FlowField& up_flow, int radius, const std::optional<Tensor>& carry, bool training) {
  Tensor warped = warp(source_feat, up_flow);
  LocalCostVolume cost = local_correlation(target_feat, warped, radius);
  DecoderOutput out = flow_decoder_forward(decoder, cost, up_flow, carry, training);
  return {{add(out.residual.values, up_flow.values), up_flow.frame_h, up_flow.frame_w}, out.activation};
}

// Resizes a flow to (h, w) and re-expresses it in the given frame.
FlowField to_grid(const FlowField& flow, int64_t h, int64_t w, int64_t frame_h, int64_t frame_w) {
  FlowField out = upsample_flow(flow, h, w, static_cast<double>(frame_w) / static_cast<double>(flow.frame_w),
                                static_cast<double>(frame_h) / static_cast<double>(flow.frame_h));
  out.frame_h = frame_h;
  out.frame_w = frame_w;
  return out;
}

}  // namespace

ForwardResult forward_features(const GLUNetModel& model, const Pyramid& source, const Pyramid& target, int64_t height,
                               int64_t width) {
  require_divisible(height, width);
  const auto& cfg = model.config;
  const bool train = model.training;
  ForwardResult result;

  // L1: global correlation of L2-normalized features, mapping decoder.
  const Tensor t1 = l2_normalize_channels(target.l1);
  const Tensor s1 = l2_normalize_channels(source.l1);
  result.global_cost = global_correlation(t1, s1);
  GlobalCostVolume cost = normalize_cost_volume(result.global_cost, cfg.cost_norm_order);
  if (cfg.cyclic_consistency) cost = cyclic_consistency_filter(cost);
  const CorrespondenceMap m1 = mapping_decoder_forward(model, cost);
  const int64_t h1 = t1.shape().h, w1 = t1.shape().w;
  const FlowField w1_level = map_to_flow(m1, h1, w1);
  FlowField flow1 = to_grid(w1_level, h1, w1, cfg.lnet_h, cfg.lnet_w);
  result.levels.push_back(flow1);

  // L2: local correlation in the L-Net frame, then refinement.
  const Tensor t2 = l2_normalize_channels(target.l2);
  const Tensor s2 = l2_normalize_channels(source.l2);
  const FlowField up2 = upsample_flow(flow1, t2.shape().h, t2.shape().w, 1.0, 1.0);
  LevelResult l2 = run_local_level(model.decoder_l2, t2, s2, up2, cfg.local_radius[0], std::nullopt, train);
  if (model.refinement_l2) {
    l2.flow.values = add(l2.flow.values, refinement_forward(*model.refinement_l2, l2.activation, train));
  }
  result.levels.push_back(l2.flow);

  // Transition into the H x W frame, with optional parameter-free refinements
  // at intermediate resolutions reusing the L3 decoder.
  const Tensor t3 = l2_normalize_channels(target.l3);
  const Tensor s3 = l2_normalize_channels(source.l3);
  FlowField current = l2.flow;
  if (cfg.iterative_refinement) {
    auto schedule = iterative_refinement_schedule(height, width, cfg.lnet_h, cfg.lnet_w);
    std::reverse(schedule.begin(), schedule.end());
    for (const auto& e : schedule) {
      const Tensor ti = l2_normalize_channels(bilinear_resize(target.l3, e.h, e.w));
      const Tensor si = l2_normalize_channels(bilinear_resize(source.l3, e.h, e.w));
      const FlowField up = to_grid(current, e.h, e.w, height, width);
      current = run_local_level(model.decoder_l3, ti, si, up, cfg.local_radius[1], std::nullopt, train).flow;
      result.intermediate.push_back(current);
    }
  }
  const FlowField up3 = to_grid(current, t3.shape().h, t3.shape().w, height, width);
  LevelResult l3 = run_local_level(model.decoder_l3, t3, s3, up3, cfg.local_radius[1], std::nullopt, train);
  result.levels.push_back(l3.flow);

  // L4: finest local level with the transposed-conv carry and refinement.
  const Tensor t4 = l2_normalize_channels(target.l4);
  const Tensor s4 = l2_normalize_channels(source.l4);
  const FlowField up4 = upsample_flow(l3.flow, t4.shape().h, t4.shape().w, 1.0, 1.0);
  std::optional<Tensor> carry;
  if (model.decoder_l4.carry) {
    carry = conv_transpose2d(l3.activation, model.decoder_l4.carry->weight, model.decoder_l4.carry->bias, 2, 1);
  }
  LevelResult l4 = run_local_level(model.decoder_l4, t4, s4, up4, cfg.local_radius[2], carry, train);
  if (model.refinement_l4) {
    l4.flow.values = add(l4.flow.values, refinement_forward(*model.refinement_l4, l4.activation, train));
  }
  result.levels.push_back(l4.flow);

  result.flow = upsample_flow(l4.flow, height, width, 1.0, 1.0);
  return result;
}

ForwardResult forward(const GLUNetModel& model, const Tensor& source, const Tensor& target) {
  const Shape ss = source.shape();
  require(ss == target.shape(), ErrorKind::kShape,
          "forward: source " + ss.str() + " and target " + target.shape().str() + " differ");
  require_divisible(ss.h, ss.w);
  // One backbone pass over both images so batch statistics are shared.
  const Pyramid both = extract_pyramid(model, normalize_image(concat_batch({source, target})));
  auto half = [&](const Tensor& t, int64_t start) { return slice_batch(t, start, ss.n); };
  const Pyramid ps{half(both.l1, 0), half(both.l2, 0), half(both.l3, 0), half(both.l4, 0)};
  const Pyramid pt{half(both.l1, ss.n), half(both.l2, ss.n), half(both.l3, ss.n), half(both.l4, ss.n)};
  return forward_features(model, ps, pt, ss.h, ss.w);
}

}  // namespace dce
