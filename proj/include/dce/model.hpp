#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dce/correlation.hpp"
#include "dce/flow.hpp"
#include "dce/ops.hpp"
#include "dce/optim.hpp"

namespace dce {

enum class BackboneVariant : uint8_t {
  kToyTrainable = 0,
  kFixedLoaded = 1,  // weights come from a checkpoint and stay frozen
};

// Five strided stages: full, /2, /4, /8, /16. The /4 and /8 outputs feed the
// H-Net levels of the full image, the /8 and /16 outputs the L-Net levels of
// the image resized to lnet_h x lnet_w.
struct BackboneSpec {
  BackboneVariant variant = BackboneVariant::kToyTrainable;
  std::vector<int64_t> channels = {16, 32, 64, 96, 128};
};

struct ModelConfig {
  BackboneSpec backbone;
  int64_t lnet_h = 256;
  int64_t lnet_w = 256;
  // Local search radius for L2, L3 and L4.
  std::vector<int> local_radius = {4, 4, 4};
  std::vector<int64_t> decoder_channels = {128, 128, 96, 64, 32};
  std::vector<int64_t> refinement_channels = {128, 128, 128, 96, 64, 32};
  bool cyclic_consistency = true;
  bool iterative_refinement = true;
  bool refine_l2 = true;
  bool refine_l4 = true;
  CostNormOrder cost_norm_order = CostNormOrder::kNormalizeThenRelu;
};

void validate(const ModelConfig& config);

inline const std::vector<int>& refinement_dilations() {
  static const std::vector<int> dilations = {1, 2, 4, 8, 16, 1, 1};
  return dilations;
}

// Conv (no bias) -> batch norm -> ReLU.
struct ConvBlock {
  Tensor weight;
  Tensor scale;
  Tensor shift;
  RunningStats stats;
  int stride = 1;
  int dilation = 1;
};

// Plain convolution with bias and no activation.
struct LinearConv {
  Tensor weight;
  Tensor bias;
};

struct BackboneParams {
  std::vector<ConvBlock> stages;
};

struct MappingDecoderParams {
  std::vector<ConvBlock> blocks;
  LinearConv head;
};

struct FlowDecoderParams {
  std::vector<ConvBlock> blocks;  // dense: block i sees input ++ outputs of blocks < i
  LinearConv head;                // reads the full dense concatenation
  std::optional<LinearConv> carry;  // transposed conv of the previous level's activation
};

struct RefinementParams {
  std::vector<ConvBlock> blocks;
  LinearConv head;
};

struct GLUNetModel {
  ModelConfig config;
  BackboneParams backbone;
  MappingDecoderParams mapping;
  FlowDecoderParams decoder_l2;
  FlowDecoderParams decoder_l3;
  FlowDecoderParams decoder_l4;
  std::optional<RefinementParams> refinement_l2;
  std::optional<RefinementParams> refinement_l4;
  bool training = true;

  static GLUNetModel create(const ModelConfig& config, uint64_t seed);

  // Trainable and frozen weights, in a fixed order.
  ModelParams parameters() const;
  // Batch-norm running statistics.
  ModelParams buffers() const;
};

struct Pyramid {
  Tensor l1;  // H_L/16 x W_L/16
  Tensor l2;  // H_L/8  x W_L/8
  Tensor l3;  // H/8 x W/8
  Tensor l4;  // H/4 x W/4
};

// Per-channel ImageNet mean/std normalization of an RGB batch in [0, 1].
Tensor normalize_image(const Tensor& rgb);

Tensor conv_block_forward(const ConvBlock& block, const Tensor& input, bool training);

Pyramid extract_pyramid(const GLUNetModel& model, const Tensor& image);

CorrespondenceMap mapping_decoder_forward(const GLUNetModel& model, const GlobalCostVolume& cost);

struct DecoderOutput {
  FlowField residual;
  Tensor activation;  // the 32-channel (last block) activation f
};

DecoderOutput flow_decoder_forward(const FlowDecoderParams& params, const LocalCostVolume& cost,
                                   const FlowField& up_flow, const std::optional<Tensor>& carry, bool training);

// Residual flow values (frame units of the level it refines).
Tensor refinement_forward(const RefinementParams& params, const Tensor& activation, bool training);

struct ForwardResult {
  FlowField flow;                     // H x W in the H x W frame
  std::vector<FlowField> levels;      // L1..L4 outputs
  std::vector<FlowField> intermediate;  // iterative-refinement outputs, coarse to fine
  GlobalCostVolume global_cost;       // raw L1 correlation
};

// source and target are RGB batches in [0, 1]; normalization happens inside.
ForwardResult forward(const GLUNetModel& model, const Tensor& source, const Tensor& target);
ForwardResult forward_features(const GLUNetModel& model, const Pyramid& source, const Pyramid& target, int64_t height,
                               int64_t width);

struct Extent {
  int64_t h = 0;
  int64_t w = 0;
  bool operator==(const Extent&) const = default;
};

// Intermediate resolutions between the finest L-Net level and the coarsest
// H-Net level, finest first: round(log2(gap / 3)) halvings of the coarsest
// H-Net grid, where gap is the larger per-axis resolution ratio.
std::vector<Extent> iterative_refinement_schedule(int64_t height, int64_t width, int64_t lnet_h, int64_t lnet_w);

int64_t count_params(const GLUNetModel& model);

}  // namespace dce
