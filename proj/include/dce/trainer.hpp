#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "dce/datagen.hpp"
#include "dce/model.hpp"

namespace dce {

struct TrainConfig {
  std::vector<double> alpha = {0.32, 0.08, 0.02, 0.01};  // L1..L4
  double weight_decay = 4e-4;
  int64_t batch_size = 4;
  double learning_rate = 1e-4;
  double lr_decay = 0.5;                // multiplied in at every milestone
  std::vector<int64_t> lr_milestones;   // iteration indices
  int64_t iterations = 100;
  uint64_t seed = 0;
};

void validate(const TrainConfig& config);

// Ground truth for one pyramid level: rescaled into the level's frame when
// that differs from the GT frame, then resized to the level grid without
// further scaling.
FlowField gt_for_level(const FlowField& gt, int64_t level_h, int64_t level_w, int64_t frame_h, int64_t frame_w);

struct LossBreakdown {
  Tensor total;                    // 1x1x1x1
  std::vector<double> per_level;   // alpha-weighted terms
};

// sum_l alpha_l * sum_x |w_l(x) - w_gt_l(x)|, averaged over the batch. The
// weight penalty lives in the optimizer, not here.
LossBreakdown multi_scale_loss(const std::vector<FlowField>& levels, const FlowField& gt, const TrainConfig& config);

struct HistoryRow {
  int64_t iteration = 0;
  double loss = 0.0;
  std::vector<double> per_level;
};

using StepCallback = std::function<void(const HistoryRow&)>;

// Adam over shuffled mini-batches; the order is fixed by config.seed. Throws
// a kNumeric Error if the loss stops being finite.
std::vector<HistoryRow> train(GLUNetModel& model, const std::vector<SamplePair>& data, const TrainConfig& config,
                              const StepCallback& on_step = {});

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history);

// Eval-mode prediction at the input resolution.
FlowField predict(const GLUNetModel& model, const Tensor& source, const Tensor& target);

// Mean EPE over every valid pixel of the given pairs.
double dataset_aepe(const GLUNetModel& model, const std::vector<SamplePair>& pairs);

// Mean EPE per pyramid level (L1..L4), each output resized to the pair
// resolution and expressed in its frame.
std::vector<double> level_aepe(const GLUNetModel& model, const std::vector<SamplePair>& pairs);

}  // namespace dce
