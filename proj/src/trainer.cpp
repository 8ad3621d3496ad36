#include "dce/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "dce/autograd.hpp"
#include "dce/random.hpp"

namespace dce {

void validate(const TrainConfig& c) {
  require(c.alpha.size() == 4, ErrorKind::kValue, "train config: alpha needs one weight per level (4)");
  for (double a : c.alpha) require(a >= 0.0, ErrorKind::kValue, "train config: alpha weights must be >= 0");
  require(c.weight_decay >= 0.0, ErrorKind::kValue, "train config: weight_decay must be >= 0");
  require(c.batch_size >= 1, ErrorKind::kValue, "train config: batch_size must be >= 1");
  require(c.learning_rate >= 0.0 && c.lr_decay > 0.0, ErrorKind::kValue,
          "train config: learning_rate >= 0 and lr_decay > 0 required");
  require(c.iterations >= 0, ErrorKind::kValue, "train config: iterations must be >= 0");
}

FlowField gt_for_level(const FlowField& gt, int64_t level_h, int64_t level_w, int64_t frame_h, int64_t frame_w) {
  FlowField framed = gt;
  if (gt.frame_h != frame_h || gt.frame_w != frame_w) {
    require(gt.frame_h == gt.level_h() && gt.frame_w == gt.level_w(), ErrorKind::kShape,
            "gt_for_level: ground truth must live on its own frame grid");
    if (frame_h <= gt.level_h() && frame_w <= gt.level_w()) {
      framed = downsample_gt(gt, frame_h, frame_w, true);
    } else {
      framed = upsample_flow(gt, frame_h, frame_w, static_cast<double>(frame_w) / static_cast<double>(gt.frame_w),
                             static_cast<double>(frame_h) / static_cast<double>(gt.frame_h));
    }
    framed.frame_h = frame_h;
    framed.frame_w = frame_w;
  }
  if (framed.level_h() == level_h && framed.level_w() == level_w) return framed;
  return {bilinear_resize(framed.values, level_h, level_w), frame_h, frame_w};
}

LossBreakdown multi_scale_loss(const std::vector<FlowField>& levels, const FlowField& gt, const TrainConfig& config) {
  require(levels.size() == config.alpha.size(), ErrorKind::kValue,
          "multi_scale_loss: " + std::to_string(levels.size()) + " levels but " + std::to_string(config.alpha.size()) +
              " alpha weights");
  check_flow(gt, "multi_scale_loss");
  const int64_t batch = gt.values.shape().n;
  LossBreakdown out;
  for (size_t l = 0; l < levels.size(); ++l) {
    const FlowField& pred = levels[l];
    check_flow(pred, "multi_scale_loss");
    require(pred.values.shape().n == batch, ErrorKind::kShape, "multi_scale_loss: batch size mismatch");
    const FlowField target = gt_for_level(gt, pred.level_h(), pred.level_w(), pred.frame_h, pred.frame_w);
    Tensor gt_values = target.values.dtype() == pred.values.dtype() ? target.values : target.values.to(pred.values.dtype());
    Tensor term = mul_scalar(sum_all(endpoint_error_map(pred.values, gt_values)),
                             config.alpha[l] / static_cast<double>(batch));
    out.per_level.push_back(term.item());
    out.total = out.total.defined() ? add(out.total, term) : term;
  }
  return out;
}

namespace {

struct Batch {
  Tensor source;
  Tensor target;
  FlowField gt;
};

Batch assemble(const std::vector<SamplePair>& data, const std::vector<size_t>& idx) {
  std::vector<Tensor> s, t, g;
  for (size_t i : idx) {
    s.push_back(data[i].source);
    t.push_back(data[i].target);
    g.push_back(data[i].gt_flow.values);
  }
  const FlowField& first = data[idx.front()].gt_flow;
  return {concat_batch(s), concat_batch(t), {concat_batch(g), first.frame_h, first.frame_w}};
}

double learning_rate_at(const TrainConfig& c, int64_t iteration) {
  double lr = c.learning_rate;
  for (int64_t m : c.lr_milestones) {
    if (iteration >= m) lr *= c.lr_decay;
  }
  return lr;
}

}  // namespace

std::vector<HistoryRow> train(GLUNetModel& model, const std::vector<SamplePair>& data, const TrainConfig& config,
                              const StepCallback& on_step) {
  validate(config);
  require(!data.empty(), ErrorKind::kValue, "train: dataset is empty");
  const Shape ref = data.front().source.shape();
  for (const auto& p : data) {
    require(p.source.shape() == ref && p.target.shape() == ref, ErrorKind::kShape,
            "train: every pair must share the extent " + ref.str());
  }
  model.training = true;
  ModelParams params = model.parameters();
  AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  opts.weight_decay = config.weight_decay;
  AdamState state = AdamState::init(params, opts);

  Rng rng(config.seed);
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  std::vector<HistoryRow> history;
  const auto batch = static_cast<size_t>(std::min<int64_t>(config.batch_size, static_cast<int64_t>(data.size())));
  for (int64_t it = 0; it < config.iterations; ++it) {
    std::vector<size_t> idx;
    for (size_t b = 0; b < batch; ++b) idx.push_back(next_index());
    const Batch bt = assemble(data, idx);

    for (auto& [name, p] : params) p.clear_grad();
    GradientTape tape;
    LossBreakdown loss;
    {
      TapeScope scope(tape);
      const ForwardResult fr = forward(model, bt.source, bt.target);
      loss = multi_scale_loss(fr.levels, bt.gt, config);
    }
    const double value = loss.total.item();
    if (!std::isfinite(value)) {
      fail(ErrorKind::kNumeric, "train: loss became " + std::to_string(value) + " at iteration " + std::to_string(it));
    }
    backward(loss.total, tape);
    tape.clear();
    state.options.learning_rate = learning_rate_at(config, it);
    adam_step(params, state);

    HistoryRow row{it, value, loss.per_level};
    if (on_step) on_step(row);
    history.push_back(std::move(row));
  }
  model.training = false;
  return history;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out << "iteration,loss,loss_l1,loss_l2,loss_l3,loss_l4\n";
  out.precision(17);
  for (const auto& r : history) {
    out << r.iteration << ',' << r.loss;
    for (double v : r.per_level) out << ',' << v;
    out << '\n';
  }
  require(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

FlowField predict(const GLUNetModel& model, const Tensor& source, const Tensor& target) {
  GLUNetModel eval = model;
  eval.training = false;
  return forward(eval, source, target).flow;
}

namespace {

// Sums EPE over valid pixels into (sum, count).
void accumulate_epe(const Tensor& pred, const Tensor& gt, const Tensor& mask, double& sum, int64_t& count) {
  const Shape s = gt.shape();
  const auto p = pred.to_vector();
  const auto g = gt.to_vector();
  const auto m = mask.to_vector();
  const int64_t plane = s.h * s.w;
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t i = 0; i < plane; ++i) {
      if (m[n * plane + i] == 0.0) continue;
      const double du = p[(2 * n) * plane + i] - g[(2 * n) * plane + i];
      const double dv = p[(2 * n + 1) * plane + i] - g[(2 * n + 1) * plane + i];
      sum += std::sqrt(du * du + dv * dv);
      ++count;
    }
  }
}

}  // namespace

double dataset_aepe(const GLUNetModel& model, const std::vector<SamplePair>& pairs) {
  require(!pairs.empty(), ErrorKind::kValue, "dataset_aepe: no pairs");
  double sum = 0.0;
  int64_t count = 0;
  for (const auto& p : pairs) {
    const FlowField flow = predict(model, p.source, p.target);
    accumulate_epe(flow.values, p.gt_flow.values, p.valid_mask, sum, count);
  }
  require(count > 0, ErrorKind::kValue, "dataset_aepe: every mask is empty");
  return sum / static_cast<double>(count);
}

std::vector<double> level_aepe(const GLUNetModel& model, const std::vector<SamplePair>& pairs) {
  require(!pairs.empty(), ErrorKind::kValue, "level_aepe: no pairs");
  GLUNetModel eval = model;
  eval.training = false;
  std::vector<double> sums(4, 0.0);
  std::vector<int64_t> counts(4, 0);
  for (const auto& p : pairs) {
    const ForwardResult fr = forward(eval, p.source, p.target);
    const int64_t h = p.gt_flow.level_h(), w = p.gt_flow.level_w();
    for (size_t l = 0; l < fr.levels.size() && l < 4; ++l) {
      const FlowField& f = fr.levels[l];
      const FlowField up = upsample_flow(f, h, w, static_cast<double>(p.gt_flow.frame_w) / static_cast<double>(f.frame_w),
                                         static_cast<double>(p.gt_flow.frame_h) / static_cast<double>(f.frame_h));
      accumulate_epe(up.values, p.gt_flow.values, p.valid_mask, sums[l], counts[l]);
    }
  }
  std::vector<double> out;
  for (size_t l = 0; l < 4; ++l) {
    require(counts[l] > 0, ErrorKind::kValue, "level_aepe: every mask is empty");
    out.push_back(sums[l] / static_cast<double>(counts[l]));
  }
  return out;
}

}  // namespace dce
