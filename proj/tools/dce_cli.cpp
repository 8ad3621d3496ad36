#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dce/bench.hpp"
#include "dce/checkpoint.hpp"
#include "dce/config.hpp"
#include "dce/datagen.hpp"
#include "dce/flow_io.hpp"
#include "dce/image_io.hpp"
#include "dce/metrics.hpp"
#include "dce/random.hpp"
#include "dce/trainer.hpp"

namespace fs = std::filesystem;
using namespace dce;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void need_dir(const fs::path& p, const char* what) {
  require(fs::is_directory(p), ErrorKind::kIo, std::string(what) + " is not a directory: " + p.string());
}

void need_file(const fs::path& p, const char* what) {
  require(fs::is_regular_file(p), ErrorKind::kIo, std::string(what) + " does not exist: " + p.string());
}

void need_parent(const fs::path& p) {
  const fs::path parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
  require(fs::is_directory(parent), ErrorKind::kIo, "output directory does not exist: " + parent.string());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot write " + p.string());
  out << text << '\n';
  require(out.good(), ErrorKind::kIo, "write failed for " + p.string());
}

RunConfig run_config(const std::string& path) {
  if (path.empty()) return toy_run_config();
  need_file(path, "config");
  return load_run_config(path, toy_run_config());
}

bool is_image(const fs::path& p) {
  static const char* exts[] = {".png", ".ppm", ".pgm", ".pnm"};
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return std::any_of(std::begin(exts), std::end(exts), [&](const char* x) { return e == x; });
}

std::vector<fs::path> sorted_files(const fs::path& dir, bool (*keep)(const fs::path&)) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && keep(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// --- datagen -------------------------------------------------------------

struct DatagenArgs {
  std::string images, out, config;
  int64_t count = 0;
  int64_t crop = 128;
  uint64_t seed = 0;
  int64_t synthetic = 0;
};

void cmd_datagen(const DatagenArgs& a) {
  const RunConfig rc = run_config(a.config);
  require(a.count >= 0, ErrorKind::kValue, "--count must be >= 0");
  require(!a.images.empty() || a.synthetic > 0, ErrorKind::kValue, "give --images DIR or --synthetic K");

  std::vector<Tensor> images;
  std::vector<std::string> names;
  if (!a.images.empty()) {
    need_dir(a.images, "--images");
    for (const auto& p : sorted_files(a.images, is_image)) {
      images.push_back(read_image(p));
      names.push_back(p.filename().string());
    }
    require(!images.empty(), ErrorKind::kIo, "no images found in " + a.images);
  } else {
    // Procedural sources, with a margin so the target can look outside the crop.
    const int64_t side = a.crop + a.crop / 2;
    for (int64_t k = 0; k < a.synthetic; ++k) {
      images.push_back(synthetic_image(derive_seed(a.seed ^ 0x5eedULL, static_cast<uint64_t>(k)), side, side));
      names.push_back("synthetic:" + std::to_string(k));
    }
  }

  const auto pairs = generate_pairs(images, a.count, a.crop, a.seed, rc.transforms);
  std::vector<ManifestRecord> records;
  for (int64_t i = 0; i < a.count; ++i) {
    records.push_back({names[static_cast<size_t>(i) % names.size()], derive_seed(a.seed, static_cast<uint64_t>(i)),
                       pairs[static_cast<size_t>(i)].spec.kind});
  }
  write_dataset(a.out, pairs, records);
  std::cout << "wrote " << pairs.size() << " pairs to " << a.out << '\n';
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string data, out, config, loss_csv;
};

void cmd_train(const TrainArgs& a) {
  need_dir(a.data, "--data");
  need_file(fs::path(a.data) / kManifestName, "manifest");
  need_parent(a.out);
  const RunConfig rc = run_config(a.config);
  const auto pairs = load_dataset(a.data);
  require(!pairs.empty(), ErrorKind::kValue, "dataset " + a.data + " has no pairs");

  GLUNetModel model = GLUNetModel::create(rc.model, rc.seeds.model);
  const auto every = std::max<int64_t>(1, rc.train.iterations / 20);
  const auto history = train(model, pairs, rc.train, [&](const HistoryRow& r) {
    if (r.iteration % every == 0 || r.iteration + 1 == rc.train.iterations) {
      std::cout << "iter " << r.iteration << " loss " << r.loss << '\n';
    }
  });
  save_checkpoint(model, a.out);
  write_history_csv(a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv, history);
  std::cout << "saved " << a.out << '\n';
}

// --- infer ---------------------------------------------------------------

struct InferArgs {
  std::string ckpt, source, target, out_flow, out_warp;
};

Tensor pad_to_multiple(const Tensor& image, int64_t h, int64_t w) {
  const Shape s = image.shape();
  if (s.h == h && s.w == w) return image;
  std::vector<float> v(static_cast<size_t>(s.n * s.c * h * w), 0.0f);
  auto src = image.data<float>();
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t c = 0; c < s.c; ++c) {
      for (int64_t y = 0; y < s.h; ++y) {
        std::copy_n(src.begin() + index4(s, n, c, y, 0), s.w, v.begin() + ((n * s.c + c) * h + y) * w);
      }
    }
  }
  return Tensor::from({s.n, s.c, h, w}, std::move(v));
}

Tensor crop_flow(const Tensor& flow, int64_t h, int64_t w) {
  const Shape s = flow.shape();
  if (s.h == h && s.w == w) return flow;
  std::vector<float> v(static_cast<size_t>(2 * h * w));
  auto src = flow.data<float>();
  for (int64_t c = 0; c < 2; ++c) {
    for (int64_t y = 0; y < h; ++y) std::copy_n(src.begin() + index4(s, 0, c, y, 0), w, v.begin() + (c * h + y) * w);
  }
  return Tensor::from({1, 2, h, w}, std::move(v));
}

void cmd_infer(const InferArgs& a) {
  need_file(a.ckpt, "--ckpt");
  need_file(a.source, "--source");
  need_file(a.target, "--target");
  need_parent(a.out_flow);
  if (!a.out_warp.empty()) need_parent(a.out_warp);

  GLUNetModel model = load_checkpoint(a.ckpt);
  model.training = false;
  const Tensor src = read_image(a.source);
  const Tensor tgt = read_image(a.target);
  const Shape s = src.shape();
  require(s == tgt.shape(), ErrorKind::kShape,
          "source " + s.str() + " and target " + tgt.shape().str() + " have different extents");
  const int64_t ph = (s.h + 7) / 8 * 8, pw = (s.w + 7) / 8 * 8;
  const FlowField padded = predict(model, pad_to_multiple(src, ph, pw), pad_to_multiple(tgt, ph, pw));
  const Tensor flow = crop_flow(padded.values.to(Dtype::kF32), s.h, s.w);
  for (float f : flow.data<float>()) require(std::isfinite(f), ErrorKind::kNumeric, "inference produced non-finite flow");
  write_flow(a.out_flow, flow);
  if (!a.out_warp.empty()) write_image(a.out_warp, warp(src, {flow, s.h, s.w}));
  std::cout << "wrote " << a.out_flow << '\n';
}

// --- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, sparse, report;
};

bool is_flow_file(const fs::path& p) { return p.extension() == ".flo"; }

// Validity for a ground-truth flow file: known components, intersected with
// a sibling "<stem>_mask.pgm" (stem without a trailing "_flow") when present.
Tensor gt_mask(const fs::path& path, const Tensor& flow) {
  Tensor mask = known_flow_mask(flow);
  std::string stem = path.stem().string();
  if (stem.size() > 5 && stem.ends_with("_flow")) stem.resize(stem.size() - 5);
  const fs::path side = path.parent_path() / (stem + "_mask.pgm");
  if (!fs::exists(side)) return mask;
  const Tensor extra = read_mask(side);
  require(extra.shape() == mask.shape(), ErrorKind::kShape, "mask " + side.string() + " does not match its flow");
  std::vector<float> m(mask.data<float>().begin(), mask.data<float>().end());
  auto e = extra.data<float>();
  for (size_t i = 0; i < m.size(); ++i) m[i] = (m[i] != 0.0f && e[i] != 0.0f) ? 1.0f : 0.0f;
  return Tensor::from(mask.shape(), std::move(m));
}

void cmd_eval(const EvalArgs& a) {
  need_parent(a.report);
  MetricReport report;
  if (!a.sparse.empty()) {
    need_file(a.pred, "--pred");
    need_file(a.sparse, "--sparse");
    const Tensor pred = read_flow(a.pred);
    report = eval_sparse({pred, pred.shape().h, pred.shape().w}, read_correspondences(a.sparse));
  } else {
    require(!a.gt.empty(), ErrorKind::kValue, "--gt is required for dense evaluation");
    std::vector<fs::path> preds, gts;
    if (fs::is_directory(a.pred)) {
      need_dir(a.gt, "--gt");
      preds = sorted_files(a.pred, is_flow_file);
      gts = sorted_files(a.gt, is_flow_file);
    } else {
      need_file(a.pred, "--pred");
      need_file(a.gt, "--gt");
      preds = {a.pred};
      gts = {a.gt};
    }
    require(!preds.empty(), ErrorKind::kIo, "no .flo files under " + a.pred);
    require(preds.size() == gts.size(), ErrorKind::kValue,
            std::to_string(preds.size()) + " predictions but " + std::to_string(gts.size()) + " ground-truth files");
    std::vector<Tensor> p, g, m;
    for (size_t i = 0; i < preds.size(); ++i) {
      p.push_back(read_flow(preds[i]));
      g.push_back(read_flow(gts[i]));
      require(p.back().shape() == g.back().shape(), ErrorKind::kShape,
              "resolution mismatch: " + preds[i].string() + " " + p.back().shape().str() + " vs " + gts[i].string() +
                  " " + g.back().shape().str());
      m.push_back(gt_mask(gts[i], g.back()));
    }
    require(std::all_of(p.begin(), p.end(), [&](const Tensor& t) { return t.shape() == p.front().shape(); }),
            ErrorKind::kShape, "resolution mismatch between flow files");
    const Shape s = p.front().shape();
    report = evaluate_dense({concat_batch(p), s.h, s.w}, {concat_batch(g), s.h, s.w}, concat_batch(m));
  }
  const std::string json = report_to_json(report);
  write_text(a.report, json);
  std::cout << json << '\n';
}

// --- bench ---------------------------------------------------------------

struct BenchArgs {
  std::string sizes = "16,32,64";
  std::string report;
  int radius = 4;
  int repeat = 5;
  int64_t channels = 64;
};

void cmd_bench(const BenchArgs& a) {
  if (!a.report.empty()) need_parent(a.report);
  BenchOptions o;
  o.radius = a.radius;
  o.repeat = a.repeat;
  o.channels = a.channels;
  o.sizes.clear();
  std::stringstream ss(a.sizes);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      o.sizes.push_back(std::stoll(item));
    } catch (const std::exception&) {
      fail(ErrorKind::kValue, "--sizes: not an integer: '" + item + "'");
    }
  }
  const auto rows = run_correlation_bench(o);
  const std::string json = bench_report_json(o, rows);
  if (!a.report.empty()) write_text(a.report, json);
  std::cout << json << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense correspondence engine"};
  app.require_subcommand(1);

  DatagenArgs dg;
  auto* datagen = app.add_subcommand("datagen", "Generate synthetic training pairs");
  datagen->add_option("--images", dg.images, "Directory of source images");
  datagen->add_option("--synthetic", dg.synthetic, "Use K procedural images instead of --images");
  datagen->add_option("--out", dg.out, "Output directory")->required();
  datagen->add_option("--count", dg.count, "Number of pairs")->required();
  datagen->add_option("--crop", dg.crop, "Crop size in pixels");
  datagen->add_option("--seed", dg.seed, "Base seed");
  datagen->add_option("--config", dg.config, "Run config JSON");

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "Train a model on a generated dataset");
  trainc->add_option("--data", tr.data, "Dataset directory")->required();
  trainc->add_option("--out", tr.out, "Checkpoint path")->required();
  trainc->add_option("--config", tr.config, "Run config JSON");
  trainc->add_option("--loss-csv", tr.loss_csv, "Loss history CSV (default <out>.loss.csv)");

  InferArgs in;
  auto* infer = app.add_subcommand("infer", "Estimate the flow between two images");
  infer->add_option("--ckpt", in.ckpt, "Checkpoint")->required();
  infer->add_option("--source", in.source, "Source image")->required();
  infer->add_option("--target", in.target, "Target image")->required();
  infer->add_option("--out-flow", in.out_flow, "Output .flo")->required();
  infer->add_option("--out-warp", in.out_warp, "Source warped onto the target");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Compute AEPE, PCK and F1-all");
  eval->add_option("--pred", ev.pred, "Predicted .flo file or directory")->required();
  eval->add_option("--gt", ev.gt, "Ground-truth .flo file or directory");
  eval->add_option("--sparse", ev.sparse, "Correspondence list 'tx ty sx sy' per line");
  eval->add_option("--report", ev.report, "Report JSON")->required();

  BenchArgs bn;
  auto* bench = app.add_subcommand("bench", "Time global and local correlation");
  bench->add_option("--sizes", bn.sizes, "Comma-separated square extents");
  bench->add_option("--radius", bn.radius, "Local radius");
  bench->add_option("--repeat", bn.repeat, "Repeats per size");
  bench->add_option("--channels", bn.channels, "Feature channels");
  bench->add_option("--report", bn.report, "Report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*datagen) cmd_datagen(dg);
    if (*trainc) cmd_train(tr);
    if (*infer) cmd_infer(in);
    if (*eval) cmd_eval(ev);
    if (*bench) cmd_bench(bn);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return e.kind() == ErrorKind::kNumeric ? kExitNumeric : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
