#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dce/flow.hpp"

namespace dce {

enum class TransformKind : uint8_t { kAffine = 0, kHomography = 1, kTps = 2 };

const char* to_string(TransformKind kind);
TransformKind parse_transform_kind(const std::string& name);

// A map from target pixel coordinates to source pixel coordinates.
struct TransformSpec {
  TransformKind kind = TransformKind::kAffine;
  // x' = a0 x + a1 y + a2,  y' = a3 x + a4 y + a5
  std::array<double, 6> affine = {1, 0, 0, 0, 1, 0};
  // Row-major 3x3, bottom-right entry fixed to 1.
  std::array<double, 9> homography = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  // Thin-plate spline: control points (target coords), their images, and the
  // solved coefficients. Evaluation uses coordinates divided by tps_scale.
  std::vector<std::array<double, 2>> tps_control;
  std::vector<std::array<double, 2>> tps_target;
  std::vector<double> tps_wx, tps_wy;    // K kernel weights per axis
  std::array<double, 3> tps_ax{}, tps_ay{};  // affine part: c + cx * x + cy * y
  double tps_scale = 1.0;

  std::array<double, 2> apply(double x, double y) const;

  static TransformSpec identity();
  static TransformSpec translation(double dx, double dy);
  static TransformSpec from_homography(const std::array<double, 9>& h);
  // Fits a TPS through control -> target (both in pixels).
  static TransformSpec fit_tps(const std::vector<std::array<double, 2>>& control,
                               const std::vector<std::array<double, 2>>& target, double scale, double regularization);
};

struct TransformConfig {
  std::vector<TransformKind> kinds = {TransformKind::kAffine, TransformKind::kHomography, TransformKind::kTps};
  double rotation_deg = 15.0;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double shear = 0.15;
  double translation = 0.10;    // fraction of the crop
  double corner_jitter = 0.125;  // homography, fraction of the crop
  double tps_jitter = 0.10;     // fraction of the crop
  int tps_grid = 3;
  double tps_regularization = 1e-6;
  int max_retries = 32;
};

void validate(const TransformConfig& config);

// Deterministic in (seed, config, extents). The kind is drawn uniformly from
// config.kinds. Degenerate draws are redrawn up to config.max_retries times.
TransformSpec sample_transform(uint64_t seed, const TransformConfig& config, int64_t height, int64_t width);

struct FlowWithMask {
  FlowField flow;  // (1, 2, H, W) in the H x W frame, float32
  Tensor mask;     // (1, 1, H, W), 1 where the mapped point lies in the source
};

FlowWithMask transform_to_flow(const TransformSpec& spec, int64_t height, int64_t width);

struct SamplePair {
  Tensor source;  // (1, 3, crop, crop) in [0, 1]
  Tensor target;
  FlowField gt_flow;
  Tensor valid_mask;
  TransformSpec spec;
};

// The source is the centered crop of `image`; target(x) = image(T(x) + offset),
// zero outside the image. Rendering samples at the stored float32 flow so that
// warping the source by gt_flow reproduces the target on valid pixels.
SamplePair render_pair(const Tensor& image, const TransformSpec& spec, int64_t crop);

// Procedural RGB texture in [0, 1]: layered value noise plus soft shapes.
Tensor synthetic_image(uint64_t seed, int64_t height, int64_t width);

// Generates `count` pairs from the given images (cycled in order).
std::vector<SamplePair> generate_pairs(const std::vector<Tensor>& images, int64_t count, int64_t crop, uint64_t seed,
                                       const TransformConfig& config);

struct ManifestRecord {
  std::string image;
  uint64_t seed = 0;
  TransformKind kind = TransformKind::kAffine;
};

// One record per line: "<image path> <seed> <kind>".
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

inline constexpr const char* kManifestName = "manifest.txt";
std::string pair_file(int64_t index, const std::string& suffix);

// Writes pair files (PPM images, .flo flow, PGM mask) and the manifest.
void write_dataset(const std::filesystem::path& dir, const std::vector<SamplePair>& pairs,
                   const std::vector<ManifestRecord>& records);
std::vector<SamplePair> load_dataset(const std::filesystem::path& dir);

}  // namespace dce
