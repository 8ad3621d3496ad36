#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dce {

struct BenchOptions {
  std::vector<int64_t> sizes = {16, 32, 64};  // square feature extents
  int radius = 4;
  int repeat = 5;
  int64_t channels = 64;
  uint64_t seed = 0;
};

struct BenchRow {
  int64_t size = 0;
  int64_t channels = 0;
  int64_t global_macs = 0;
  int64_t local_macs = 0;
  double global_ms = 0.0;  // median over repeats
  double local_ms = 0.0;
};

std::vector<BenchRow> run_correlation_bench(const BenchOptions& options);
std::string bench_report_json(const BenchOptions& options, const std::vector<BenchRow>& rows);

}  // namespace dce
