#include "dce/bench.hpp"

#include <algorithm>
#include <chrono>

#include <json.hpp>

#include "dce/correlation.hpp"
#include "dce/random.hpp"

namespace dce {
namespace {

Tensor random_features(Rng& rng, int64_t c, int64_t s) {
  std::vector<float> v(static_cast<size_t>(c * s * s));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return Tensor::from({1, c, s, s}, std::move(v));
}

template <class Fn>
double median_ms(int repeat, Fn&& fn) {
  std::vector<double> times;
  for (int r = 0; r < repeat; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const size_t k = times.size();
  return k % 2 == 1 ? times[k / 2] : 0.5 * (times[k / 2 - 1] + times[k / 2]);
}

}  // namespace

std::vector<BenchRow> run_correlation_bench(const BenchOptions& o) {
  require(!o.sizes.empty(), ErrorKind::kValue, "bench: no sizes given");
  require(o.repeat >= 1 && o.radius >= 0 && o.channels >= 1, ErrorKind::kValue,
          "bench: repeat >= 1, radius >= 0 and channels >= 1 required");
  Rng rng(o.seed);
  std::vector<BenchRow> rows;
  for (int64_t s : o.sizes) {
    require(s >= 1, ErrorKind::kValue, "bench: sizes must be positive");
    const Tensor a = random_features(rng, o.channels, s);
    const Tensor b = random_features(rng, o.channels, s);
    BenchRow row{s, o.channels, global_correlation_macs(s, s, o.channels), local_correlation_macs(s, s, o.radius, o.channels)};
    // The global kernel writes into one preallocated volume so the timing
    // excludes page faults on the (s^2 x s^2) output.
    Tensor volume = global_correlation(a, b).volume;
    row.global_ms = median_ms(o.repeat, [&] { global_correlation_into(a, b, volume); });
    local_correlation(a, b, o.radius);
    row.local_ms = median_ms(o.repeat, [&] { local_correlation(a, b, o.radius); });
    rows.push_back(row);
  }
  return rows;
}

std::string bench_report_json(const BenchOptions& o, const std::vector<BenchRow>& rows) {
  nlohmann::ordered_json j;
  j["radius"] = o.radius;
  j["repeat"] = o.repeat;
  j["channels"] = o.channels;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    list.push_back({{"size", r.size},
                    {"global_macs", r.global_macs},
                    {"local_macs", r.local_macs},
                    {"global_ms", r.global_ms},
                    {"local_ms", r.local_ms}});
  }
  j["results"] = list;
  return j.dump(2);
}

}  // namespace dce
