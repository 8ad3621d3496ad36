#include "dce/flow_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <vector>

namespace dce {
namespace {

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& buf, size_t pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
  return v;
}

}  // namespace

void write_flow(const std::filesystem::path& path, const Tensor& flow) {
  const Shape s = flow.shape();
  require(s.n == 1 && s.c == 2, ErrorKind::kShape, "write_flow: expected (1,2,H,W), got " + s.str());
  std::string buf;
  buf.reserve(static_cast<size_t>(12 + 8 * s.h * s.w));
  put_u32(buf, std::bit_cast<uint32_t>(kFlowMagic));
  put_u32(buf, static_cast<uint32_t>(static_cast<int32_t>(s.w)));
  put_u32(buf, static_cast<uint32_t>(static_cast<int32_t>(s.h)));
  const Tensor f = flow.dtype() == Dtype::kF32 ? flow : flow.to(Dtype::kF32);
  auto v = f.data<float>();
  const int64_t plane = s.h * s.w;
  for (int64_t i = 0; i < plane; ++i) {
    put_u32(buf, std::bit_cast<uint32_t>(v[i]));
    put_u32(buf, std::bit_cast<uint32_t>(v[plane + i]));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

Tensor read_flow(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(buf.size() >= 12, ErrorKind::kFormat, path.string() + ": flow header truncated");
  require(std::bit_cast<float>(get_u32(buf, 0)) == kFlowMagic, ErrorKind::kFormat, path.string() + ": bad flow magic");
  const auto w = static_cast<int32_t>(get_u32(buf, 4));
  const auto h = static_cast<int32_t>(get_u32(buf, 8));
  require(w > 0 && h > 0, ErrorKind::kFormat, path.string() + ": non-positive flow extents");
  const size_t plane = static_cast<size_t>(w) * static_cast<size_t>(h);
  require(buf.size() == 12 + 8 * plane, ErrorKind::kFormat, path.string() + ": flow payload size mismatch");
  std::vector<float> v(2 * plane);
  for (size_t i = 0; i < plane; ++i) {
    v[i] = std::bit_cast<float>(get_u32(buf, 12 + 8 * i));
    v[plane + i] = std::bit_cast<float>(get_u32(buf, 16 + 8 * i));
  }
  return Tensor::from({1, 2, h, w}, std::move(v));
}

Tensor known_flow_mask(const Tensor& flow) {
  const Shape s = flow.shape();
  require(s.c == 2, ErrorKind::kShape, "known_flow_mask: expected 2 channels, got " + s.str());
  const int64_t plane = s.h * s.w;
  const std::vector<double> v = flow.to_vector();
  std::vector<float> m(static_cast<size_t>(s.n * plane));
  for (int64_t n = 0; n < s.n; ++n) {
    for (int64_t i = 0; i < plane; ++i) {
      const double u = v[(n * 2) * plane + i], w = v[(n * 2 + 1) * plane + i];
      m[n * plane + i] = (std::isfinite(u) && std::isfinite(w) && std::abs(u) < kUnknownFlow && std::abs(w) < kUnknownFlow)
                             ? 1.0f
                             : 0.0f;
    }
  }
  return Tensor::from({s.n, 1, s.h, s.w}, std::move(m));
}

}  // namespace dce
