#include "dce/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace dce {
namespace {

constexpr char kMagic[4] = {'D', 'C', 'E', '1'};

class Writer {
 public:
  void bytes(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <class U>
  void le(U v) {
    for (size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  void bytes(void* p, size_t n) {
    need(n);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(size_t n) const {
    require(pos_ + n <= data_.size(), ErrorKind::kFormat,
            "checkpoint " + origin_ + " truncated at byte " + std::to_string(pos_));
  }
  std::string data_;
  std::string origin_;
  size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor meta(double v) { return Tensor::scalar(v, Dtype::kF64); }

}  // namespace

void write_checkpoint_entries(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<uint32_t>(kCheckpointVersion);
  w.le<uint32_t>(static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    require(e.name.size() <= 0xffff, ErrorKind::kValue, "checkpoint entry name too long: " + e.name);
    w.le<uint16_t>(static_cast<uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.le<uint8_t>(static_cast<uint8_t>(e.value.dtype()));
    w.le<uint8_t>(4);
    const Shape s = e.value.shape();
    for (int64_t d : {s.n, s.c, s.h, s.w}) w.le<uint32_t>(static_cast<uint32_t>(d));
    if (e.value.dtype() == Dtype::kF32) {
      for (float v : e.value.data<float>()) w.le<uint32_t>(std::bit_cast<uint32_t>(v));
    } else {
      for (double v : e.value.data<double>()) w.le<uint64_t>(std::bit_cast<uint64_t>(v));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
  require(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint_entries(const std::filesystem::path& path) {
  Reader r(read_file(path), path.string());
  char magic[4];
  r.bytes(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorKind::kFormat, "checkpoint " + path.string() + ": bad magic");
  const auto version = r.le<uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::kFormat,
          "checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  const auto count = r.le<uint32_t>();
  std::vector<CheckpointEntry> entries;
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name.resize(r.le<uint16_t>());
    r.bytes(e.name.data(), e.name.size());
    const auto dtype = r.le<uint8_t>();
    require(dtype <= 1, ErrorKind::kFormat, "checkpoint entry " + e.name + ": unknown dtype code " + std::to_string(dtype));
    const auto ndim = r.le<uint8_t>();
    require(ndim >= 1 && ndim <= 4, ErrorKind::kFormat, "checkpoint entry " + e.name + ": ndim must be 1..4");
    int64_t dims[4] = {1, 1, 1, 1};
    for (int d = 4 - ndim; d < 4; ++d) dims[d] = r.le<uint32_t>();
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    if (dtype == 0) {
      std::vector<float> v(static_cast<size_t>(s.numel()));
      for (auto& x : v) x = std::bit_cast<float>(r.le<uint32_t>());
      e.value = Tensor::from(s, std::move(v));
    } else {
      std::vector<double> v(static_cast<size_t>(s.numel()));
      for (auto& x : v) x = std::bit_cast<double>(r.le<uint64_t>());
      e.value = Tensor::from(s, std::move(v));
    }
    entries.push_back(std::move(e));
  }
  require(r.done(), ErrorKind::kFormat, "checkpoint " + path.string() + ": trailing bytes after last entry");
  return entries;
}

void save_checkpoint(const GLUNetModel& model, const std::filesystem::path& path) {
  const auto& c = model.config;
  std::vector<CheckpointEntry> entries = {
      {"meta.lnet_h", meta(static_cast<double>(c.lnet_h))},
      {"meta.lnet_w", meta(static_cast<double>(c.lnet_w))},
      {"meta.radius_l2", meta(c.local_radius[0])},
      {"meta.radius_l3", meta(c.local_radius[1])},
      {"meta.radius_l4", meta(c.local_radius[2])},
      {"meta.cyclic_consistency", meta(c.cyclic_consistency ? 1 : 0)},
      {"meta.iterative_refinement", meta(c.iterative_refinement ? 1 : 0)},
      {"meta.cost_norm_order", meta(c.cost_norm_order == CostNormOrder::kNormalizeThenRelu ? 0 : 1)},
      {"meta.backbone_variant", meta(static_cast<double>(c.backbone.variant))},
      {"meta.refine_l2", meta(c.refine_l2 ? 1 : 0)},
      {"meta.refine_l4", meta(c.refine_l4 ? 1 : 0)},
  };
  for (const auto& [name, t] : model.parameters()) entries.push_back({name, t});
  for (const auto& [name, t] : model.buffers()) entries.push_back({name, t});
  write_checkpoint_entries(path, entries);
}

GLUNetModel load_checkpoint(const std::filesystem::path& path) {
  std::map<std::string, Tensor> by_name;
  for (auto& e : read_checkpoint_entries(path)) by_name[e.name] = e.value;
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    require(it != by_name.end(), ErrorKind::kFormat, "checkpoint " + path.string() + ": missing entry " + name);
    return it->second;
  };
  auto meta_int = [&](const std::string& name) { return static_cast<int64_t>(get("meta." + name).item()); };
  auto out_channels = [&](const std::string& prefix, size_t count) {
    std::vector<int64_t> ch;
    for (size_t i = 0; i < count; ++i) ch.push_back(get(prefix + std::to_string(i) + ".weight").shape().n);
    return ch;
  };

  ModelConfig c;
  c.lnet_h = meta_int("lnet_h");
  c.lnet_w = meta_int("lnet_w");
  c.local_radius = {static_cast<int>(meta_int("radius_l2")), static_cast<int>(meta_int("radius_l3")),
                    static_cast<int>(meta_int("radius_l4"))};
  c.cyclic_consistency = meta_int("cyclic_consistency") != 0;
  c.iterative_refinement = meta_int("iterative_refinement") != 0;
  c.cost_norm_order = meta_int("cost_norm_order") == 0 ? CostNormOrder::kNormalizeThenRelu : CostNormOrder::kReluThenNormalize;
  const auto variant = meta_int("backbone_variant");
  require(variant == 0 || variant == 1, ErrorKind::kFormat, "checkpoint: unknown backbone variant");
  c.backbone.variant = static_cast<BackboneVariant>(variant);
  c.refine_l2 = meta_int("refine_l2") != 0;
  c.refine_l4 = meta_int("refine_l4") != 0;
  c.backbone.channels = out_channels("backbone.stage", 5);
  c.decoder_channels = out_channels("decoder_l3.block", 5);
  if (c.refine_l2) {
    c.refinement_channels = out_channels("refinement_l2.block", 6);
  } else if (c.refine_l4) {
    c.refinement_channels = out_channels("refinement_l4.block", 6);
  }

  GLUNetModel model = GLUNetModel::create(c, 0);
  auto assign = [&](ModelParams list) {
    for (auto& [name, t] : list) {
      const Tensor& src = get(name);
      require(src.shape() == t.shape(), ErrorKind::kFormat,
              "checkpoint entry " + name + " has shape " + src.shape().str() + ", model expects " + t.shape().str());
      require(src.dtype() == t.dtype(), ErrorKind::kFormat, "checkpoint entry " + name + " has unexpected dtype");
      dispatch(t.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto dst = t.mutable_data<T>();
        auto values = src.data<T>();
        std::copy(values.begin(), values.end(), dst.begin());
      });
    }
  };
  assign(model.parameters());
  assign(model.buffers());
  return model;
}

}  // namespace dce
