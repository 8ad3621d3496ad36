#include "dce/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace dce {
namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

uint8_t quantize(double v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

Tensor from_bytes(const std::vector<uint8_t>& px, int64_t h, int64_t w, int64_t channels, bool keep_gray) {
  const int64_t out_c = (channels == 1 && !keep_gray) ? 3 : channels;
  std::vector<float> v(static_cast<size_t>(out_c * h * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < out_c; ++c) {
        const int64_t src_c = channels == 1 ? 0 : c;
        v[(c * h + y) * w + x] = static_cast<float>(px[(y * w + x) * channels + src_c]) / 255.0f;
      }
    }
  }
  return Tensor::from({1, out_c, h, w}, std::move(v));
}

// Skips whitespace and '#' comments in a netpbm header.
int64_t header_int(std::istream& in, const std::string& origin) {
  int ch = in.peek();
  while (ch == '#' || std::isspace(ch)) {
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    ch = in.peek();
  }
  int64_t v = -1;
  in >> v;
  require(in.good() && v >= 0, ErrorKind::kFormat, origin + ": malformed netpbm header");
  return v;
}

Tensor read_netpbm(const std::filesystem::path& path, bool keep_gray) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  require(magic == "P6" || magic == "P5", ErrorKind::kFormat, path.string() + ": only binary P6/P5 netpbm is supported");
  const int64_t channels = magic == "P6" ? 3 : 1;
  const int64_t w = header_int(in, path.string());
  const int64_t h = header_int(in, path.string());
  const int64_t maxval = header_int(in, path.string());
  require(maxval == 255, ErrorKind::kFormat, path.string() + ": only 8-bit netpbm is supported");
  in.get();
  std::vector<uint8_t> px(static_cast<size_t>(w * h * channels));
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  require(in.gcount() == static_cast<std::streamsize>(px.size()), ErrorKind::kFormat, path.string() + ": truncated pixel data");
  return from_bytes(px, h, w, channels, keep_gray);
}

struct FileCloser {
  void operator()(FILE* f) const { std::fclose(f); }
};

Tensor read_png(const std::filesystem::path& path, bool keep_gray) {
  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  require(fp != nullptr, ErrorKind::kIo, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kFormat, path.string() + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_strip_alpha(png);
  png_set_expand(png);
  if (!keep_gray) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int64_t w = png_get_image_width(png, info);
  const int64_t h = png_get_image_height(png, info);
  const int64_t channels = png_get_channels(png, info);
  std::vector<uint8_t> px(static_cast<size_t>(w * h * channels));
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t y = 0; y < h; ++y) rows[y] = px.data() + y * w * channels;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return from_bytes(px, h, w, channels, keep_gray);
}

std::vector<uint8_t> to_bytes(const Tensor& image) {
  const Shape s = image.shape();
  require(s.n == 1 && (s.c == 1 || s.c == 3), ErrorKind::kShape, "write_image: expected (1, 1|3, H, W), got " + s.str());
  std::vector<uint8_t> px(static_cast<size_t>(s.c * s.h * s.w));
  for (int64_t y = 0; y < s.h; ++y) {
    for (int64_t x = 0; x < s.w; ++x) {
      for (int64_t c = 0; c < s.c; ++c) px[(y * s.w + x) * s.c + c] = quantize(image.at(0, c, y, x));
    }
  }
  return px;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  const Shape s = image.shape();
  std::vector<uint8_t> px = to_bytes(image);
  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  require(fp != nullptr, ErrorKind::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, "PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.w), static_cast<png_uint_32>(s.h), 8,
               s.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t y = 0; y < s.h; ++y) png_write_row(png, px.data() + y * s.w * s.c);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_netpbm(const std::filesystem::path& path, const Tensor& image) {
  const Shape s = image.shape();
  std::vector<uint8_t> px = to_bytes(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out << (s.c == 3 ? "P6" : "P5") << "\n" << s.w << " " << s.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  require(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

}  // namespace

Tensor read_image(const std::filesystem::path& path, bool keep_gray) {
  std::ifstream probe(path, std::ios::binary);
  require(probe.good(), ErrorKind::kIo, "cannot open " + path.string());
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  probe.close();
  if (png_sig_cmp(sig, 0, 8) == 0) return read_png(path, keep_gray);
  return read_netpbm(path, keep_gray);
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  if (lower_ext(path) == ".png") {
    write_png(path, image);
  } else {
    write_netpbm(path, image);
  }
}

Tensor read_mask(const std::filesystem::path& path) {
  Tensor raw = read_image(path, true);
  const Shape s = raw.shape();
  std::vector<float> v(static_cast<size_t>(s.h * s.w));
  for (int64_t y = 0; y < s.h; ++y) {
    for (int64_t x = 0; x < s.w; ++x) v[y * s.w + x] = raw.at(0, 0, y, x) > 0.0 ? 1.0f : 0.0f;
  }
  return Tensor::from({1, 1, s.h, s.w}, std::move(v));
}

void write_mask(const std::filesystem::path& path, const Tensor& mask) {
  const Shape s = mask.shape();
  require(s.n == 1 && s.c == 1, ErrorKind::kShape, "write_mask: expected (1,1,H,W), got " + s.str());
  write_netpbm(path, mask);
}

}  // namespace dce
