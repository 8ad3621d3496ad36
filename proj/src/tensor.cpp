#include "dce/tensor.hpp"

#include <algorithm>

namespace dce {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kValue: return "value error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kNumeric: return "numeric error";
  }
  return "error";
}

const char* to_string(Dtype dtype) { return dtype == Dtype::kF32 ? "float32" : "float64"; }

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

namespace {

void check_extents(const Shape& shape) {
  require(shape.n >= 0 && shape.c >= 0 && shape.h >= 0 && shape.w >= 0, ErrorKind::kShape,
          "negative extent in shape " + shape.str());
}

}  // namespace

Tensor Tensor::zeros(Shape shape, Dtype dtype) { return full(shape, 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, Dtype dtype) {
  check_extents(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  const auto count = static_cast<size_t>(shape.numel());
  if (dtype == Dtype::kF32) {
    impl->data = std::vector<float>(count, static_cast<float>(value));
  } else {
    impl->data = std::vector<double>(count, value);
  }
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
  check_extents(shape);
  require(static_cast<int64_t>(values.size()) == shape.numel(), ErrorKind::kShape,
          "value count " + std::to_string(values.size()) + " does not match shape " + shape.str());
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  check_extents(shape);
  require(static_cast<int64_t>(values.size()) == shape.numel(), ErrorKind::kShape,
          "value count " + std::to_string(values.size()) + " does not match shape " + shape.str());
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, Dtype dtype) { return full({1, 1, 1, 1}, value, dtype); }

double Tensor::at(int64_t n, int64_t c, int64_t h, int64_t w) const {
  const auto& s = shape();
  require(n >= 0 && n < s.n && c >= 0 && c < s.c && h >= 0 && h < s.h && w >= 0 && w < s.w, ErrorKind::kShape,
          "index out of range for shape " + s.str());
  const auto i = static_cast<size_t>(index4(s, n, c, h, w));
  return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, impl().data);
}

double Tensor::item() const {
  require(numel() == 1, ErrorKind::kShape, "item() on tensor of shape " + shape().str());
  return at(0, 0, 0, 0);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, impl().data);
}

Tensor& Tensor::set_requires_grad(bool value) {
  impl().requires_grad = value;
  return *this;
}

Tensor Tensor::grad() const {
  const auto& im = impl();
  if (!im.grad) return zeros(im.shape, dtype());
  auto out = std::make_shared<TensorImpl>();
  out->shape = im.shape;
  out->data = *im.grad;
  return Tensor(std::move(out));
}

void Tensor::zero_grad() {
  auto& im = impl();
  if (im.grad) std::visit([](auto& v) { std::fill(v.begin(), v.end(), 0); }, *im.grad);
}

void Tensor::clear_grad() { impl().grad.reset(); }

Tensor Tensor::clone() const {
  auto out = std::make_shared<TensorImpl>();
  out->shape = impl().shape;
  out->data = impl().data;
  return Tensor(std::move(out));
}

Tensor Tensor::to(Dtype dtype) const {
  if (dtype == this->dtype()) return clone();
  auto out = std::make_shared<TensorImpl>();
  out->shape = impl().shape;
  std::visit(
      [&](const auto& v) {
        if (dtype == Dtype::kF32) {
          out->data = std::vector<float>(v.begin(), v.end());
        } else {
          out->data = std::vector<double>(v.begin(), v.end());
        }
      },
      impl().data);
  return Tensor(std::move(out));
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  require(a.dtype() == b.dtype(), ErrorKind::kValue,
          std::string(op) + ": mixed dtypes " + to_string(a.dtype()) + " and " + to_string(b.dtype()));
}

}  // namespace dce
