#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "dce/error.hpp"

namespace dce {

enum class Dtype : uint8_t { kF32 = 0, kF64 = 1 };

const char* to_string(Dtype dtype);

// Extents in (batch, channel, height, width) order.
struct Shape {
  int64_t n = 0;
  int64_t c = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t numel() const { return n * c * h * w; }
  int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

template <class T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <Scalar T>
constexpr Dtype dtype_of() {
  return std::is_same_v<T, float> ? Dtype::kF32 : Dtype::kF64;
}

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

struct TensorImpl {
  Shape shape;
  Buffer data;
  bool requires_grad = false;
  std::unique_ptr<Buffer> grad;
};

// Dense 4-D array with shared ownership. Copies of a Tensor alias the same
// storage; forward ops always allocate fresh outputs, so values are treated as
// immutable once an op has consumed them. Only the gradient buffer (and
// parameters, inside the optimizer) are written in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, Dtype dtype = Dtype::kF32);
  static Tensor full(Shape shape, double value, Dtype dtype = Dtype::kF32);
  static Tensor from(Shape shape, std::vector<float> values);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value, Dtype dtype = Dtype::kF32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  Dtype dtype() const { return impl().data.index() == 0 ? Dtype::kF32 : Dtype::kF64; }
  int64_t numel() const { return shape().numel(); }

  template <Scalar T>
  std::span<const T> data() const {
    return std::get<std::vector<T>>(checked<T>().data);
  }
  // Writable view. Reserved for constructors, initializers and the optimizer.
  template <Scalar T>
  std::span<T> mutable_data() {
    return std::get<std::vector<T>>(checked<T>().data);
  }

  double at(int64_t n, int64_t c, int64_t h, int64_t w) const;
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const { return defined() && impl().requires_grad; }
  Tensor& set_requires_grad(bool value);

  bool has_grad() const { return defined() && impl().grad != nullptr; }
  // Gradient buffer, allocated as zeros on first access.
  template <Scalar T>
  std::span<T> grad_data() const {
    auto& im = checked<T>();
    if (!im.grad) im.grad = std::make_unique<Buffer>(std::vector<T>(static_cast<size_t>(im.shape.numel()), T(0)));
    return std::get<std::vector<T>>(*im.grad);
  }
  // Snapshot of the gradient as a standalone tensor (zeros if absent).
  Tensor grad() const;
  void zero_grad();
  void clear_grad();

  // Same values in fresh storage, detached from any gradient.
  Tensor clone() const;
  Tensor to(Dtype dtype) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  TensorImpl& impl() const {
    require(impl_ != nullptr, ErrorKind::kValue, "use of an undefined tensor");
    return *impl_;
  }
  template <Scalar T>
  TensorImpl& checked() const {
    auto& im = impl();
    require(std::holds_alternative<std::vector<T>>(im.data), ErrorKind::kValue,
            std::string("dtype mismatch: tensor holds ") + to_string(dtype()));
    return im;
  }

  std::shared_ptr<TensorImpl> impl_;
};

// Invokes fn with a value-initialized float or double matching dtype.
template <class Fn>
decltype(auto) dispatch(Dtype dtype, Fn&& fn) {
  if (dtype == Dtype::kF32) return fn(float{});
  return fn(double{});
}

inline int64_t index4(const Shape& s, int64_t n, int64_t c, int64_t h, int64_t w) {
  return ((n * s.c + c) * s.h + h) * s.w + w;
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op);

}  // namespace dce
