#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvod {

/// Dense 4-D extent in (batch, channel, height, width) order.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }
  bool same_spatial(const Shape& o) const { return h == o.h && w == o.w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Thrown whenever operand shapes are inconsistent. The message names the
/// offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_mismatch(const char* op, const Shape& a, const Shape& b);

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::size_t offset(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) *
               shape_.w +
           x;
  }
  T& operator()(int b, int ch, int y, int x) { return data_[offset(b, ch, y, x)]; }
  const T& operator()(int b, int ch, int y, int x) const {
    return data_[offset(b, ch, y, x)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* plane(int b, int ch) { return data_.data() + offset(b, ch, 0, 0); }
  const T* plane(int b, int ch) const { return data_.data() + offset(b, ch, 0, 0); }

  void fill(T v);

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  /// Same data viewed under a new shape with identical element count.
  BasicTensor reshaped(Shape s) const;

  /// Sample `b` as a standalone batch-1 tensor.
  BasicTensor slice_batch(int b) const;

  bool operator==(const BasicTensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Two-channel displacement field: channel 0 = dx, channel 1 = dy, in
/// pixels of the field's own grid.
template <typename T>
class BasicFlowField {
 public:
  BasicFlowField() = default;
  explicit BasicFlowField(BasicTensor<T> t);
  static BasicFlowField zeros(int n, int h, int w) {
    return BasicFlowField(BasicTensor<T>(Shape{n, 2, h, w}));
  }

  const BasicTensor<T>& tensor() const { return t_; }
  BasicTensor<T>& tensor() { return t_; }
  int n() const { return t_.n(); }
  int h() const { return t_.h(); }
  int w() const { return t_.w(); }
  const Shape& shape() const { return t_.shape(); }

  T dx(int b, int y, int x) const { return t_(b, 0, y, x); }
  T dy(int b, int y, int x) const { return t_(b, 1, y, x); }

 private:
  BasicTensor<T> t_{Shape{1, 2, 1, 1}};
};

using FlowField = BasicFlowField<float>;
using FlowFieldD = BasicFlowField<double>;

template <typename T>
bool all_finite(const BasicTensor<T>& t);

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template class BasicFlowField<float>;
extern template class BasicFlowField<double>;

}  // namespace mvod
