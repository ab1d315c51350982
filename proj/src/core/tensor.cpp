#include "mvod/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mvod {

std::string Shape::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << h << "x" << w;
  return os.str();
}

std::string shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  std::ostringstream os;
  os << op << ": shape mismatch " << a.str() << " vs " << b.str();
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape) {
  if (!shape.valid()) throw ShapeError("tensor: invalid shape " + shape.str());
  data_.assign(shape.numel(), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(shape), data_(std::move(data)) {
  if (!shape.valid()) throw ShapeError("tensor: invalid shape " + shape.str());
  if (data_.size() != shape.numel()) {
    std::ostringstream os;
    os << "tensor: shape " << shape.str() << " needs " << shape.numel()
       << " values, got " << data_.size();
    throw ShapeError(os.str());
  }
}

template <typename T>
void BasicTensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape s) const {
  if (s.numel() != shape_.numel()) throw ShapeError(shape_mismatch("reshape", shape_, s));
  return BasicTensor(s, data_);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::slice_batch(int b) const {
  if (b < 0 || b >= shape_.n) throw ShapeError("slice_batch: index out of range");
  const std::size_t per = shape_.numel() / static_cast<std::size_t>(shape_.n);
  std::vector<T> part(data_.begin() + static_cast<std::ptrdiff_t>(per * b),
                      data_.begin() + static_cast<std::ptrdiff_t>(per * (b + 1)));
  return BasicTensor(Shape{1, shape_.c, shape_.h, shape_.w}, std::move(part));
}

template <typename T>
BasicFlowField<T>::BasicFlowField(BasicTensor<T> t) : t_(std::move(t)) {
  if (t_.c() != 2) throw ShapeError("flow field needs 2 channels, got " + t_.shape().str());
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError(shape_mismatch("max_abs_diff", a.shape(), b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicFlowField<float>;
template class BasicFlowField<double>;
template bool all_finite(const BasicTensor<float>&);
template bool all_finite(const BasicTensor<double>&);
template double max_abs_diff(const BasicTensor<float>&, const BasicTensor<float>&);
template double max_abs_diff(const BasicTensor<double>&, const BasicTensor<double>&);

}  // namespace mvod
