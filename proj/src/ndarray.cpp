#include "snpg/ndarray.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <cstring>
#include <sstream>

namespace snpg {

int64_t shape_size(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
NdArray<T>::NdArray(Shape shape, T fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_size(shape_)), fill) {}

template <typename T>
NdArray<T>::NdArray(Shape shape, Uninitialized) : shape_(std::move(shape)) {
  data_.resize(static_cast<size_t>(shape_size(shape_)));
}

template <typename T>
NdArray<T>::NdArray(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (static_cast<int64_t>(data_.size()) != shape_size(shape_)) {
    throw ShapeError("value count " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

template <typename T>
int64_t NdArray<T>::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis out of range for shape " + shape_str(shape_));
  }
  return shape_[static_cast<size_t>(axis)];
}

template <typename T>
int64_t NdArray<T>::inner_size(int axis) const {
  int64_t n = 1;
  for (int i = axis + 1; i < rank(); ++i) n *= shape_[static_cast<size_t>(i)];
  return n;
}

template <typename T>
void NdArray<T>::reshape(Shape shape) {
  if (shape_size(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

template <typename T>
NdArray<T> NdArray<T>::reshaped(Shape shape) const {
  NdArray out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <typename T>
void NdArray<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
void NdArray<T>::release() {
  decltype(data_)().swap(data_);
  shape_.clear();
}

template <typename T>
bool bit_equal(const NdArray<T>& a, const NdArray<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<size_t>(a.size())) == 0;
}

template class NdArray<float>;
template class NdArray<double>;
template class NdArray<int>;
template bool bit_equal(const NdArray<float>&, const NdArray<float>&);
template bool bit_equal(const NdArray<double>&, const NdArray<double>&);

void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace snpg
