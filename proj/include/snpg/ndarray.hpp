#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <algorithm>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace snpg {

using Shape = std::vector<int64_t>;

int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Allocator that leaves trivially constructible elements uninitialized on
// value-less construction, so resize() does not touch the memory.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

struct Uninitialized {};
inline constexpr Uninitialized uninitialized{};

// Dense row-major array. Values are owned; copies are deep.
template <typename T>
class NdArray {
 public:
  using value_type = T;

  NdArray() = default;
  explicit NdArray(Shape shape, T fill = T(0));
  // Contents are indeterminate; for outputs that are overwritten in full.
  NdArray(Shape shape, Uninitialized);
  NdArray(Shape shape, std::vector<T> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const;
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Product of the dims strictly after `axis`.
  int64_t inner_size(int axis) const;

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  void reshape(Shape shape);
  NdArray reshaped(Shape shape) const;
  void fill(T value);
  void release();

  template <typename U>
  NdArray<U> cast() const {
    NdArray<U> out(shape_, uninitialized);
    std::copy(data_.begin(), data_.end(), out.data());
    return out;
  }

 private:
  Shape shape_;
  std::vector<T, DefaultInitAllocator<T>> data_;
};

template <typename T>
bool same_shape(const NdArray<T>& a, const NdArray<T>& b) {
  return a.shape() == b.shape();
}

// Bit-level equality of shape and values.
template <typename T>
bool bit_equal(const NdArray<T>& a, const NdArray<T>& b);

// Serves large arrays from the heap and keeps freed memory in the process,
// so the same-sized buffers allocated every training step do not page-fault
// again. Affects the whole process (glibc only; a no-op elsewhere).
void retain_freed_memory();

extern template class NdArray<float>;
extern template class NdArray<double>;
extern template class NdArray<int>;

}  // namespace snpg
