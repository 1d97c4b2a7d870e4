#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace embattack::numerics {

using Shape = std::vector<std::size_t>;

// Cache-line aligned allocation. Vectorized reductions start at an aligned
// element, so a fixed base alignment keeps their summation order, and hence
// every result bit, independent of where the heap places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major array of doubles with an optional gradient buffer.
//
// Tensor is a handle: copies share storage, so an op's output recorded on a
// Tape and the caller's copy see the same gradient. Use clone() for a deep
// copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, Buffer data, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<double> data, bool requires_grad = false);
  Tensor(Shape shape, const std::vector<double>& data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  bool defined() const { return static_cast<bool>(impl_); }

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero gradient on first use.
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  // Deep copy of shape and values; the copy carries no gradient.
  Tensor clone(bool requires_grad = false) const;

  bool is_same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Storage {
    Shape shape;
    Buffer data;
    Buffer grad;
    bool requires_grad = false;
  };

  std::shared_ptr<Storage> impl_;
};

}  // namespace embattack::numerics
