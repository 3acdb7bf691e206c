#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "auxue/error.hpp"

namespace auxue::ad {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace detail {

// Leaves elements default-initialized (i.e. indeterminate for double) on
// resize / sized construction; buffers that are fully overwritten skip the
// zero fill.
template <class T>
struct DefaultInitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  template <class U>
  void construct(U* p) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

// Dense row-major array of doubles. Rank 0 is a scalar; the library works
// almost exclusively with rank-2 [rows x cols] tensors.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  Tensor(Shape shape, const std::vector<double>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("Tensor", to_string(shape_),
                       "[" + std::to_string(data_.size()) + " values]");
    }
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor full(Shape shape, double v) {
    Tensor t;
    t.data_ = Storage(element_count(shape), v);
    t.shape_ = std::move(shape);
    return t;
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

  // Contents indeterminate; the caller must overwrite every element.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    t.data_ = Storage(element_count(shape));
    t.shape_ = std::move(shape);
    return t;
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  // Column vector [n x 1].
  static Tensor column(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor({n, 1}, std::move(data));
  }

  // Row vector [1 x n].
  static Tensor row(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor({1, n}, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  std::size_t rows() const {
    require_matrix("rows");
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix("cols");
    return shape_[1];
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  std::vector<double> values() const { return {data_.begin(), data_.end()}; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  double item() const {
    if (!is_scalar()) {
      throw ContractError("Tensor::item on non-scalar tensor " +
                          to_string(shape_));
    }
    return data_[0];
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  void require_matrix(const char* what) const {
    if (shape_.size() != 2) {
      throw ContractError(std::string("Tensor::") + what +
                          " requires a rank-2 tensor, got " +
                          to_string(shape_));
    }
  }

  using Storage = std::vector<double, detail::DefaultInitAllocator<double>>;

  Shape shape_;
  Storage data_;
};

}  // namespace auxue::ad
