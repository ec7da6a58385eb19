#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "moeamc/errors.hpp"

namespace moeamc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

template <class T>
struct TensorData {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first touched
  bool requires_grad = false;
};

// Shared-ownership handle to an n-d row-major array. Copying a Tensor copies
// the handle, not the storage; ops that need fresh storage allocate new nodes.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : d_(std::make_shared<TensorData<T>>()) {
    d_->shape = std::move(shape);
    d_->value.assign(shape_size(d_->shape), fill);
  }

  static Tensor from(Shape shape, std::vector<T> data) {
    if (shape_size(shape) != data.size()) {
      throw ValidationError("tensor: data size " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(data);
    return t;
  }

  static Tensor scalar(T v) { return from({}, {v}); }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape[i]; }
  std::size_t size() const { return d_->value.size(); }

  // Constness is shallow, as for any shared-ownership handle: a const Tensor
  // is a const handle to mutable storage. Backward closures rely on this to
  // scatter gradients through by-value captures.
  T* data() const { return d_->value.data(); }
  std::vector<T>& values() const { return d_->value; }

  T& operator[](std::size_t i) const { return d_->value[i]; }

  T item() const {
    if (size() != 1) throw ValidationError("item(): tensor is not scalar, shape " + shape_str(shape()));
    return d_->value[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    d_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !d_->grad.empty(); }

  // Zero-filled on first access so unreached tensors read as zero gradient.
  std::vector<T>& grad() const {
    if (d_->grad.empty()) d_->grad.assign(d_->value.size(), T(0));
    return d_->grad;
  }

  void zero_grad() const { d_->grad.assign(d_->value.size(), T(0)); }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  std::shared_ptr<TensorData<T>> impl() const { return d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (const T& v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(op) + ": non-finite value in output");
    }
  }
}

}  // namespace moeamc
