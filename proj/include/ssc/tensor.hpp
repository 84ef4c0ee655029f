#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ssc/common.hpp"

// Dense row-major tensors with reverse-mode gradients.
//
// A Tensor is a handle to an immutable value node. Ops produce fresh nodes
// and, while gradients are enabled, record parent links plus a backward
// closure; Tensor::backward() on a scalar output replays the recorded ops
// once each, in reverse topological order, accumulating into .grad buffers.
// Leaves created with requires_grad participate as parameters.
//
// Binary ops demand exact shape equality (scalar variants are separate ops);
// there is no broadcasting. Every op checks its output for NaN/Inf and
// throws NumericError on the first offender.

namespace ssc {

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;  // sized lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  int64_t numel() const { return shape_numel(shape); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(static_cast<size_t>(numel()), T(0));
  }
};

}  // namespace detail

bool grad_enabled();
void set_grad_enabled(bool on);

// Scoped autodiff off-switch for inference / finite-difference passes.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<T> data);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  int64_t dim(size_t axis) const;
  size_t ndim() const { return shape().size(); }

  const std::vector<T>& data() const;
  T operator[](int64_t flat) const { return data()[static_cast<size_t>(flat)]; }
  T at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);  // leaves only

  bool has_grad() const;
  const std::vector<T>& grad() const;
  void zero_grad();

  // Reverse accumulation from a scalar output.
  void backward();

  // In-place raw update for optimizers; only valid on leaves.
  void apply_update(const std::function<void(std::vector<T>&)>& fn);

  std::shared_ptr<Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node> node_;
};

// -- elementwise and scalar ops ----------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> relu(const Tensor<T>& a);  // relu'(0) = 0

// -- linear algebra ------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);  // [MxK]x[KxN]

// Numerically stable (max-subtracted) softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis);

// -- structural ops ------------------------------------------------------------

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a);  // [MxN] -> [NxM]

// New leading axis over equal-shaped inputs.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts);

// New second axis: parts of shape [C, rest...] -> [C, N, rest...].
template <typename T>
Tensor<T> stack_axis1(const std::vector<Tensor<T>>& parts);

// Contiguous sub-range [start, start+len) along `axis`.
template <typename T>
Tensor<T> narrow(const Tensor<T>& a, int axis, int64_t start, int64_t len);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);  // aliases the data

// -- reductions ----------------------------------------------------------------

template <typename T> Tensor<T> sum_all(const Tensor<T>& a);   // -> shape [1]
template <typename T> Tensor<T> mean_last2(const Tensor<T>& a);

// Throws NumericError naming `what` if any element is non-finite.
template <typename T>
void check_finite(const std::vector<T>& v, const char* what);

}  // namespace ssc
