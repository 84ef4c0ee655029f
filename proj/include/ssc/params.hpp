#pragma once

#include <string>
#include <vector>

#include "ssc/rng.hpp"
#include "ssc/tensor.hpp"

namespace ssc {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;  // shares the underlying leaf node with the owning module
};

template <typename T>
using ParamList = std::vector<Param<T>>;

// Kaiming-uniform fan-in leaf: U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
Tensor<T> kaiming_leaf(Shape shape, int64_t fan_in, Rng& rng, bool requires_grad = true) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  const int64_t n = shape_numel(shape);
  std::vector<T> data(static_cast<size_t>(n));
  for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  auto t = Tensor<T>::from(std::move(shape), std::move(data));
  t.set_requires_grad(requires_grad);
  return t;
}

template <typename T>
Tensor<T> zero_leaf(Shape shape, bool requires_grad = true) {
  auto t = Tensor<T>::zeros(std::move(shape));
  t.set_requires_grad(requires_grad);
  return t;
}

template <typename T>
Tensor<T> const_leaf(Shape shape, T value, bool requires_grad = true) {
  auto t = Tensor<T>::full(std::move(shape), value);
  t.set_requires_grad(requires_grad);
  return t;
}

}  // namespace ssc
