#include "ssc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <unordered_set>

namespace ssc {

int worker_threads() {
  static const int n = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("SSD_THREADS")) {
      int cap = std::atoi(env);
      if (cap >= 1 && cap < hw) return cap;
    }
    return hw;
  }();
  return n;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

template <typename T>
void check_finite(const std::vector<T>& v, const char* what) {
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(what) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
NodePtr<T> new_node(Shape shape, std::vector<T> data, const char* op) {
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<T>>(std::move(data));
  n->op = op;
  if (static_cast<int64_t>(n->data->size()) != n->numel()) {
    throw DimensionError(std::string(op) + ": data size " +
                         std::to_string(n->data->size()) +
                         " does not match shape " + shape_str(n->shape));
  }
  return n;
}

// Finalizes an op result: finiteness check plus backward recording.
template <typename T>
Tensor<T> record(NodePtr<T> out, std::vector<NodePtr<T>> parents,
                 std::function<void(detail::Node<T>&)> backward) {
  check_finite(*out->data, out->op);
  if (grad_enabled()) {
    bool need = false;
    for (const auto& p : parents) need = need || p->requires_grad;
    if (need) {
      out->requires_grad = true;
      out->parents = std::move(parents);
      out->backward = std::move(backward);
    }
  }
  return Tensor<T>(out);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

// -- Tensor ---------------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data) {
  auto n = new_node<T>(std::move(shape), std::move(data), "leaf");
  check_finite(*n->data, "leaf");
  return Tensor<T>(n);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  int64_t n = shape_numel(shape);
  return Tensor<T>(new_node<T>(std::move(shape), std::vector<T>(n, T(0)), "zeros"));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  int64_t n = shape_numel(shape);
  return Tensor<T>(new_node<T>(std::move(shape), std::vector<T>(n, value), "full"));
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw Error("tensor: undefined handle");
  return node_->shape;
}

template <typename T>
int64_t Tensor<T>::numel() const {
  return shape_numel(shape());
}

template <typename T>
int64_t Tensor<T>::dim(size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) +
                         " out of range for " + shape_str(s));
  }
  return s[axis];
}

template <typename T>
const std::vector<T>& Tensor<T>::data() const {
  if (!node_) throw Error("tensor: undefined handle");
  return *node_->data;
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) {
    throw DimensionError("tensor: index rank " + std::to_string(idx.size()) +
                         " vs shape " + shape_str(s));
  }
  int64_t flat = 0;
  size_t d = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= s[d]) {
      throw DimensionError("tensor: index out of range in axis " + std::to_string(d));
    }
    flat = flat * s[d] + i;
    ++d;
  }
  return (*node_->data)[static_cast<size_t>(flat)];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!node_) throw Error("tensor: undefined handle");
  if (!node_->parents.empty()) {
    throw Error("set_requires_grad: only valid on leaf tensors");
  }
  node_->requires_grad = on;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename T>
const std::vector<T>& Tensor<T>::grad() const {
  if (!has_grad()) throw Error("tensor: no gradient accumulated");
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
void Tensor<T>::apply_update(const std::function<void(std::vector<T>&)>& fn) {
  if (!node_) throw Error("tensor: undefined handle");
  if (!node_->parents.empty()) throw Error("apply_update: only valid on leaf tensors");
  fn(*node_->data);
  check_finite(*node_->data, "apply_update");
}

template <typename T>
void Tensor<T>::backward() {
  if (!node_) throw Error("backward: undefined handle");
  if (numel() != 1) {
    throw DimensionError("backward: output must be scalar, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reverse gives a valid reverse-topological order
  // visiting every recorded op exactly once.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  struct Frame {
    detail::Node<T>* n;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  seen.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      detail::Node<T>* p = f.n->parents[f.next_parent++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// -- elementwise ------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  auto node = new_node<T>(a.shape(), std::move(out), "add");
  auto pa = a.node(), pb = b.node();
  return record<T>(node, {pa, pb}, [pa, pb](detail::Node<T>& self) {
    for (auto& p : {pa, pb}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  auto node = new_node<T>(a.shape(), std::move(out), "sub");
  auto pa = a.node(), pb = b.node();
  return record<T>(node, {pa, pb}, [pa, pb](detail::Node<T>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  auto node = new_node<T>(a.shape(), std::move(out), "mul");
  auto pa = a.node(), pb = b.node();
  return record<T>(node, {pa, pb}, [pa, pb](detail::Node<T>& self) {
    const auto& av = *pa->data;
    const auto& bv = *pb->data;
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * bv[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  const auto& av = a.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  auto node = new_node<T>(a.shape(), std::move(out), "scale");
  auto pa = a.node();
  return record<T>(node, {pa}, [pa, s](detail::Node<T>& self) {
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * s;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  const auto& av = a.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + s;
  auto node = new_node<T>(a.shape(), std::move(out), "add_scalar");
  auto pa = a.node();
  return record<T>(node, {pa}, [pa](detail::Node<T>& self) {
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  const auto& av = a.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
  auto node = new_node<T>(a.shape(), std::move(out), "relu");
  auto pa = a.node();
  return record<T>(node, {pa}, [pa](detail::Node<T>& self) {
    const auto& av = *pa->data;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (av[i] > T(0)) pa->grad[i] += self.grad[i];
    }
  });
}

// -- matmul -----------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<T> out(static_cast<size_t>(m * n), T(0));
#pragma omp parallel for schedule(static) num_threads(worker_threads()) if (m * k * n > 65536)
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      T aip = av[static_cast<size_t>(i * k + p)];
      const T* brow = &bv[static_cast<size_t>(p * n)];
      T* orow = &out[static_cast<size_t>(i * n)];
      for (int64_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  auto node = new_node<T>({m, n}, std::move(out), "matmul");
  auto pa = a.node(), pb = b.node();
  return record<T>(node, {pa, pb}, [pa, pb, m, k, n](detail::Node<T>& self) {
    const auto& g = self.grad;
    const auto& av = *pa->data;
    const auto& bv = *pb->data;
    if (pa->requires_grad) {
      pa->ensure_grad();  // dA = dC * B^T
#pragma omp parallel for schedule(static) num_threads(worker_threads()) if (m * k * n > 65536)
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
          T gij = g[static_cast<size_t>(i * n + j)];
          const T* brow = &bv[0] + j;
          T* arow = &pa->grad[static_cast<size_t>(i * k)];
          for (int64_t p = 0; p < k; ++p) arow[p] += gij * brow[static_cast<size_t>(p * n)];
        }
      }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();  // dB = A^T * dC
#pragma omp parallel for schedule(static) num_threads(worker_threads()) if (m * k * n > 65536)
      for (int64_t p = 0; p < k; ++p) {
        for (int64_t i = 0; i < m; ++i) {
          T aip = av[static_cast<size_t>(i * k + p)];
          const T* grow = &g[static_cast<size_t>(i * n)];
          T* brow = &pb->grad[static_cast<size_t>(p * n)];
          for (int64_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
        }
      }
    }
  });
}

// -- softmax ----------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  const Shape& s = a.shape();
  if (axis < 0 || static_cast<size_t>(axis) >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for " + shape_str(s));
  }
  const int64_t len = s[axis];
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

  const auto& av = a.data();
  std::vector<T> out(av.size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      T mx = av[static_cast<size_t>(base)];
      for (int64_t l = 1; l < len; ++l)
        mx = std::max(mx, av[static_cast<size_t>(base + l * inner)]);
      T sum = T(0);
      for (int64_t l = 0; l < len; ++l) {
        T e = std::exp(av[static_cast<size_t>(base + l * inner)] - mx);
        out[static_cast<size_t>(base + l * inner)] = e;
        sum += e;
      }
      for (int64_t l = 0; l < len; ++l) out[static_cast<size_t>(base + l * inner)] /= sum;
    }
  }
  auto node = new_node<T>(s, std::move(out), "softmax");
  auto pa = a.node();
  auto out_data = node->data;
  return record<T>(node, {pa}, [pa, out_data, outer, len, inner](detail::Node<T>& self) {
    // dx = y * (dy - sum(dy * y)) per slice
    pa->ensure_grad();
    const auto& y = *out_data;
    const auto& g = self.grad;
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * len * inner + in;
        T dot = T(0);
        for (int64_t l = 0; l < len; ++l) {
          size_t i = static_cast<size_t>(base + l * inner);
          dot += g[i] * y[i];
        }
        for (int64_t l = 0; l < len; ++l) {
          size_t i = static_cast<size_t>(base + l * inner);
          pa->grad[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

// -- structural -------------------------------------------------------------------

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  if (a.ndim() != 2) {
    throw DimensionError("transpose2d: expected rank 2, got " + shape_str(a.shape()));
  }
  const int64_t m = a.dim(0), n = a.dim(1);
  const auto& av = a.data();
  std::vector<T> out(av.size());
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      out[static_cast<size_t>(j * m + i)] = av[static_cast<size_t>(i * n + j)];
    }
  }
  auto node = new_node<T>({n, m}, std::move(out), "transpose2d");
  auto pa = a.node();
  return record<T>(node, {pa}, [pa, m, n](detail::Node<T>& self) {
    pa->ensure_grad();
    for (int64_t j = 0; j < n; ++j) {
      for (int64_t i = 0; i < m; ++i) {
        pa->grad[static_cast<size_t>(i * n + j)] += self.grad[static_cast<size_t>(j * m + i)];
      }
    }
  });
}

template <typename T>
Tensor<T> stack_axis1(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("stack_axis1: empty input list");
  const Shape& s0 = parts[0].shape();
  if (s0.empty()) throw DimensionError("stack_axis1: parts need rank >= 1");
  for (const auto& p : parts) {
    if (p.shape() != s0) {
      throw DimensionError("stack_axis1: shape mismatch " + shape_str(p.shape()) +
                           " vs " + shape_str(s0));
    }
  }
  const int64_t c = s0[0];
  const int64_t inner = shape_numel(s0) / c;
  const int64_t n = static_cast<int64_t>(parts.size());
  Shape out_shape;
  out_shape.push_back(c);
  out_shape.push_back(n);
  out_shape.insert(out_shape.end(), s0.begin() + 1, s0.end());
  std::vector<T> out(static_cast<size_t>(c * n * inner));
  for (int64_t p = 0; p < n; ++p) {
    const auto& v = parts[static_cast<size_t>(p)].data();
    for (int64_t ch = 0; ch < c; ++ch) {
      std::copy(v.begin() + ch * inner, v.begin() + (ch + 1) * inner,
                out.begin() + (ch * n + p) * inner);
    }
  }
  auto node = new_node<T>(std::move(out_shape), std::move(out), "stack_axis1");
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) parents.push_back(p.node());
  auto parents_copy = parents;
  return record<T>(node, std::move(parents),
                   [parents_copy, c, n, inner](detail::Node<T>& self) {
                     for (int64_t p = 0; p < n; ++p) {
                       auto& par = parents_copy[static_cast<size_t>(p)];
                       if (!par->requires_grad) continue;
                       par->ensure_grad();
                       for (int64_t ch = 0; ch < c; ++ch) {
                         const T* g = &self.grad[static_cast<size_t>((ch * n + p) * inner)];
                         T* dst = &par->grad[static_cast<size_t>(ch * inner)];
                         for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                       }
                     }
                   });
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("stack: empty input list");
  const Shape& s0 = parts[0].shape();
  for (const auto& p : parts) {
    if (p.shape() != s0) {
      throw DimensionError("stack: shape mismatch " + shape_str(p.shape()) + " vs " +
                           shape_str(s0));
    }
  }
  const int64_t chunk = shape_numel(s0);
  Shape out_shape;
  out_shape.push_back(static_cast<int64_t>(parts.size()));
  out_shape.insert(out_shape.end(), s0.begin(), s0.end());
  std::vector<T> out(static_cast<size_t>(chunk) * parts.size());
  for (size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].data();
    std::copy(v.begin(), v.end(), out.begin() + static_cast<int64_t>(p) * chunk);
  }
  auto node = new_node<T>(std::move(out_shape), std::move(out), "stack");
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) parents.push_back(p.node());
  auto parents_copy = parents;
  return record<T>(node, std::move(parents), [parents_copy, chunk](detail::Node<T>& self) {
    for (size_t p = 0; p < parents_copy.size(); ++p) {
      auto& par = parents_copy[p];
      if (!par->requires_grad) continue;
      par->ensure_grad();
      const T* g = self.grad.data() + static_cast<int64_t>(p) * chunk;
      for (int64_t i = 0; i < chunk; ++i) par->grad[static_cast<size_t>(i)] += g[i];
    }
  });
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& a, int axis, int64_t start, int64_t len) {
  const Shape& s = a.shape();
  if (axis < 0 || static_cast<size_t>(axis) >= s.size() || start < 0 || len <= 0 ||
      start + len > s[axis]) {
    throw DimensionError("narrow: invalid range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") along axis " +
                         std::to_string(axis) + " of " + shape_str(s));
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const int64_t alen = s[axis];

  Shape out_shape = s;
  out_shape[axis] = len;
  const auto& av = a.data();
  std::vector<T> out(static_cast<size_t>(outer * len * inner));
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = &av[static_cast<size_t>((o * alen + start) * inner)];
    T* dst = &out[static_cast<size_t>(o * len * inner)];
    std::copy(src, src + len * inner, dst);
  }
  auto node = new_node<T>(std::move(out_shape), std::move(out), "narrow");
  auto pa = a.node();
  return record<T>(node, {pa}, [pa, outer, inner, alen, start, len](detail::Node<T>& self) {
    pa->ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      const T* g = &self.grad[static_cast<size_t>(o * len * inner)];
      T* dst = &pa->grad[static_cast<size_t>((o * alen + start) * inner)];
      for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->data = a.node()->data;  // alias, values are immutable
  n->op = "reshape";
  auto pa = a.node();
  return record<T>(n, {pa}, [pa](detail::Node<T>& self) {
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  });
}

// -- reductions ---------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  const auto& av = a.data();
  T acc = T(0);
  for (T v : av) acc += v;
  auto node = new_node<T>({1}, std::vector<T>{acc}, "sum_all");
  auto pa = a.node();
  return record<T>(node, {pa}, [pa](detail::Node<T>& self) {
    pa->ensure_grad();
    const T g = self.grad[0];
    for (auto& v : pa->grad) v += g;
  });
}

template <typename T>
Tensor<T> mean_last2(const Tensor<T>& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) {
    throw DimensionError("mean_last2: needs rank >= 2, got " + shape_str(s));
  }
  const int64_t red = s[s.size() - 2] * s[s.size() - 1];
  const int64_t outer = a.numel() / red;
  Shape out_shape(s.begin(), s.end() - 2);
  if (out_shape.empty()) out_shape.push_back(1);
  const auto& av = a.data();
  std::vector<T> out(static_cast<size_t>(outer));
  for (int64_t o = 0; o < outer; ++o) {
    T acc = T(0);
    const T* src = &av[static_cast<size_t>(o * red)];
    for (int64_t i = 0; i < red; ++i) acc += src[i];
    out[static_cast<size_t>(o)] = acc / static_cast<T>(red);
  }
  auto node = new_node<T>(std::move(out_shape), std::move(out), "mean_last2");
  auto pa = a.node();
  return record<T>(node, {pa}, [pa, outer, red](detail::Node<T>& self) {
    pa->ensure_grad();
    const T inv = T(1) / static_cast<T>(red);
    for (int64_t o = 0; o < outer; ++o) {
      const T g = self.grad[static_cast<size_t>(o)] * inv;
      T* dst = &pa->grad[static_cast<size_t>(o * red)];
      for (int64_t i = 0; i < red; ++i) dst[i] += g;
    }
  });
}

// -- explicit instantiations -----------------------------------------------------

#define SSC_INSTANTIATE(T)                                                    \
  template class Tensor<T>;                                                   \
  template void check_finite<T>(const std::vector<T>&, const char*);         \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                          \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                     \
  template Tensor<T> relu<T>(const Tensor<T>&);                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                      \
  template Tensor<T> transpose2d<T>(const Tensor<T>&);                       \
  template Tensor<T> stack<T>(const std::vector<Tensor<T>>&);                \
  template Tensor<T> stack_axis1<T>(const std::vector<Tensor<T>>&);          \
  template Tensor<T> narrow<T>(const Tensor<T>&, int, int64_t, int64_t);     \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                    \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                           \
  template Tensor<T> mean_last2<T>(const Tensor<T>&);

SSC_INSTANTIATE(float)
SSC_INSTANTIATE(double)

#undef SSC_INSTANTIATE

}  // namespace ssc
