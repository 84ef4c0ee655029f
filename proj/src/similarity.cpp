#include "ssc/similarity.hpp"

#include <cmath>

namespace ssc {

namespace {
constexpr double kNormEps = 1e-8;
}

template <typename T>
Tensor<T> cosine_similarity_4d(const Tensor<T>& eq, const Tensor<T>& es) {
  if (eq.ndim() != 3 || es.ndim() != 3 || eq.dim(0) != es.dim(0)) {
    throw DimensionError("cosine4d: expected [C,H,W] vs [C,h,w] with equal C, got " +
                         shape_str(eq.shape()) + " and " + shape_str(es.shape()));
  }
  const int64_t c = eq.dim(0);
  const int64_t nq = eq.dim(1) * eq.dim(2);
  const int64_t ns = es.dim(1) * es.dim(2);

  // Position-major copies keep the per-pair dot products contiguous.
  const auto& qv = eq.data();
  const auto& sv = es.data();
  auto qt = std::make_shared<std::vector<T>>(static_cast<size_t>(nq * c));
  auto st = std::make_shared<std::vector<T>>(static_cast<size_t>(ns * c));
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t p = 0; p < nq; ++p) (*qt)[static_cast<size_t>(p * c + ch)] = qv[static_cast<size_t>(ch * nq + p)];
    for (int64_t p = 0; p < ns; ++p) (*st)[static_cast<size_t>(p * c + ch)] = sv[static_cast<size_t>(ch * ns + p)];
  }
  auto qnorm = std::make_shared<std::vector<T>>(static_cast<size_t>(nq));
  auto snorm = std::make_shared<std::vector<T>>(static_cast<size_t>(ns));
  for (int64_t p = 0; p < nq; ++p) {
    T acc = T(0);
    const T* v = &(*qt)[static_cast<size_t>(p * c)];
    for (int64_t ch = 0; ch < c; ++ch) acc += v[ch] * v[ch];
    (*qnorm)[static_cast<size_t>(p)] = std::sqrt(acc);
  }
  for (int64_t p = 0; p < ns; ++p) {
    T acc = T(0);
    const T* v = &(*st)[static_cast<size_t>(p * c)];
    for (int64_t ch = 0; ch < c; ++ch) acc += v[ch] * v[ch];
    (*snorm)[static_cast<size_t>(p)] = std::sqrt(acc);
  }

  std::vector<T> out(static_cast<size_t>(nq * ns));
#pragma omp parallel for schedule(static) num_threads(worker_threads()) if (nq * ns * c > 32768)
  for (int64_t p = 0; p < nq; ++p) {
    const T* qrow = &(*qt)[static_cast<size_t>(p * c)];
    const T qn = std::max((*qnorm)[static_cast<size_t>(p)], static_cast<T>(kNormEps));
    T* orow = &out[static_cast<size_t>(p * ns)];
    for (int64_t s = 0; s < ns; ++s) {
      const T* srow = &(*st)[static_cast<size_t>(s * c)];
      T dot = T(0);
      for (int64_t ch = 0; ch < c; ++ch) dot += qrow[ch] * srow[ch];
      const T sn = std::max((*snorm)[static_cast<size_t>(s)], static_cast<T>(kNormEps));
      const T pre = dot / (qn * sn);
      orow[s] = pre > T(0) ? pre : T(0);
    }
  }

  auto node = std::make_shared<detail::Node<T>>();
  node->shape = {eq.dim(1), eq.dim(2), es.dim(1), es.dim(2)};
  node->data = std::make_shared<std::vector<T>>(std::move(out));
  node->op = "cosine4d";
  check_finite(*node->data, "cosine4d");

  auto pq = eq.node(), psn = es.node();
  if (grad_enabled() && (pq->requires_grad || psn->requires_grad)) {
    node->requires_grad = true;
    node->parents = {pq, psn};
    auto out_data = node->data;
    node->backward = [pq, psn, qt, st, qnorm, snorm, out_data, c, nq,
                      ns](detail::Node<T>& self) {
      const auto& g = self.grad;
      const auto& y = *out_data;  // y > 0 iff the relu passed; y == pre there
      const bool want_q = pq->requires_grad;
      const bool want_s = psn->requires_grad;
      if (want_q) pq->ensure_grad();
      if (want_s) psn->ensure_grad();
      std::vector<T> dq(want_q ? static_cast<size_t>(nq * c) : 0, T(0));
      std::vector<T> ds(want_s ? static_cast<size_t>(ns * c) : 0, T(0));
      for (int64_t p = 0; p < nq; ++p) {
        const T* qrow = &(*qt)[static_cast<size_t>(p * c)];
        const T qn_raw = (*qnorm)[static_cast<size_t>(p)];
        const T qn = std::max(qn_raw, static_cast<T>(kNormEps));
        for (int64_t s = 0; s < ns; ++s) {
          const T yv = y[static_cast<size_t>(p * ns + s)];
          const T gv = g[static_cast<size_t>(p * ns + s)];
          if (yv <= T(0) || gv == T(0)) continue;
          const T* srow = &(*st)[static_cast<size_t>(s * c)];
          const T sn_raw = (*snorm)[static_cast<size_t>(s)];
          const T sn = std::max(sn_raw, static_cast<T>(kNormEps));
          const T inv = T(1) / (qn * sn);
          // y = dot * inv; splitting d(inv)/d(vec) only when the norm is live
          if (want_q) {
            const T coef = qn_raw > static_cast<T>(kNormEps) ? yv / (qn * qn) : T(0);
            T* dst = &dq[static_cast<size_t>(p * c)];
            for (int64_t ch = 0; ch < c; ++ch) {
              dst[ch] += gv * (srow[ch] * inv - coef * qrow[ch]);
            }
          }
          if (want_s) {
            const T coef = sn_raw > static_cast<T>(kNormEps) ? yv / (sn * sn) : T(0);
            T* dst = &ds[static_cast<size_t>(s * c)];
            for (int64_t ch = 0; ch < c; ++ch) {
              dst[ch] += gv * (qrow[ch] * inv - coef * srow[ch]);
            }
          }
        }
      }
      // back to channel-major layout
      if (want_q) {
        for (int64_t ch = 0; ch < c; ++ch) {
          for (int64_t p = 0; p < nq; ++p) {
            pq->grad[static_cast<size_t>(ch * nq + p)] += dq[static_cast<size_t>(p * c + ch)];
          }
        }
      }
      if (want_s) {
        for (int64_t ch = 0; ch < c; ++ch) {
          for (int64_t s = 0; s < ns; ++s) {
            psn->grad[static_cast<size_t>(ch * ns + s)] += ds[static_cast<size_t>(s * c + ch)];
          }
        }
      }
    };
  }
  return Tensor<T>(node);
}

template <typename T>
std::vector<Tensor<T>> build_similarity_pyramid(
    const std::vector<std::vector<Tensor<T>>>& query_groups,
    const std::vector<std::vector<Tensor<T>>>& exemplar_groups) {
  if (query_groups.size() != exemplar_groups.size()) {
    throw DimensionError("similarity: pyramid group counts disagree (" +
                         std::to_string(query_groups.size()) + " vs " +
                         std::to_string(exemplar_groups.size()) + ")");
  }
  std::vector<Tensor<T>> out;
  for (size_t p = 0; p < query_groups.size(); ++p) {
    if (query_groups[p].size() != exemplar_groups[p].size() || query_groups[p].empty()) {
      throw DimensionError("similarity: level count mismatch in group " +
                           std::to_string(p + 1));
    }
    std::vector<Tensor<T>> levels;
    for (size_t l = 0; l < query_groups[p].size(); ++l) {
      levels.push_back(cosine_similarity_4d(query_groups[p][l], exemplar_groups[p][l]));
    }
    out.push_back(stack(levels));
  }
  return out;
}

template Tensor<float> cosine_similarity_4d<float>(const Tensor<float>&,
                                                   const Tensor<float>&);
template Tensor<double> cosine_similarity_4d<double>(const Tensor<double>&,
                                                     const Tensor<double>&);
template std::vector<Tensor<float>> build_similarity_pyramid<float>(
    const std::vector<std::vector<Tensor<float>>>&,
    const std::vector<std::vector<Tensor<float>>>&);
template std::vector<Tensor<double>> build_similarity_pyramid<double>(
    const std::vector<std::vector<Tensor<double>>>&,
    const std::vector<std::vector<Tensor<double>>>&);

}  // namespace ssc
