#include "ssc/nn.hpp"

#include <cmath>

namespace ssc {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
NodePtr<T> new_node(Shape shape, std::vector<T> data, const char* op) {
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<T>>(std::move(data));
  n->op = op;
  return n;
}

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

struct LerpIndex {
  int64_t lo, hi;
  double w_lo, w_hi;
};

// Half-pixel source mapping with edge clamp.
inline LerpIndex lerp_index(int64_t oi, int64_t out_len, int64_t in_len) {
  double src = (static_cast<double>(oi) + 0.5) * static_cast<double>(in_len) /
                   static_cast<double>(out_len) -
               0.5;
  if (src < 0.0) src = 0.0;
  double last = static_cast<double>(in_len - 1);
  if (src > last) src = last;
  int64_t lo = static_cast<int64_t>(std::floor(src));
  int64_t hi = std::min(lo + 1, in_len - 1);
  double f = src - static_cast<double>(lo);
  return {lo, hi, 1.0 - f, f};
}

}  // namespace

// -- conv2d -----------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int stride, int pad) {
  if (x.ndim() != 3 || w.ndim() != 4) {
    throw DimensionError("conv2d: expected x[Cin,H,W], w[Cout,Cin,k,k], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const int64_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int64_t co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != ci || w.dim(3) != k) {
    throw DimensionError("conv2d: weight " + shape_str(w.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
  }
  if (k % 2 == 0 || stride < 1 || pad < 0) {
    throw DimensionError("conv2d: invalid geometry (k=" + std::to_string(k) +
                         ", stride=" + std::to_string(stride) +
                         ", pad=" + std::to_string(pad) + ")");
  }
  const int64_t oh = (h + 2 * pad - k) / stride + 1;
  const int64_t ow = (wd + 2 * pad - k) / stride + 1;
  if (h + 2 * pad < k || wd + 2 * pad < k) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != co)) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) +
                         " incompatible with Cout=" + std::to_string(co));
  }

  const auto& xv = x.data();
  const auto& wv = w.data();
  std::vector<T> out(static_cast<size_t>(co * oh * ow), T(0));
#pragma omp parallel for schedule(static) num_threads(worker_threads()) \
    if (co * oh * ow * ci * k * k > 32768)
  for (int64_t c = 0; c < co; ++c) {
    const T b = has_bias ? bias.data()[static_cast<size_t>(c)] : T(0);
    for (int64_t oy = 0; oy < oh; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox) {
        T acc = b;
        for (int64_t ic = 0; ic < ci; ++ic) {
          const T* xplane = &xv[static_cast<size_t>(ic * h * wd)];
          const T* wplane = &wv[static_cast<size_t>(((c * ci) + ic) * k * k)];
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= wd) continue;
              acc += wplane[ky * k + kx] * xplane[iy * wd + ix];
            }
          }
        }
        out[static_cast<size_t>((c * oh + oy) * ow + ox)] = acc;
      }
    }
  }

  auto node = new_node<T>({co, oh, ow}, std::move(out), "conv2d");
  auto px = x.node(), pw = w.node();
  auto pb = has_bias ? bias.node() : nullptr;
  std::vector<NodePtr<T>> parents{px, pw};
  if (pb) parents.push_back(pb);
  auto backward = [px, pw, pb, ci, h, wd, co, k, oh, ow, stride,
                   pad](detail::Node<T>& self) {
    const auto& g = self.grad;
    const auto& xv = *px->data;
    const auto& wv = *pw->data;
    if (pw->requires_grad) {
      pw->ensure_grad();
#pragma omp parallel for schedule(static) num_threads(worker_threads()) \
    if (co * oh * ow * ci * k * k > 32768)
      for (int64_t c = 0; c < co; ++c) {
        for (int64_t ic = 0; ic < ci; ++ic) {
          T* wgrad = &pw->grad[static_cast<size_t>(((c * ci) + ic) * k * k)];
          const T* xplane = &xv[static_cast<size_t>(ic * h * wd)];
          for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
              const T gv = g[static_cast<size_t>((c * oh + oy) * ow + ox)];
              if (gv == T(0)) continue;
              for (int64_t ky = 0; ky < k; ++ky) {
                const int64_t iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int64_t kx = 0; kx < k; ++kx) {
                  const int64_t ix = ox * stride + kx - pad;
                  if (ix < 0 || ix >= wd) continue;
                  wgrad[ky * k + kx] += gv * xplane[iy * wd + ix];
                }
              }
            }
          }
        }
      }
    }
    if (px->requires_grad) {
      px->ensure_grad();
#pragma omp parallel for schedule(static) num_threads(worker_threads()) \
    if (co * oh * ow * ci * k * k > 32768)
      for (int64_t ic = 0; ic < ci; ++ic) {
        T* xgrad = &px->grad[static_cast<size_t>(ic * h * wd)];
        for (int64_t c = 0; c < co; ++c) {
          const T* wplane = &wv[static_cast<size_t>(((c * ci) + ic) * k * k)];
          const T* gplane = &g[static_cast<size_t>(c * oh * ow)];
          for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
              const T gv = gplane[oy * ow + ox];
              if (gv == T(0)) continue;
              for (int64_t ky = 0; ky < k; ++ky) {
                const int64_t iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int64_t kx = 0; kx < k; ++kx) {
                  const int64_t ix = ox * stride + kx - pad;
                  if (ix < 0 || ix >= wd) continue;
                  xgrad[iy * wd + ix] += gv * wplane[ky * k + kx];
                }
              }
            }
          }
        }
      }
    }
    if (pb && pb->requires_grad) {
      pb->ensure_grad();
      for (int64_t c = 0; c < co; ++c) {
        T acc = T(0);
        const T* gplane = &g[static_cast<size_t>(c * oh * ow)];
        for (int64_t i = 0; i < oh * ow; ++i) acc += gplane[i];
        pb->grad[static_cast<size_t>(c)] += acc;
      }
    }
  };
  return record<T>(node, std::move(parents), std::move(backward));
}

// -- upsample_bilinear ---------------------------------------------------------------

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int64_t out_h, int64_t out_w,
                            int h_axis) {
  const Shape& s = x.shape();
  if (h_axis < 0 || static_cast<size_t>(h_axis) + 1 >= s.size()) {
    throw DimensionError("upsample_bilinear: axis " + std::to_string(h_axis) +
                         " out of range for " + shape_str(s));
  }
  const int64_t h = s[h_axis], wd = s[h_axis + 1];
  if (out_h <= 0 || out_w <= 0) {
    throw DimensionError("upsample_bilinear: zero target extent");
  }
  if (out_h < h || out_w < wd) {
    throw DimensionError("upsample_bilinear: target " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " smaller than source " +
                         std::to_string(h) + "x" + std::to_string(wd));
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < h_axis; ++i) outer *= s[i];
  for (size_t i = h_axis + 2; i < s.size(); ++i) inner *= s[i];

  std::vector<LerpIndex> rows(static_cast<size_t>(out_h)), cols(static_cast<size_t>(out_w));
  for (int64_t i = 0; i < out_h; ++i) rows[static_cast<size_t>(i)] = lerp_index(i, out_h, h);
  for (int64_t j = 0; j < out_w; ++j) cols[static_cast<size_t>(j)] = lerp_index(j, out_w, wd);

  Shape out_shape = s;
  out_shape[h_axis] = out_h;
  out_shape[h_axis + 1] = out_w;
  const auto& xv = x.data();
  std::vector<T> out(static_cast<size_t>(outer * out_h * out_w * inner));
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = &xv[static_cast<size_t>(o * h * wd * inner)];
    T* dst = &out[static_cast<size_t>(o * out_h * out_w * inner)];
    for (int64_t oy = 0; oy < out_h; ++oy) {
      const LerpIndex& r = rows[static_cast<size_t>(oy)];
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const LerpIndex& c = cols[static_cast<size_t>(ox)];
        const T w00 = static_cast<T>(r.w_lo * c.w_lo), w01 = static_cast<T>(r.w_lo * c.w_hi);
        const T w10 = static_cast<T>(r.w_hi * c.w_lo), w11 = static_cast<T>(r.w_hi * c.w_hi);
        const T* s00 = src + (r.lo * wd + c.lo) * inner;
        const T* s01 = src + (r.lo * wd + c.hi) * inner;
        const T* s10 = src + (r.hi * wd + c.lo) * inner;
        const T* s11 = src + (r.hi * wd + c.hi) * inner;
        T* d = dst + (oy * out_w + ox) * inner;
        for (int64_t i = 0; i < inner; ++i) {
          d[i] = w00 * s00[i] + w01 * s01[i] + w10 * s10[i] + w11 * s11[i];
        }
      }
    }
  }
  auto node = new_node<T>(std::move(out_shape), std::move(out), "upsample_bilinear");
  auto px = x.node();
  return record<T>(node, {px},
                   [px, rows, cols, outer, inner, h, wd, out_h, out_w](detail::Node<T>& self) {
                     px->ensure_grad();
                     const auto& g = self.grad;
                     for (int64_t o = 0; o < outer; ++o) {
                       T* dst = &px->grad[static_cast<size_t>(o * h * wd * inner)];
                       const T* gsrc = &g[static_cast<size_t>(o * out_h * out_w * inner)];
                       for (int64_t oy = 0; oy < out_h; ++oy) {
                         const LerpIndex& r = rows[static_cast<size_t>(oy)];
                         for (int64_t ox = 0; ox < out_w; ++ox) {
                           const LerpIndex& c = cols[static_cast<size_t>(ox)];
                           const T w00 = static_cast<T>(r.w_lo * c.w_lo);
                           const T w01 = static_cast<T>(r.w_lo * c.w_hi);
                           const T w10 = static_cast<T>(r.w_hi * c.w_lo);
                           const T w11 = static_cast<T>(r.w_hi * c.w_hi);
                           const T* gv = gsrc + (oy * out_w + ox) * inner;
                           T* d00 = dst + (r.lo * wd + c.lo) * inner;
                           T* d01 = dst + (r.lo * wd + c.hi) * inner;
                           T* d10 = dst + (r.hi * wd + c.lo) * inner;
                           T* d11 = dst + (r.hi * wd + c.hi) * inner;
                           for (int64_t i = 0; i < inner; ++i) {
                             d00[i] += w00 * gv[i];
                             d01[i] += w01 * gv[i];
                             d10[i] += w10 * gv[i];
                             d11[i] += w11 * gv[i];
                           }
                         }
                       }
                     }
                   });
}

// -- group_norm ----------------------------------------------------------------------

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("group_norm: rank-0 input");
  const int64_t c = s[0];
  if (groups < 1 || c % groups != 0) {
    throw DimensionError("group_norm: channels " + std::to_string(c) +
                         " not divisible by groups " + std::to_string(groups));
  }
  if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c) {
    throw DimensionError("group_norm: affine params must be shape [" +
                         std::to_string(c) + "]");
  }
  const int64_t spatial = x.numel() / c;
  const int64_t cg = c / groups;
  const int64_t glen = cg * spatial;

  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  std::vector<T> out(xv.size());
  std::vector<T> mean(static_cast<size_t>(groups)), inv_std(static_cast<size_t>(groups));
  for (int64_t g = 0; g < groups; ++g) {
    const T* src = &xv[static_cast<size_t>(g * glen)];
    T mu = T(0);
    for (int64_t i = 0; i < glen; ++i) mu += src[i];
    mu /= static_cast<T>(glen);
    T var = T(0);
    for (int64_t i = 0; i < glen; ++i) {
      const T d = src[i] - mu;
      var += d * d;
    }
    var /= static_cast<T>(glen);
    const T istd = T(1) / std::sqrt(var + eps);
    mean[static_cast<size_t>(g)] = mu;
    inv_std[static_cast<size_t>(g)] = istd;
    T* dst = &out[static_cast<size_t>(g * glen)];
    for (int64_t lc = 0; lc < cg; ++lc) {
      const int64_t ch = g * cg + lc;
      const T ga = gv[static_cast<size_t>(ch)], be = bv[static_cast<size_t>(ch)];
      for (int64_t i = 0; i < spatial; ++i) {
        dst[lc * spatial + i] = ga * (src[lc * spatial + i] - mu) * istd + be;
      }
    }
  }

  auto node = new_node<T>(s, std::move(out), "group_norm");
  auto px = x.node(), pg = gamma.node(), pb = beta.node();
  auto backward = [px, pg, pb, mean, inv_std, groups, cg, spatial](detail::Node<T>& self) {
    const auto& g = self.grad;
    const auto& xv = *px->data;
    const auto& gv = *pg->data;
    const int64_t glen = cg * spatial;
    if (px->requires_grad) px->ensure_grad();
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    for (int64_t grp = 0; grp < groups; ++grp) {
      const T mu = mean[static_cast<size_t>(grp)];
      const T istd = inv_std[static_cast<size_t>(grp)];
      const T* src = &xv[static_cast<size_t>(grp * glen)];
      const T* gout = &g[static_cast<size_t>(grp * glen)];
      if (pg->requires_grad || pb->requires_grad) {
        for (int64_t lc = 0; lc < cg; ++lc) {
          const int64_t ch = grp * cg + lc;
          T dga = T(0), dbe = T(0);
          for (int64_t i = 0; i < spatial; ++i) {
            const T y = (src[lc * spatial + i] - mu) * istd;
            dga += gout[lc * spatial + i] * y;
            dbe += gout[lc * spatial + i];
          }
          if (pg->requires_grad) pg->grad[static_cast<size_t>(ch)] += dga;
          if (pb->requires_grad) pb->grad[static_cast<size_t>(ch)] += dbe;
        }
      }
      if (px->requires_grad) {
        // dx = istd * (h - mean(h) - y * mean(h*y)), h = g * gamma
        T sum_h = T(0), sum_hy = T(0);
        for (int64_t lc = 0; lc < cg; ++lc) {
          const T ga = gv[static_cast<size_t>(grp * cg + lc)];
          for (int64_t i = 0; i < spatial; ++i) {
            const T hv = gout[lc * spatial + i] * ga;
            const T y = (src[lc * spatial + i] - mu) * istd;
            sum_h += hv;
            sum_hy += hv * y;
          }
        }
        const T mean_h = sum_h / static_cast<T>(glen);
        const T mean_hy = sum_hy / static_cast<T>(glen);
        T* dst = &px->grad[static_cast<size_t>(grp * glen)];
        for (int64_t lc = 0; lc < cg; ++lc) {
          const T ga = gv[static_cast<size_t>(grp * cg + lc)];
          for (int64_t i = 0; i < spatial; ++i) {
            const T hv = gout[lc * spatial + i] * ga;
            const T y = (src[lc * spatial + i] - mu) * istd;
            dst[lc * spatial + i] += istd * (hv - mean_h - y * mean_hy);
          }
        }
      }
    }
  };
  return record<T>(node, {px, pg, pb}, std::move(backward));
}

#define SSC_INSTANTIATE(T)                                                          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                               int, int);                                           \
  template Tensor<T> upsample_bilinear<T>(const Tensor<T>&, int64_t, int64_t, int); \
  template Tensor<T> group_norm<T>(const Tensor<T>&, int, const Tensor<T>&,         \
                                   const Tensor<T>&, T);

SSC_INSTANTIATE(float)
SSC_INSTANTIATE(double)

#undef SSC_INSTANTIATE

}  // namespace ssc
