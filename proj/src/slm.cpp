#include "ssc/slm.hpp"

#include "ssc/nn.hpp"

namespace ssc {

namespace {
std::atomic<bool> g_profile{false};

int64_t conv_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Copies [Ci,H,W,h,w] into a buffer zero-padded by `pad` on all four spatial
// axes; keeps the hot loops branch-free.
template <typename T>
std::vector<T> pad4(const std::vector<T>& src, int64_t ci, int64_t h1, int64_t w1,
                    int64_t h2, int64_t w2, int64_t pad) {
  const int64_t ph1 = h1 + 2 * pad, pw1 = w1 + 2 * pad;
  const int64_t ph2 = h2 + 2 * pad, pw2 = w2 + 2 * pad;
  std::vector<T> dst(static_cast<size_t>(ci * ph1 * pw1 * ph2 * pw2), T(0));
  for (int64_t c = 0; c < ci; ++c) {
    for (int64_t a = 0; a < h1; ++a) {
      for (int64_t b = 0; b < w1; ++b) {
        for (int64_t u = 0; u < h2; ++u) {
          const T* s = &src[static_cast<size_t>((((c * h1 + a) * w1 + b) * h2 + u) * w2)];
          T* d = &dst[static_cast<size_t>(
              ((((c * ph1 + a + pad) * pw1 + b + pad) * ph2 + u + pad) * pw2 + pad))];
          std::copy(s, s + w2, d);
        }
      }
    }
  }
  return dst;
}
}  // namespace

void set_flop_profiling(bool on) { g_profile.store(on); }
bool flop_profiling() { return g_profile.load(); }

template <typename T>
Tensor<T> cp4d_conv(const Tensor<T>& s, const Cp4dLayer<T>& layer) {
  if (s.ndim() != 5) {
    throw DimensionError("cp4d: expected [Cin,H,W,h,w], got " + shape_str(s.shape()));
  }
  const Tensor<T>& wq = layer.w_query;
  const Tensor<T>& ws = layer.w_support;
  if (wq.ndim() != 4 || ws.ndim() != 4 || wq.shape() != ws.shape()) {
    throw DimensionError("cp4d: weight banks must share [Cout,Cin,k,k]");
  }
  const int64_t ci = s.dim(0), h1 = s.dim(1), w1 = s.dim(2), h2 = s.dim(3), w2 = s.dim(4);
  const int64_t co = wq.dim(0), k = wq.dim(2);
  if (wq.dim(1) != ci || wq.dim(3) != k || k % 2 == 0) {
    throw DimensionError("cp4d: weights " + shape_str(wq.shape()) +
                         " incompatible with input " + shape_str(s.shape()));
  }
  const int64_t sq = layer.stride_q, ss = layer.stride_s;
  if (sq < 1 || ss < 1) throw DimensionError("cp4d: strides must be >= 1");
  const int64_t pad = k / 2;
  const int64_t oh1 = conv_extent(h1, k, sq, pad), ow1 = conv_extent(w1, k, sq, pad);
  const int64_t oh2 = conv_extent(h2, k, ss, pad), ow2 = conv_extent(w2, k, ss, pad);
  if (oh1 < 1 || ow1 < 1 || oh2 < 1 || ow2 < 1) {
    throw DimensionError("cp4d: empty output for input " + shape_str(s.shape()));
  }

  const int64_t ph1 = h1 + 2 * pad, pw1 = w1 + 2 * pad;
  const int64_t ph2 = h2 + 2 * pad, pw2 = w2 + 2 * pad;
  const int64_t plane = ph2 * pw2;  // one padded support plane
  auto padded = std::make_shared<std::vector<T>>(
      pad4(s.data(), ci, h1, w1, h2, w2, pad));

  const auto& wqv = wq.data();
  const auto& wsv = ws.data();
  std::vector<T> out(static_cast<size_t>(co * oh1 * ow1 * oh2 * ow2), T(0));
  const int64_t out_spatial = oh1 * ow1 * oh2 * ow2;

#pragma omp parallel for schedule(static) num_threads(worker_threads()) \
    if (co * out_spatial * ci * k * k > 16384)
  for (int64_t c = 0; c < co; ++c) {
    T* oc = &out[static_cast<size_t>(c * out_spatial)];
    for (int64_t a = 0; a < oh1; ++a) {
      for (int64_t b = 0; b < ow1; ++b) {
        T* obin = &oc[(a * ow1 + b) * oh2 * ow2];
        for (int64_t icn = 0; icn < ci; ++icn) {
          const T* wq_tap = &wqv[static_cast<size_t>(((c * ci) + icn) * k * k)];
          const T* ws_tap = &wsv[static_cast<size_t>(((c * ci) + icn) * k * k)];
          const T* chan = &(*padded)[static_cast<size_t>(icn * ph1 * pw1 * plane)];
          // query bank: support pinned at its pivot
          for (int64_t ky = 0; ky < k; ++ky) {
            for (int64_t kx = 0; kx < k; ++kx) {
              const T wgt = wq_tap[ky * k + kx];
              const T* src = chan + ((a * sq + ky) * pw1 + (b * sq + kx)) * plane;
              for (int64_t u = 0; u < oh2; ++u) {
                const T* srow = src + (u * ss + pad) * pw2 + pad;
                T* orow = obin + u * ow2;
                for (int64_t v = 0; v < ow2; ++v) orow[v] += wgt * srow[v * ss];
              }
            }
          }
          // support bank: query pinned at its pivot
          const T* pivot = chan + ((a * sq + pad) * pw1 + (b * sq + pad)) * plane;
          for (int64_t ky = 0; ky < k; ++ky) {
            for (int64_t kx = 0; kx < k; ++kx) {
              const T wgt = ws_tap[ky * k + kx];
              for (int64_t u = 0; u < oh2; ++u) {
                const T* srow = pivot + (u * ss + ky) * pw2 + kx;
                T* orow = obin + u * ow2;
                for (int64_t v = 0; v < ow2; ++v) orow[v] += wgt * srow[v * ss];
              }
            }
          }
        }
      }
    }
  }

  if (g_profile.load() && layer.flops) {
    const uint64_t per_out = static_cast<uint64_t>(ci) * 2u * static_cast<uint64_t>(k * k);
    layer.flops->cp4d.fetch_add(per_out * static_cast<uint64_t>(co * out_spatial));
    layer.flops->dense_equiv.fetch_add(static_cast<uint64_t>(ci * k * k * k * k) *
                                       static_cast<uint64_t>(co * out_spatial));
  }

  auto node = std::make_shared<detail::Node<T>>();
  node->shape = {co, oh1, ow1, oh2, ow2};
  node->data = std::make_shared<std::vector<T>>(std::move(out));
  node->op = "cp4d";
  check_finite(*node->data, "cp4d");

  auto psrc = s.node();
  auto pwq = wq.node(), pws = ws.node();
  if (grad_enabled() && (psrc->requires_grad || pwq->requires_grad || pws->requires_grad)) {
    node->requires_grad = true;
    node->parents = {psrc, pwq, pws};
    node->backward = [psrc, pwq, pws, padded, ci, co, k, pad, sq, ss, h1, w1, h2, w2,
                      oh1, ow1, oh2, ow2, ph1, pw1, ph2, pw2,
                      plane](detail::Node<T>& self) {
      const auto& g = self.grad;
      const int64_t out_spatial = oh1 * ow1 * oh2 * ow2;
      if (pwq->requires_grad || pws->requires_grad) {
        pwq->ensure_grad();
        pws->ensure_grad();
#pragma omp parallel for schedule(static) num_threads(worker_threads()) \
    if (co * out_spatial * ci > 16384)
        for (int64_t c = 0; c < co; ++c) {
          const T* gc = &g[static_cast<size_t>(c * out_spatial)];
          for (int64_t icn = 0; icn < ci; ++icn) {
            T* dwq = &pwq->grad[static_cast<size_t>(((c * ci) + icn) * k * k)];
            T* dws = &pws->grad[static_cast<size_t>(((c * ci) + icn) * k * k)];
            const T* chan = &(*padded)[static_cast<size_t>(icn * ph1 * pw1 * plane)];
            for (int64_t a = 0; a < oh1; ++a) {
              for (int64_t b = 0; b < ow1; ++b) {
                const T* gbin = &gc[(a * ow1 + b) * oh2 * ow2];
                for (int64_t ky = 0; ky < k; ++ky) {
                  for (int64_t kx = 0; kx < k; ++kx) {
                    const T* src = chan + ((a * sq + ky) * pw1 + (b * sq + kx)) * plane;
                    T acc = T(0);
                    for (int64_t u = 0; u < oh2; ++u) {
                      const T* srow = src + (u * ss + pad) * pw2 + pad;
                      const T* grow = gbin + u * ow2;
                      for (int64_t v = 0; v < ow2; ++v) acc += grow[v] * srow[v * ss];
                    }
                    dwq[ky * k + kx] += acc;
                  }
                }
                const T* pivot = chan + ((a * sq + pad) * pw1 + (b * sq + pad)) * plane;
                for (int64_t ky = 0; ky < k; ++ky) {
                  for (int64_t kx = 0; kx < k; ++kx) {
                    T acc = T(0);
                    for (int64_t u = 0; u < oh2; ++u) {
                      const T* srow = pivot + (u * ss + ky) * pw2 + kx;
                      const T* grow = gbin + u * ow2;
                      for (int64_t v = 0; v < ow2; ++v) acc += grow[v] * srow[v * ss];
                    }
                    dws[ky * k + kx] += acc;
                  }
                }
              }
            }
          }
        }
      }
      if (psrc->requires_grad) {
        psrc->ensure_grad();
        const auto& wqv = *pwq->data;
        const auto& wsv = *pws->data;
#pragma omp parallel for schedule(static) num_threads(worker_threads()) \
    if (co * out_spatial * ci > 16384)
        for (int64_t icn = 0; icn < ci; ++icn) {
          std::vector<T> dpad(static_cast<size_t>(ph1 * pw1 * plane), T(0));
          for (int64_t c = 0; c < co; ++c) {
            const T* gc = &g[static_cast<size_t>(c * out_spatial)];
            const T* wq_tap = &wqv[static_cast<size_t>(((c * ci) + icn) * k * k)];
            const T* ws_tap = &wsv[static_cast<size_t>(((c * ci) + icn) * k * k)];
            for (int64_t a = 0; a < oh1; ++a) {
              for (int64_t b = 0; b < ow1; ++b) {
                const T* gbin = &gc[(a * ow1 + b) * oh2 * ow2];
                for (int64_t ky = 0; ky < k; ++ky) {
                  for (int64_t kx = 0; kx < k; ++kx) {
                    const T wgt = wq_tap[ky * k + kx];
                    T* dst = dpad.data() + ((a * sq + ky) * pw1 + (b * sq + kx)) * plane;
                    for (int64_t u = 0; u < oh2; ++u) {
                      T* drow = dst + (u * ss + pad) * pw2 + pad;
                      const T* grow = gbin + u * ow2;
                      for (int64_t v = 0; v < ow2; ++v) drow[v * ss] += wgt * grow[v];
                    }
                  }
                }
                T* pivot = dpad.data() + ((a * sq + pad) * pw1 + (b * sq + pad)) * plane;
                for (int64_t ky = 0; ky < k; ++ky) {
                  for (int64_t kx = 0; kx < k; ++kx) {
                    const T wgt = ws_tap[ky * k + kx];
                    for (int64_t u = 0; u < oh2; ++u) {
                      T* drow = pivot + (u * ss + ky) * pw2 + kx;
                      const T* grow = gbin + u * ow2;
                      for (int64_t v = 0; v < ow2; ++v) drow[v * ss] += wgt * grow[v];
                    }
                  }
                }
              }
            }
          }
          // interior of the padded grad buffer accumulates into the source grad
          T* sgrad = &psrc->grad[static_cast<size_t>(icn * h1 * w1 * h2 * w2)];
          for (int64_t a = 0; a < h1; ++a) {
            for (int64_t b = 0; b < w1; ++b) {
              for (int64_t u = 0; u < h2; ++u) {
                const T* srow = dpad.data() +
                                (((a + pad) * pw1 + b + pad) * ph2 + u + pad) * pw2 + pad;
                T* drow = sgrad + ((a * w1 + b) * h2 + u) * w2;
                for (int64_t v = 0; v < w2; ++v) drow[v] += srow[v];
              }
            }
          }
        }
      }
    };
  }
  return Tensor<T>(node);
}

// -- Slm ---------------------------------------------------------------------------

template <typename T>
Cp4dLayer<T> Slm<T>::make_layer(int cin, int cout, int stride_s, Rng& rng) {
  if (cout % cfg_.gn_groups != 0) {
    throw Error("slm: width " + std::to_string(cout) + " not divisible by gn_groups " +
                std::to_string(cfg_.gn_groups));
  }
  Cp4dLayer<T> layer;
  const int k = cfg_.kernel;
  const int64_t fan_in = static_cast<int64_t>(cin) * 2 * k * k;
  layer.w_query = kaiming_leaf<T>({cout, cin, k, k}, fan_in, rng);
  layer.w_support = kaiming_leaf<T>({cout, cin, k, k}, fan_in, rng);
  layer.gn_gamma = const_leaf<T>({cout}, T(1));
  layer.gn_beta = zero_leaf<T>({cout});
  layer.stride_q = 1;
  layer.stride_s = stride_s;
  return layer;
}

template <typename T>
Slm<T>::Slm(const SlmConfig& cfg, const std::vector<int>& group_in_channels, Rng& rng)
    : cfg_(cfg) {
  if (cfg_.widths.empty() || cfg_.widths.size() != cfg_.support_strides.size()) {
    throw Error("slm: widths and support_strides must be non-empty and equal length");
  }
  if (cfg_.kernel % 2 == 0 || cfg_.kernel < 1) throw Error("slm: kernel must be odd");
  for (int in_c : group_in_channels) {
    std::vector<Cp4dLayer<T>> stack;
    int cin = in_c;
    for (size_t d = 0; d < cfg_.widths.size(); ++d) {
      stack.push_back(make_layer(cin, cfg_.widths[d], cfg_.support_strides[d], rng));
      cin = cfg_.widths[d];
    }
    encoders_.push_back(std::move(stack));
  }
  const int cout = cfg_.widths.back();
  for (size_t p = 0; p + 1 < group_in_channels.size(); ++p) {
    std::vector<Cp4dLayer<T>> stack;
    for (size_t d = 0; d < cfg_.widths.size(); ++d) {
      stack.push_back(make_layer(cout, cout, 1, rng));
    }
    fusers_.push_back(std::move(stack));
  }
}

template <typename T>
Tensor<T> Slm<T>::run_stack(const std::vector<Cp4dLayer<T>>& stack, Tensor<T> x) const {
  for (const auto& layer : stack) {
    x = relu(group_norm(cp4d_conv(x, layer), cfg_.gn_groups, layer.gn_gamma,
                        layer.gn_beta, static_cast<T>(cfg_.gn_eps)));
  }
  return x;
}

template <typename T>
Tensor<T> Slm<T>::encode_group(const Tensor<T>& sim, size_t group) const {
  if (group >= encoders_.size()) throw Error("slm: group index out of range");
  if (sim.dim(0) != encoders_[group][0].w_query.dim(1)) {
    throw DimensionError("slm: group " + std::to_string(group + 1) + " expects " +
                         std::to_string(encoders_[group][0].w_query.dim(1)) +
                         " input levels, got " + std::to_string(sim.dim(0)));
  }
  return run_stack(encoders_[group], sim);
}

template <typename T>
Tensor<T> Slm<T>::fuse_topdown(const std::vector<Tensor<T>>& encoded) const {
  if (encoded.empty() || encoded.size() != encoders_.size()) {
    throw DimensionError("slm: encoded group count mismatch");
  }
  Tensor<T> cur = encoded.back();
  for (size_t p = encoded.size(); p-- > 1;) {
    const Tensor<T>& below = encoded[p - 1];
    cur = upsample_bilinear(cur, below.dim(1), below.dim(2), 1);
    cur = add(cur, below);
    cur = run_stack(fusers_[p - 1], cur);
  }
  return mean_last2(cur);
}

template <typename T>
Tensor<T> Slm<T>::forward(const std::vector<Tensor<T>>& sim_pyramid) const {
  std::vector<Tensor<T>> encoded;
  for (size_t p = 0; p < sim_pyramid.size(); ++p) {
    encoded.push_back(encode_group(sim_pyramid[p], p));
  }
  return fuse_topdown(encoded);
}

template <typename T>
void Slm<T>::collect_params(const std::string& prefix, ParamList<T>& out) {
  auto push_stack = [&](const std::string& base, std::vector<Cp4dLayer<T>>& stack) {
    for (size_t d = 0; d < stack.size(); ++d) {
      const std::string name = base + ".l" + std::to_string(d + 1);
      out.push_back({name + ".wq", stack[d].w_query});
      out.push_back({name + ".ws", stack[d].w_support});
      out.push_back({name + ".gn_gamma", stack[d].gn_gamma});
      out.push_back({name + ".gn_beta", stack[d].gn_beta});
    }
  };
  for (size_t p = 0; p < encoders_.size(); ++p) {
    push_stack(prefix + ".enc" + std::to_string(p + 1), encoders_[p]);
  }
  for (size_t p = 0; p < fusers_.size(); ++p) {
    push_stack(prefix + ".fuse" + std::to_string(p + 1), fusers_[p]);
  }
}

template <typename T>
std::vector<typename Slm<T>::LayerFlops> Slm<T>::flop_report() const {
  std::vector<LayerFlops> out;
  auto add_stack = [&](const std::string& base, const std::vector<Cp4dLayer<T>>& stack) {
    for (size_t d = 0; d < stack.size(); ++d) {
      out.push_back({base + ".l" + std::to_string(d + 1),
                     stack[d].flops->cp4d.load(), stack[d].flops->dense_equiv.load()});
    }
  };
  for (size_t p = 0; p < encoders_.size(); ++p) {
    add_stack("enc" + std::to_string(p + 1), encoders_[p]);
  }
  for (size_t p = 0; p < fusers_.size(); ++p) {
    add_stack("fuse" + std::to_string(p + 1), fusers_[p]);
  }
  return out;
}

template <typename T>
void Slm<T>::reset_flops() {
  auto reset_stack = [](std::vector<Cp4dLayer<T>>& stack) {
    for (auto& layer : stack) {
      layer.flops->cp4d.store(0);
      layer.flops->dense_equiv.store(0);
    }
  };
  for (auto& s : encoders_) reset_stack(s);
  for (auto& s : fusers_) reset_stack(s);
}

template struct Cp4dLayer<float>;
template struct Cp4dLayer<double>;
template Tensor<float> cp4d_conv<float>(const Tensor<float>&, const Cp4dLayer<float>&);
template Tensor<double> cp4d_conv<double>(const Tensor<double>&, const Cp4dLayer<double>&);
template class Slm<float>;
template class Slm<double>;

}  // namespace ssc
