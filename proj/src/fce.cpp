#include "ssc/fce.hpp"

#include "ssc/nn.hpp"

namespace ssc {

namespace {

// 1x1 conv on a channel-major matrix [Cin, N] -> [Cout, N].
template <typename T>
Tensor<T> conv1x1_cols(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int64_t n = x.dim(1);
  Tensor<T> as_map = reshape(x, {x.dim(0), n, 1});
  return reshape(conv2d(as_map, w, b, 1, 0), {w.dim(0), n});
}

}  // namespace

template <typename T>
Fce<T>::Fce(const FceConfig& cfg, const std::vector<int>& group_channels,
            const std::vector<int>& group_levels, Rng& rng)
    : cfg_(cfg), channels_(group_channels) {
  if (group_channels.size() != group_levels.size()) {
    throw Error("fce: group channel/level lists disagree");
  }
  if (cfg_.ratio < 1) throw Error("fce: ratio must be >= 1");
  for (size_t p = 0; p < group_channels.size(); ++p) {
    const int c = group_channels[p];
    const int ce = c / cfg_.ratio;
    if (ce < 1 || c % cfg_.ratio != 0) {
      throw Error("fce: channels " + std::to_string(c) + " not divisible by ratio " +
                  std::to_string(cfg_.ratio));
    }
    const int copies = cfg_.per_level ? group_levels[p] : 1;
    std::vector<Params> sets;
    for (int i = 0; i < copies; ++i) {
      Params ps;
      ps.proj_v_w = kaiming_leaf<T>({ce, c, 1, 1}, c, rng);
      ps.proj_v_b = zero_leaf<T>({ce});
      ps.proj_q_w = kaiming_leaf<T>({ce, c, 1, 1}, c, rng);
      ps.proj_q_b = zero_leaf<T>({ce});
      ps.proj_k_w = kaiming_leaf<T>({ce, c, 1, 1}, c, rng);
      ps.proj_k_b = zero_leaf<T>({ce});
      ps.mlp_q_w1 = kaiming_leaf<T>({c, c, 1, 1}, c, rng);
      ps.mlp_q_b1 = zero_leaf<T>({c});
      ps.mlp_q_w2 = kaiming_leaf<T>({c, c, 1, 1}, c, rng);
      ps.mlp_q_b2 = zero_leaf<T>({c});
      ps.mlp_s_w1 = kaiming_leaf<T>({c, c, 1, 1}, c, rng);
      ps.mlp_s_b1 = zero_leaf<T>({c});
      ps.mlp_s_w2 = kaiming_leaf<T>({c, c, 1, 1}, c, rng);
      ps.mlp_s_b2 = zero_leaf<T>({c});
      ps.trans_q_w = zero_leaf<T>({c, ce, 1, 1});
      ps.trans_q_b = zero_leaf<T>({c});
      ps.trans_s_w = zero_leaf<T>({c, ce, 1, 1});
      ps.trans_s_b = zero_leaf<T>({c});
      sets.push_back(std::move(ps));
    }
    params_.push_back(std::move(sets));
  }
}

template <typename T>
const typename Fce<T>::Params& Fce<T>::at(size_t group, size_t level) const {
  if (group >= params_.size()) throw Error("fce: group index out of range");
  const auto& sets = params_[group];
  return cfg_.per_level ? sets.at(level) : sets.front();
}

template <typename T>
Tensor<T> Fce<T>::attention(const Tensor<T>& fq, const Tensor<T>& fs, size_t group,
                            size_t level) const {
  const Params& ps = at(group, level);
  if (fq.dim(0) != fs.dim(0)) {
    throw DimensionError("fce: channel mismatch " + shape_str(fq.shape()) + " vs " +
                         shape_str(fs.shape()));
  }
  const int64_t hw = fq.dim(1) * fq.dim(2);
  const int64_t khw = fs.dim(1) * fs.dim(2) * fs.dim(3);
  Tensor<T> q = conv1x1_cols(reshape(fq, {fq.dim(0), hw}), ps.proj_q_w, ps.proj_q_b);
  Tensor<T> k = conv1x1_cols(reshape(fs, {fs.dim(0), khw}), ps.proj_k_w, ps.proj_k_b);
  return softmax(matmul(transpose2d(q), k), 1);
}

template <typename T>
typename Fce<T>::Enhanced Fce<T>::enhance(const Tensor<T>& fq, const Tensor<T>& fs,
                                          size_t group, size_t level) const {
  const Params& ps = at(group, level);
  if (fq.dim(0) != fs.dim(0)) {
    throw DimensionError("fce: channel mismatch " + shape_str(fq.shape()) + " vs " +
                         shape_str(fs.shape()));
  }
  const int64_t c = fq.dim(0), h = fq.dim(1), w = fq.dim(2);
  const int64_t k = fs.dim(1), eh = fs.dim(2), ew = fs.dim(3);
  const int64_t hw = h * w, khw = k * eh * ew;

  Tensor<T> fq_cols = reshape(fq, {c, hw});
  Tensor<T> fs_cols = reshape(fs, {c, khw});

  Tensor<T> q = conv1x1_cols(fq_cols, ps.proj_q_w, ps.proj_q_b);
  Tensor<T> km = conv1x1_cols(fs_cols, ps.proj_k_w, ps.proj_k_b);
  Tensor<T> logits = matmul(transpose2d(q), km);
  Tensor<T> attn = softmax(logits, 1);
  Tensor<T> attn_s = cfg_.dual_softmax ? softmax(logits, 0) : attn;

  Tensor<T> vq = conv1x1_cols(fq_cols, ps.proj_v_w, ps.proj_v_b);
  Tensor<T> vs = conv1x1_cols(fs_cols, ps.proj_v_w, ps.proj_v_b);

  auto mlp = [&](const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1,
                 const Tensor<T>& w2, const Tensor<T>& b2) {
    return conv1x1_cols(relu(conv1x1_cols(x, w1, b1)), w2, b2);
  };

  // query: residual + MLP(Fq) ⊙ Trans(Vs A^T)
  Tensor<T> agg_q = matmul(vs, transpose2d(attn));                  // [Ce, HW]
  Tensor<T> mod_q = conv1x1_cols(agg_q, ps.trans_q_w, ps.trans_q_b);  // [C, HW]
  Tensor<T> eq_cols = add(fq_cols, mul(mlp(fq_cols, ps.mlp_q_w1, ps.mlp_q_b1,
                                           ps.mlp_q_w2, ps.mlp_q_b2),
                                       mod_q));

  // exemplar: residual + MLP(Fs) ⊙ Trans(Vq A)
  Tensor<T> agg_s = matmul(vq, attn_s);                              // [Ce, Khw]
  Tensor<T> mod_s = conv1x1_cols(agg_s, ps.trans_s_w, ps.trans_s_b);  // [C, Khw]
  Tensor<T> es_cols = add(fs_cols, mul(mlp(fs_cols, ps.mlp_s_w1, ps.mlp_s_b1,
                                           ps.mlp_s_w2, ps.mlp_s_b2),
                                       mod_s));

  return {reshape(eq_cols, {c, h, w}), reshape(es_cols, {c, k, eh, ew})};
}

template <typename T>
void Fce<T>::collect_params(const std::string& prefix, ParamList<T>& out) {
  for (size_t p = 0; p < params_.size(); ++p) {
    for (size_t l = 0; l < params_[p].size(); ++l) {
      std::string base = prefix + ".g" + std::to_string(p + 1);
      if (cfg_.per_level) base += "l" + std::to_string(l + 1);
      Params& ps = params_[p][l];
      auto push = [&](const char* name, Tensor<T>& t) {
        out.push_back({base + "." + name, t});
      };
      push("proj_v.w", ps.proj_v_w);
      push("proj_v.b", ps.proj_v_b);
      push("proj_q.w", ps.proj_q_w);
      push("proj_q.b", ps.proj_q_b);
      push("proj_k.w", ps.proj_k_w);
      push("proj_k.b", ps.proj_k_b);
      push("mlp_q.w1", ps.mlp_q_w1);
      push("mlp_q.b1", ps.mlp_q_b1);
      push("mlp_q.w2", ps.mlp_q_w2);
      push("mlp_q.b2", ps.mlp_q_b2);
      push("mlp_s.w1", ps.mlp_s_w1);
      push("mlp_s.b1", ps.mlp_s_b1);
      push("mlp_s.w2", ps.mlp_s_w2);
      push("mlp_s.b2", ps.mlp_s_b2);
      push("trans_q.w", ps.trans_q_w);
      push("trans_q.b", ps.trans_q_b);
      push("trans_s.w", ps.trans_s_w);
      push("trans_s.b", ps.trans_s_b);
    }
  }
}

template class Fce<float>;
template class Fce<double>;

}  // namespace ssc
