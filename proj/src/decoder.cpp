#include "ssc/decoder.hpp"

#include "ssc/nn.hpp"

namespace ssc {

template <typename T>
Decoder<T>::Decoder(const DecoderConfig& cfg, int in_channels, Rng& rng) : cfg_(cfg) {
  if (cfg_.widths.empty()) throw Error("decoder: needs at least one block");
  int cin = in_channels;
  for (int width : cfg_.widths) {
    Conv c;
    c.w = kaiming_leaf<T>({width, cin, 3, 3}, static_cast<int64_t>(cin) * 9, rng);
    c.b = zero_leaf<T>({width});
    blocks_.push_back(std::move(c));
    cin = width;
  }
  head_.w = kaiming_leaf<T>({1, cin, 1, 1}, cin, rng);
  head_.b = zero_leaf<T>({1});
}

template <typename T>
Tensor<T> Decoder<T>::forward(const Tensor<T>& m, int64_t out_h, int64_t out_w) const {
  if (m.ndim() != 3) {
    throw DimensionError("decoder: expected [C,H,W], got " + shape_str(m.shape()));
  }
  const int64_t ratio = static_cast<int64_t>(1) << blocks_.size();
  if (m.dim(1) * ratio != out_h || m.dim(2) * ratio != out_w) {
    throw DimensionError("decoder: target " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " is not input extents times 2^" +
                         std::to_string(blocks_.size()) + " for " + shape_str(m.shape()));
  }
  Tensor<T> x = m;
  for (const auto& block : blocks_) {
    x = relu(conv2d(x, block.w, block.b, 1, 1));
    x = upsample_bilinear(x, x.dim(1) * 2, x.dim(2) * 2, 1);
  }
  return relu(conv2d(x, head_.w, head_.b, 1, 0));
}

template <typename T>
void Decoder<T>::collect_params(const std::string& prefix, ParamList<T>& out) {
  for (size_t i = 0; i < blocks_.size(); ++i) {
    out.push_back({prefix + ".b" + std::to_string(i + 1) + ".w", blocks_[i].w});
    out.push_back({prefix + ".b" + std::to_string(i + 1) + ".b", blocks_[i].b});
  }
  out.push_back({prefix + ".head.w", head_.w});
  out.push_back({prefix + ".head.b", head_.b});
}

template <typename T>
Tensor<T> average_exemplars(const std::vector<Tensor<T>>& maps) {
  if (maps.empty()) throw DimensionError("average_exemplars: empty list");
  Tensor<T> acc = maps[0];
  for (size_t k = 1; k < maps.size(); ++k) {
    if (maps[k].shape() != acc.shape()) {
      throw DimensionError("average_exemplars: extent mismatch " +
                           shape_str(maps[k].shape()) + " vs " + shape_str(acc.shape()));
    }
    acc = add(acc, maps[k]);
  }
  return scale(acc, T(1) / static_cast<T>(maps.size()));
}

template class Decoder<float>;
template class Decoder<double>;
template Tensor<float> average_exemplars<float>(const std::vector<Tensor<float>>&);
template Tensor<double> average_exemplars<double>(const std::vector<Tensor<double>>&);

}  // namespace ssc
