#include "ssc/backbone.hpp"

#include "ssc/nn.hpp"

namespace ssc {

template <typename T>
typename ToyBackbone<T>::Conv ToyBackbone<T>::make_conv(int cin, int cout, int k,
                                                        Rng& rng) {
  Conv c;
  c.w = kaiming_leaf<T>({cout, cin, k, k}, static_cast<int64_t>(cin) * k * k, rng,
                        !cfg_.frozen);
  c.b = zero_leaf<T>({cout}, !cfg_.frozen);
  return c;
}

template <typename T>
ToyBackbone<T>::ToyBackbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.channels < 2 || cfg_.channels % 2 != 0) {
    throw Error("backbone: channels must be even and >= 2");
  }
  if (cfg_.levels.empty()) throw Error("backbone: needs at least one group");
  for (int l : cfg_.levels) {
    if (l < 1) throw Error("backbone: each group needs at least one level");
  }
  const int c = cfg_.channels;
  stem_.push_back(make_conv(3, c / 2, 3, rng));
  stem_.push_back(make_conv(c / 2, c / 2, 3, rng));
  stem_.push_back(make_conv(c / 2, c, 3, rng));
  int width = c;
  for (size_t p = 0; p < cfg_.levels.size(); ++p) {
    if (p > 0) {
      downs_.push_back(make_conv(width, width * 2, 3, rng));
      width *= 2;
    }
    std::vector<Conv> group;
    for (int l = 0; l < cfg_.levels[p]; ++l) group.push_back(make_conv(width, width, 3, rng));
    blocks_.push_back(std::move(group));
  }
}

template <typename T>
FeaturePyramid<T> ToyBackbone<T>::forward(const Tensor<T>& image) const {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw DimensionError("backbone: expected [3,H,W], got " + shape_str(image.shape()));
  }
  const int64_t p_count = static_cast<int64_t>(cfg_.levels.size());
  const int64_t divisor = 8ll << (p_count - 1);
  if (image.dim(1) % divisor != 0 || image.dim(2) % divisor != 0) {
    throw DimensionError("backbone: image extents " + shape_str(image.shape()) +
                         " must be divisible by " + std::to_string(divisor));
  }
  Tensor<T> x = image;
  for (const auto& conv : stem_) x = relu(conv2d(x, conv.w, conv.b, 2, 1));

  FeaturePyramid<T> pyr;
  for (size_t p = 0; p < blocks_.size(); ++p) {
    if (p > 0) x = relu(conv2d(x, downs_[p - 1].w, downs_[p - 1].b, 2, 1));
    typename FeaturePyramid<T>::Group group;
    group.stride = group_stride(p);
    for (const auto& conv : blocks_[p]) {
      x = relu(conv2d(x, conv.w, conv.b, 1, 1));
      group.levels.push_back(x);
    }
    pyr.groups.push_back(std::move(group));
  }
  pyr.validate();
  return pyr;
}

template <typename T>
void ToyBackbone<T>::collect_params(const std::string& prefix, ParamList<T>& out) {
  auto push = [&](const std::string& name, Conv& c) {
    out.push_back({prefix + "." + name + ".w", c.w});
    out.push_back({prefix + "." + name + ".b", c.b});
  };
  for (size_t i = 0; i < stem_.size(); ++i) push("stem" + std::to_string(i + 1), stem_[i]);
  for (size_t p = 0; p < blocks_.size(); ++p) {
    if (p > 0) push("down" + std::to_string(p), downs_[p - 1]);
    for (size_t l = 0; l < blocks_[p].size(); ++l) {
      push("g" + std::to_string(p + 1) + "b" + std::to_string(l + 1), blocks_[p][l]);
    }
  }
}

template class ToyBackbone<float>;
template class ToyBackbone<double>;

}  // namespace ssc
