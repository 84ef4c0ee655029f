#include "ssc/model.hpp"

#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "ssc/ssdt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ssc {

namespace {

template <typename T>
Tensor<T> to_precision(const Tensor<float>& x) {
  if constexpr (std::is_same_v<T, float>) {
    return x;
  } else {
    const auto& src = x.data();
    std::vector<T> data(src.size());
    for (size_t i = 0; i < src.size(); ++i) data[i] = static_cast<T>(src[i]);
    return Tensor<T>::from(x.shape(), std::move(data));
  }
}

}  // namespace

template <typename T>
std::vector<int> Model<T>::group_channels(const ModelConfig& cfg) {
  std::vector<int> out;
  int c = cfg.backbone.channels;
  for (size_t p = 0; p < cfg.backbone.levels.size(); ++p) {
    out.push_back(c);
    c *= 2;
  }
  return out;
}

template <typename T>
std::vector<int> Model<T>::group_levels(const ModelConfig& cfg) {
  return cfg.backbone.levels;
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, uint64_t seed)
    : cfg_(cfg),
      backbone_([&] {
        Rng rng(mix_seed(seed, 1));
        return ToyBackbone<T>(cfg.backbone, rng);
      }()),
      slm_([&] {
        Rng rng(mix_seed(seed, 3));
        return Slm<T>(cfg.slm, group_levels(cfg), rng);
      }()),
      decoder_([&] {
        Rng rng(mix_seed(seed, 4));
        return Decoder<T>(cfg.decoder, cfg.slm.widths.back(), rng);
      }()) {
  if (cfg_.roi_size < 1) throw Error("model: roi_size must be >= 1");
  // group-1 features are stride 8; the decoder must recover that factor
  if (cfg_.decoder.widths.size() != 3) {
    throw Error("model: decoder needs exactly 3 upsample blocks for stride-8 features");
  }
  // exemplar extents must survive the encoder strides
  int64_t ext = cfg_.roi_size;
  for (int s : cfg_.slm.support_strides) ext = (ext + 2 * (cfg_.slm.kernel / 2) -
                                                cfg_.slm.kernel) / s + 1;
  if (ext < 1) throw Error("model: roi_size too small for the SLM stride schedule");
  if (cfg_.fce.enabled) {
    Rng rng(mix_seed(seed, 2));
    fce_.emplace(cfg_.fce, group_channels(cfg_), group_levels(cfg_), rng);
  }
  backbone_.collect_params("backbone", params_);
  if (fce_) fce_->collect_params("fce", params_);
  slm_.collect_params("slm", params_);
  decoder_.collect_params("decoder", params_);
}

template <typename T>
typename Model<T>::Forward Model<T>::run(const Sample& s, const RunOptions& opts) const {
  validate_sample(s);
  Forward out;

  FeaturePyramid<T> pyr;
  std::vector<ExemplarBox> boxes;
  const size_t p_count = cfg_.backbone.levels.size();

  if (s.has_image()) {
    out.scale = opts.apply_dis ? dynamic_scale(s.boxes, opts.dis) : 1.0;
    Sample scaled = resize_sample(s, out.scale);
    out.image_h = scaled.image.dim(1);
    out.image_w = scaled.image.dim(2);
    Sample padded = pad_sample_to_multiple(scaled, 8ll << (p_count - 1));
    boxes = padded.boxes;
    pyr = backbone_.forward(to_precision<T>(padded.image));
  } else {
    int64_t ih = 0, iw = 0;
    FeaturePyramid<float> raw = load_pyramid<float>(s.feature_ref, &ih, &iw);
    for (auto& g : raw.groups) {
      typename FeaturePyramid<T>::Group group;
      group.stride = g.stride;
      for (auto& lvl : g.levels) group.levels.push_back(to_precision<T>(lvl));
      pyr.groups.push_back(std::move(group));
    }
    if (pyr.groups.size() != p_count) {
      throw DimensionError("model: feature pyramid has " +
                           std::to_string(pyr.groups.size()) + " groups, config wants " +
                           std::to_string(p_count));
    }
    out.scale = 1.0;  // DIS for precomputed features happens upstream
    out.image_h = ih;
    out.image_w = iw;
    boxes = s.boxes;
  }

  // exemplar features per (group, level); K stacked on axis 1
  const int64_t k_shots = static_cast<int64_t>(boxes.size());
  std::vector<std::vector<Tensor<T>>> q_levels(p_count);
  std::vector<std::vector<Tensor<T>>> s_levels(p_count);
  for (size_t p = 0; p < p_count; ++p) {
    const auto& group = pyr.groups[p];
    for (size_t l = 0; l < group.levels.size(); ++l) {
      const Tensor<T>& fq = group.levels[l];
      std::vector<Tensor<T>> rois;
      rois.reserve(static_cast<size_t>(k_shots));
      for (const auto& box : boxes) {
        rois.push_back(roi_align(fq, box, cfg_.roi_size, cfg_.roi_size,
                                 static_cast<double>(group.stride)));
      }
      Tensor<T> fs = stack_axis1(rois);
      if (opts.want_trace) out.raw_levels.push_back(fq);
      if (fce_) {
        auto enhanced = fce_->enhance(fq, fs, p, l);
        q_levels[p].push_back(enhanced.query);
        s_levels[p].push_back(enhanced.exemplar);
      } else {
        q_levels[p].push_back(fq);
        s_levels[p].push_back(fs);
      }
      if (opts.want_trace) out.enhanced_levels.push_back(q_levels[p].back());
    }
  }

  const int64_t dec_h = pyr.groups[0].levels[0].dim(1) * 8;
  const int64_t dec_w = pyr.groups[0].levels[0].dim(2) * 8;
  std::vector<Tensor<T>> maps;
  for (int64_t k = 0; k < k_shots; ++k) {
    std::vector<std::vector<Tensor<T>>> exemplar_groups(p_count);
    for (size_t p = 0; p < p_count; ++p) {
      for (const auto& es : s_levels[p]) {
        exemplar_groups[p].push_back(reshape(
            narrow(es, 1, k, 1), {es.dim(0), es.dim(2), es.dim(3)}));
      }
    }
    std::vector<Tensor<T>> sim = build_similarity_pyramid(q_levels, exemplar_groups);
    if (opts.want_similarity) out.similarity.push_back(sim);
    Tensor<T> fused = slm_.forward(sim);
    Tensor<T> dmap = decoder_.forward(fused, dec_h, dec_w);
    if (dec_h != out.image_h || dec_w != out.image_w) {
      dmap = narrow(narrow(dmap, 1, 0, out.image_h), 2, 0, out.image_w);
    }
    maps.push_back(dmap);
  }
  out.per_exemplar = maps;
  out.density = average_exemplars(maps);
  return out;
}

template <typename T>
double Model<T>::predicted_count(const Tensor<T>& density) {
  double acc = 0.0;
  for (T v : density.data()) acc += static_cast<double>(v);
  return acc;
}

template <typename T>
void Model<T>::save_checkpoint(const std::string& dir) const {
  fs::create_directories(fs::path(dir) / "params");
  json manifest;
  manifest["format"] = "sscount-checkpoint";
  manifest["version"] = 1;
  manifest["model"] = model_config_to_json(cfg_);
  json params = json::array();
  for (const auto& p : params_) {
    const std::string file = "params/" + p.name + ".ssdt";
    save_ssdt((fs::path(dir) / file).string(), p.value);
    params.push_back({{"name", p.name}, {"file", file}});
  }
  manifest["params"] = params;
  std::ofstream os((fs::path(dir) / "manifest.json").string());
  if (!os) throw IoError("checkpoint: cannot write manifest in " + dir);
  os << manifest.dump(2) << "\n";
}

template <typename T>
Model<T> Model<T>::load_checkpoint(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ifstream is(manifest_path);
  if (!is) throw IoError("checkpoint: cannot open: " + manifest_path);
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw IoError("checkpoint: bad JSON in " + manifest_path + ": " + e.what());
  }
  if (manifest.value("format", "") != "sscount-checkpoint") {
    throw IoError("checkpoint: unrecognized manifest in " + dir);
  }
  Model model(model_config_from_json(manifest.at("model")), 0);
  std::unordered_map<std::string, std::string> files;
  for (const auto& p : manifest.at("params")) {
    files[p.at("name").get<std::string>()] = p.at("file").get<std::string>();
  }
  for (auto& p : model.params_) {
    auto it = files.find(p.name);
    if (it == files.end()) throw IoError("checkpoint: missing tensor for " + p.name);
    Tensor<T> loaded = load_ssdt<T>((fs::path(dir) / it->second).string());
    if (loaded.shape() != p.value.shape()) {
      throw DimensionError("checkpoint: shape mismatch for " + p.name + ": " +
                           shape_str(loaded.shape()) + " vs " +
                           shape_str(p.value.shape()));
    }
    const auto& src = loaded.data();
    p.value.apply_update([&](std::vector<T>& dst) { dst = src; });
  }
  return model;
}

template class Model<float>;
template class Model<double>;

}  // namespace ssc
