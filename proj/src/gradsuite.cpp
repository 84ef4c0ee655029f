#include "ssc/gradsuite.hpp"

#include <cmath>

#include "ssc/gradcheck.hpp"
#include "ssc/model.hpp"
#include "ssc/nn.hpp"
#include "ssc/synth.hpp"
#include "ssc/train.hpp"

namespace ssc {

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;
constexpr double kEnvelopeTol = 1e-2;  // OT gradients go through a re-solve

using D = double;
using TensorD = Tensor<double>;

// Uniform values with |v| >= margin, keeping relu kinks at distance.
TensorD rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                    double margin = 1e-3) {
  const int64_t n = shape_numel(shape);
  std::vector<double> data(static_cast<size_t>(n));
  for (auto& v : data) {
    do {
      v = rng.uniform(lo, hi);
    } while (std::abs(v) < margin);
  }
  return TensorD::from(std::move(shape), std::move(data));
}

TensorD rand_positive(Shape shape, Rng& rng, double lo = 0.2, double hi = 1.0) {
  const int64_t n = shape_numel(shape);
  std::vector<double> data(static_cast<size_t>(n));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return TensorD::from(std::move(shape), std::move(data));
}

struct Suite {
  std::vector<GradSuiteEntry> entries;
  std::string filter;

  bool wants(const std::string& module) const { return filter.empty() || filter == module; }

  void add(const std::string& module, const std::string& check, double err,
           double tol = kTol) {
    entries.push_back({module, check, err, tol, err < tol});
  }

  // max over seeds of grad_check for f(x)
  void run(const std::string& module, const std::string& check,
           const std::function<TensorD(const TensorD&)>& f,
           const std::function<TensorD(Rng&)>& make_input, int seeds = 5,
           double tol = kTol) {
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(mix_seed(0xc0ffee, static_cast<uint64_t>(s) * 977 + check.size()));
      TensorD x = make_input(rng);
      worst = std::max(worst, grad_check(f, x, kEps).max_rel_err);
    }
    add(module, check, worst, tol);
  }
};

// Scalarize with fixed random weights so every output entry matters.
TensorD weighted_sum(const TensorD& y, uint64_t seed) {
  Rng rng(mix_seed(0x57a7ull, seed));
  std::vector<double> w(static_cast<size_t>(y.numel()));
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  TensorD wt = TensorD::from(y.shape(), std::move(w));
  return sum_all(mul(y, wt));
}

void tensor_checks(Suite& suite) {
  Rng fixed(42);
  TensorD b_fixed = rand_tensor({4, 2}, fixed);
  suite.run("tensor", "matmul_lhs",
            [&](const TensorD& x) { return sum_all(matmul(x, b_fixed)); },
            [](Rng& rng) { return rand_tensor({3, 4}, rng); });
  TensorD a_fixed = rand_tensor({3, 4}, fixed);
  suite.run("tensor", "matmul_rhs",
            [&](const TensorD& x) { return sum_all(matmul(a_fixed, x)); },
            [](Rng& rng) { return rand_tensor({4, 2}, rng); });
  suite.run("tensor", "softmax",
            [](const TensorD& x) { return weighted_sum(softmax(x, 1), 7); },
            [](Rng& rng) { return rand_tensor({3, 5}, rng, -2.0, 2.0); });
  suite.run("tensor", "relu",
            [](const TensorD& x) { return weighted_sum(relu(x), 11); },
            [](Rng& rng) { return rand_tensor({4, 4}, rng); });
  suite.run("tensor", "add_mul_chain",
            [](const TensorD& x) {
              TensorD y = mul(add(scale(x, 1.7), add_scalar(x, 0.3)), x);
              return sum_all(sub(y, scale(x, 0.5)));
            },
            [](Rng& rng) { return rand_tensor({3, 3}, rng); });
  suite.run("tensor", "structural_chain",
            [](const TensorD& x) {
              TensorD t = transpose2d(reshape(x, {4, 6}));
              TensorD nr = narrow(t, 0, 1, 4);
              std::vector<TensorD> parts{nr, scale(nr, 2.0)};
              return weighted_sum(mean_last2(stack(parts)), 13);
            },
            [](Rng& rng) { return rand_tensor({2, 3, 4}, rng); });
  suite.run("tensor", "stack_axis1",
            [](const TensorD& x) {
              std::vector<TensorD> parts{x, scale(x, -0.5), add_scalar(x, 1.0)};
              return weighted_sum(stack_axis1(parts), 17);
            },
            [](Rng& rng) { return rand_tensor({2, 3, 2}, rng); });
}

void nn_checks(Suite& suite) {
  Rng fixed(43);
  TensorD w_fixed = rand_tensor({3, 2, 3, 3}, fixed, -0.5, 0.5);
  TensorD b_fixed = rand_tensor({3}, fixed, -0.2, 0.2);
  suite.run("nn", "conv2d_x",
            [&](const TensorD& x) {
              return weighted_sum(conv2d(x, w_fixed, b_fixed, 1, 1), 19);
            },
            [](Rng& rng) { return rand_tensor({2, 5, 5}, rng); });
  TensorD x_fixed = rand_tensor({2, 5, 5}, fixed);
  suite.run("nn", "conv2d_w",
            [&](const TensorD& w) {
              return weighted_sum(conv2d(x_fixed, w, b_fixed, 2, 1), 23);
            },
            [](Rng& rng) { return rand_tensor({3, 2, 3, 3}, rng, -0.5, 0.5); });
  suite.run("nn", "conv2d_bias",
            [&](const TensorD& b) {
              return weighted_sum(conv2d(x_fixed, w_fixed, b, 1, 1), 29);
            },
            [](Rng& rng) { return rand_tensor({3}, rng); });
  suite.run("nn", "upsample_3d",
            [](const TensorD& x) {
              return weighted_sum(upsample_bilinear(x, 5, 7, 1), 31);
            },
            [](Rng& rng) { return rand_tensor({2, 3, 4}, rng); });
  suite.run("nn", "upsample_5d_axis1",
            [](const TensorD& x) {
              return weighted_sum(upsample_bilinear(x, 4, 5, 1), 37);
            },
            [](Rng& rng) { return rand_tensor({1, 2, 3, 2, 2}, rng); });
  TensorD gamma_fixed = rand_positive({4}, fixed, 0.5, 1.5);
  TensorD beta_fixed = rand_tensor({4}, fixed, -0.3, 0.3);
  suite.run("nn", "group_norm_x",
            [&](const TensorD& x) {
              return weighted_sum(group_norm(x, 2, gamma_fixed, beta_fixed, 1e-5), 41);
            },
            [](Rng& rng) { return rand_tensor({4, 3, 3}, rng); });
  TensorD gx_fixed = rand_tensor({4, 3, 3}, fixed);
  suite.run("nn", "group_norm_gamma",
            [&](const TensorD& g) {
              return weighted_sum(group_norm(gx_fixed, 2, g, beta_fixed, 1e-5), 43);
            },
            [](Rng& rng) { return rand_positive({4}, rng, 0.5, 1.5); });
  suite.run("nn", "group_norm_beta",
            [&](const TensorD& b) {
              return weighted_sum(group_norm(gx_fixed, 2, gamma_fixed, b, 1e-5), 47);
            },
            [](Rng& rng) { return rand_tensor({4}, rng); });
}

void roi_checks(Suite& suite) {
  ExemplarBox box{3.1, 2.4, 10.6, 9.2};
  suite.run("roi", "roi_align_feat",
            [&](const TensorD& f) {
              return weighted_sum(roi_align(f, box, 3, 3, 2.0), 53);
            },
            [](Rng& rng) { return rand_tensor({2, 6, 6}, rng); });
}

void fce_checks(Suite& suite) {
  auto make_fce = [](Rng& rng) {
    FceConfig cfg;
    Fce<double> fce(cfg, {8}, {1}, rng);
    ParamList<double> ps;
    fce.collect_params("fce", ps);
    for (auto& p : ps) {
      if (p.name.find("trans") != std::string::npos) {
        Rng prng(mix_seed(0x7a5, p.name.size()));
        p.value.apply_update([&](std::vector<double>& w) {
          for (auto& v : w) v = prng.uniform(-0.4, 0.4);
        });
      }
    }
    return fce;
  };
  Rng setup(99);
  auto fce = make_fce(setup);
  TensorD fs_fixed = rand_tensor({8, 2, 3, 3}, setup);
  suite.run("fce", "enhance_wrt_query",
            [&](const TensorD& fq) {
              auto e = fce.enhance(fq, fs_fixed, 0);
              return add(weighted_sum(e.query, 59), weighted_sum(e.exemplar, 61));
            },
            [](Rng& rng) { return rand_tensor({8, 4, 4}, rng); }, 3);
  TensorD fq_fixed = rand_tensor({8, 4, 4}, setup);
  suite.run("fce", "enhance_wrt_exemplar",
            [&](const TensorD& fs) {
              auto e = fce.enhance(fq_fixed, fs, 0);
              return add(weighted_sum(e.query, 67), weighted_sum(e.exemplar, 71));
            },
            [](Rng& rng) { return rand_tensor({8, 2, 3, 3}, rng); }, 3);
}

void similarity_checks(Suite& suite) {
  Rng fixed(44);
  TensorD es_fixed = rand_positive({4, 2, 2}, fixed);
  suite.run("similarity", "cosine4d_wrt_query",
            [&](const TensorD& eq) {
              return weighted_sum(cosine_similarity_4d(eq, es_fixed), 73);
            },
            [](Rng& rng) { return rand_positive({4, 3, 3}, rng); });
  TensorD eq_fixed = rand_positive({4, 3, 3}, fixed);
  suite.run("similarity", "cosine4d_wrt_exemplar",
            [&](const TensorD& es) {
              return weighted_sum(cosine_similarity_4d(eq_fixed, es), 79);
            },
            [](Rng& rng) { return rand_positive({4, 2, 2}, rng); });
}

void slm_checks(Suite& suite) {
  auto make_layer = [](Rng& rng, int cin, int cout, int ss) {
    Cp4dLayer<double> layer;
    layer.w_query = rand_tensor({cout, cin, 3, 3}, rng, -0.4, 0.4);
    layer.w_support = rand_tensor({cout, cin, 3, 3}, rng, -0.4, 0.4);
    layer.gn_gamma = rand_positive({cout}, rng, 0.5, 1.5);
    layer.gn_beta = rand_tensor({cout}, rng, -0.2, 0.2);
    layer.stride_q = 1;
    layer.stride_s = ss;
    return layer;
  };
  Rng fixed(45);
  auto layer_s1 = make_layer(fixed, 2, 3, 1);
  auto layer_s2 = make_layer(fixed, 2, 3, 2);
  suite.run("slm", "cp4d_wrt_input_stride1",
            [&](const TensorD& s) { return weighted_sum(cp4d_conv(s, layer_s1), 83); },
            [](Rng& rng) { return rand_tensor({2, 3, 3, 3, 3}, rng); }, 3);
  suite.run("slm", "cp4d_wrt_input_stride2",
            [&](const TensorD& s) { return weighted_sum(cp4d_conv(s, layer_s2), 89); },
            [](Rng& rng) { return rand_tensor({2, 4, 4, 4, 4}, rng); }, 3);
  TensorD s_fixed = rand_tensor({2, 3, 3, 3, 3}, fixed);
  suite.run("slm", "cp4d_wrt_wquery",
            [&](const TensorD& w) {
              Cp4dLayer<double> layer = layer_s1;
              layer.w_query = w;
              return weighted_sum(cp4d_conv(s_fixed, layer), 97);
            },
            [](Rng& rng) { return rand_tensor({3, 2, 3, 3}, rng, -0.4, 0.4); }, 3);
  suite.run("slm", "cp4d_wrt_wsupport",
            [&](const TensorD& w) {
              Cp4dLayer<double> layer = layer_s1;
              layer.w_support = w;
              return weighted_sum(cp4d_conv(s_fixed, layer), 101);
            },
            [](Rng& rng) { return rand_tensor({3, 2, 3, 3}, rng, -0.4, 0.4); }, 3);

  SlmConfig cfg;
  cfg.widths = {4, 8};
  cfg.support_strides = {2, 2};
  cfg.gn_groups = 2;
  Rng slm_rng(46);
  Slm<double> slm(cfg, {2, 2}, slm_rng);
  TensorD sim2_fixed = rand_positive({2, 2, 3, 4, 4}, slm_rng, 0.0, 1.0);
  suite.run("slm", "encode_fuse_wrt_sim",
            [&](const TensorD& sim1) {
              std::vector<TensorD> pyr{sim1, sim2_fixed};
              return weighted_sum(slm.forward(pyr), 103);
            },
            [](Rng& rng) { return rand_positive({2, 4, 6, 4, 4}, rng, 0.0, 1.0); }, 2);
}

void decoder_checks(Suite& suite) {
  DecoderConfig cfg;
  cfg.widths = {4, 2, 2};
  Rng rng(47);
  Decoder<double> dec(cfg, 3, rng);
  suite.run("decoder", "decode_wrt_fused",
            [&](const TensorD& m) { return sum_all(dec.forward(m, 16, 24)); },
            [](Rng& rng2) { return rand_tensor({3, 2, 3}, rng2); }, 3);
}

void loss_checks(Suite& suite) {
  const std::vector<std::array<double, 2>> points{{2.5, 3.0}, {6.0, 5.5}};
  suite.run("loss", "mse_wrt_density",
            [&](const TensorD& d) { return mse_density_loss(d, points, 1.5); },
            [](Rng& rng) { return rand_positive({1, 8, 8}, rng, 0.0, 0.5); });
  OtConfig ot;
  ot.eps = 0.01;
  ot.tau = 0.5;
  ot.pool_stride = 2;
  suite.run("loss", "generalized_envelope_wrt_density",
            [&](const TensorD& d) { return generalized_loss(d, points, ot); },
            [](Rng& rng) { return rand_positive({1, 8, 8}, rng, 0.05, 0.5); }, 3,
            kEnvelopeTol);
}

// Finite differences over every parameter tensor of the small two-group
// pipeline, against one recorded backward pass.
void pipeline_checks(Suite& suite) {
  ModelConfig cfg;
  cfg.backbone.channels = 8;
  cfg.backbone.levels = {1, 1};
  cfg.roi_size = 4;
  cfg.slm.widths = {4, 8};
  cfg.slm.support_strides = {2, 2};
  cfg.slm.gn_groups = 2;
  cfg.decoder.widths = {4, 2, 2};
  Model<double> model(cfg, 7);

  for (auto& p : model.params()) {
    if (p.name.find("trans") != std::string::npos) {
      Rng prng(mix_seed(0x7a55, p.name.size()));
      p.value.apply_update([&](std::vector<double>& w) {
        for (auto& v : w) v = prng.uniform(-0.3, 0.3);
      });
    }
  }

  SynthConfig synth;
  synth.image_h = 32;
  synth.image_w = 48;
  synth.count_min = 2;
  synth.count_max = 3;
  synth.shots = 2;
  synth.distractor_min = 1;
  synth.distractor_max = 1;
  synth.blob_half_min = 4.0;
  synth.blob_half_max = 7.0;
  synth.seed = 2024;
  const Sample sample = synth_sample(synth, 0);

  typename Model<double>::RunOptions opts;
  opts.apply_dis = false;

  OtConfig ot;
  ot.pool_stride = 4;

  enum class LossKind { mse, generalized };
  auto eval_loss = [&](LossKind kind) {
    auto fwd = model.run(sample, opts);
    return kind == LossKind::mse
               ? mse_density_loss(fwd.density, sample.points, 1.5)
               : generalized_loss(fwd.density, sample.points, ot);
  };

  for (LossKind kind : {LossKind::mse, LossKind::generalized}) {
    const bool envelope = kind == LossKind::generalized;
    TensorD loss = eval_loss(kind);
    loss.backward();

    double worst = 0.0;
    Rng pick(mix_seed(0x91c4, envelope ? 1 : 0));
    const int64_t per_tensor = envelope ? 3 : 5;
    for (auto& p : model.params()) {
      std::vector<double> bp(static_cast<size_t>(p.value.numel()), 0.0);
      if (p.value.has_grad()) bp = p.value.grad();
      const std::vector<double> base = p.value.data();
      const int64_t n = p.value.numel();
      for (int64_t c = 0; c < std::min<int64_t>(per_tensor, n); ++c) {
        const size_t j = static_cast<size_t>(pick.uniform_int(0, n - 1));
        double fp, fm;
        {
          NoGradGuard ng;
          p.value.apply_update([&](std::vector<double>& w) { w[j] = base[j] + kEps; });
          fp = eval_loss(kind).data()[0];
          p.value.apply_update([&](std::vector<double>& w) { w[j] = base[j] - kEps; });
          fm = eval_loss(kind).data()[0];
          p.value.apply_update([&](std::vector<double>& w) { w[j] = base[j]; });
        }
        const double fd = (fp - fm) / (2.0 * kEps);
        const double rel =
            std::abs(fd - bp[j]) / std::max({std::abs(fd), std::abs(bp[j]), 1e-3});
        worst = std::max(worst, rel);
      }
      p.value.zero_grad();
    }
    suite.add("pipeline", envelope ? "full_generalized_loss" : "full_mse_loss", worst,
              envelope ? kEnvelopeTol : kTol);
  }
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(const std::string& module_filter) {
  Suite suite;
  suite.filter = module_filter;
  if (suite.wants("tensor")) tensor_checks(suite);
  if (suite.wants("nn")) nn_checks(suite);
  if (suite.wants("roi")) roi_checks(suite);
  if (suite.wants("fce")) fce_checks(suite);
  if (suite.wants("similarity")) similarity_checks(suite);
  if (suite.wants("slm")) slm_checks(suite);
  if (suite.wants("decoder")) decoder_checks(suite);
  if (suite.wants("loss")) loss_checks(suite);
  if (suite.wants("pipeline")) pipeline_checks(suite);
  if (suite.entries.empty()) {
    throw Error("gradcheck: unknown module '" + module_filter + "'");
  }
  return suite.entries;
}

}  // namespace ssc
