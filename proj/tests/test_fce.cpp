#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "ssc/fce.hpp"
#include "test_util.hpp"

using namespace ssc;
using testutil::rand_tensor;

namespace {
using D = Tensor<double>;

Fce<double> make_fce(uint64_t seed, int c = 8) {
  Rng rng(seed);
  return Fce<double>(FceConfig{}, {c}, {1}, rng);
}

// Fills every "trans" tensor with random values so the modulation path is live.
void liven_trans(Fce<double>& fce, uint64_t seed) {
  ParamList<double> ps;
  fce.collect_params("fce", ps);
  for (auto& p : ps) {
    if (p.name.find("trans") == std::string::npos) continue;
    Rng rng(mix_seed(seed, p.name.size() + p.name.back()));
    p.value.apply_update([&](std::vector<double>& w) {
      for (auto& v : w) v = rng.uniform(-0.5, 0.5);
    });
  }
}

struct Extracted {
  std::vector<std::vector<double>> w;  // [out][in]
  std::vector<double> b;
};

Extracted conv_params(const ParamList<double>& ps, const std::string& stem) {
  Extracted e;
  const Tensor<double>*wt = nullptr, *bt = nullptr;
  for (const auto& p : ps) {
    if (p.name == stem + ".w" || p.name == stem + ".w1") wt = &p.value;
    if (p.name == stem + ".b" || p.name == stem + ".b1") bt = &p.value;
  }
  REQUIRE(wt != nullptr);
  REQUIRE(bt != nullptr);
  const int64_t out = wt->dim(0), in = wt->dim(1);
  e.w.assign(out, std::vector<double>(in));
  for (int64_t o = 0; o < out; ++o) {
    for (int64_t i = 0; i < in; ++i) e.w[o][i] = wt->at({o, i, 0, 0});
  }
  e.b.assign(out, 0.0);
  for (int64_t o = 0; o < out; ++o) e.b[o] = (*bt)[o];
  return e;
}
}  // namespace

TEST_CASE("attention rows sum to one") {
  auto fce = make_fce(50);
  Rng rng(51);
  D fq = rand_tensor<double>({8, 3, 4}, rng);
  D fs = rand_tensor<double>({8, 2, 2, 3}, rng);
  D a = fce.attention(fq, fs, 0);
  REQUIRE(a.shape() == Shape{12, 12});
  for (int64_t r = 0; r < 12; ++r) {
    double sum = 0.0;
    for (int64_t c = 0; c < 12; ++c) sum += a[r * 12 + c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("zero logits give uniform attention") {
  auto fce = make_fce(52);
  ParamList<double> ps;
  fce.collect_params("fce", ps);
  for (auto& p : ps) {
    if (p.name.find("proj_q") != std::string::npos ||
        p.name.find("proj_k") != std::string::npos) {
      p.value.apply_update([](std::vector<double>& w) {
        std::fill(w.begin(), w.end(), 0.0);
      });
    }
  }
  Rng rng(53);
  D fq = rand_tensor<double>({8, 2, 2}, rng);
  D fs = rand_tensor<double>({8, 3, 2, 2}, rng);
  D a = fce.attention(fq, fs, 0);
  for (int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] == doctest::Approx(1.0 / 12.0).epsilon(1e-9));
  }
}

TEST_CASE("attention matches a per-position loop oracle") {
  auto fce = make_fce(54);
  Rng rng(55);
  const int64_t c = 8, h = 3, w = 3, eh = 2, ew = 2;
  D fq = rand_tensor<double>({c, h, w}, rng);
  D fs = rand_tensor<double>({c, 1, eh, ew}, rng);
  D a = fce.attention(fq, fs, 0);

  ParamList<double> ps;
  fce.collect_params("fce", ps);
  const auto pq = conv_params(ps, "fce.g1.proj_q");
  const auto pk = conv_params(ps, "fce.g1.proj_k");
  const int64_t ce = static_cast<int64_t>(pq.w.size());
  const int64_t nq = h * w, ns = eh * ew;

  auto embed_q = [&](int64_t pos) {
    std::vector<double> v(ce);
    for (int64_t o = 0; o < ce; ++o) {
      double acc = pq.b[o];
      for (int64_t i = 0; i < c; ++i) acc += pq.w[o][i] * fq[i * nq + pos];
      v[o] = acc;
    }
    return v;
  };
  auto embed_k = [&](int64_t pos) {
    std::vector<double> v(ce);
    for (int64_t o = 0; o < ce; ++o) {
      double acc = pk.b[o];
      for (int64_t i = 0; i < c; ++i) acc += pk.w[o][i] * fs[i * ns + pos];
      v[o] = acc;
    }
    return v;
  };
  for (int64_t q = 0; q < nq; ++q) {
    const auto qe = embed_q(q);
    std::vector<double> logits(ns);
    double mx = -1e300;
    for (int64_t s = 0; s < ns; ++s) {
      const auto ke = embed_k(s);
      double dot = 0.0;
      for (int64_t o = 0; o < ce; ++o) dot += qe[o] * ke[o];
      logits[s] = dot;
      mx = std::max(mx, dot);
    }
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (int64_t s = 0; s < ns; ++s) {
      CHECK(std::abs(a[q * ns + s] - logits[s] / z) < 1e-5);
    }
  }
}

TEST_CASE("zero-initialized modulation keeps enhance an identity") {
  auto fce = make_fce(56);
  Rng rng(57);
  D fq = rand_tensor<double>({8, 4, 4}, rng);
  D fs = rand_tensor<double>({8, 3, 2, 2}, rng);
  auto e = fce.enhance(fq, fs, 0);
  CHECK(testutil::max_abs_diff(e.query, fq) == 0.0);
  CHECK(testutil::max_abs_diff(e.exemplar, fs) == 0.0);
}

TEST_CASE("enhance preserves shapes across a property sweep") {
  Rng rng(58);
  for (int trial = 0; trial < 8; ++trial) {
    const int c = 4 * static_cast<int>(rng.uniform_int(1, 3));
    Rng crng(mix_seed(58, trial));
    Fce<double> fce(FceConfig{}, {c}, {1}, crng);
    const int64_t h = rng.uniform_int(2, 5), w = rng.uniform_int(2, 5);
    const int64_t k = rng.uniform_int(1, 3);
    const int64_t eh = rng.uniform_int(2, 4), ew = rng.uniform_int(2, 4);
    D fq = rand_tensor<double>({c, h, w}, rng);
    D fs = rand_tensor<double>({c, k, eh, ew}, rng);
    auto e = fce.enhance(fq, fs, 0);
    CHECK(e.query.shape() == fq.shape());
    CHECK(e.exemplar.shape() == fs.shape());
  }
}

TEST_CASE("enhance matches the naive per-position oracle") {
  auto fce = make_fce(59);
  liven_trans(fce, 60);
  Rng rng(61);
  const int64_t c = 8, h = 4, w = 4, eh = 2, ew = 2;
  D fq = rand_tensor<double>({c, h, w}, rng);
  D fs = rand_tensor<double>({c, 1, eh, ew}, rng);
  auto got = fce.enhance(fq, fs, 0);

  ParamList<double> ps;
  fce.collect_params("fce", ps);
  const auto pv = conv_params(ps, "fce.g1.proj_v");
  const auto pq = conv_params(ps, "fce.g1.proj_q");
  const auto pk = conv_params(ps, "fce.g1.proj_k");
  const auto tq = conv_params(ps, "fce.g1.trans_q");
  const auto ts = conv_params(ps, "fce.g1.trans_s");
  const int64_t ce = static_cast<int64_t>(pv.w.size());
  const int64_t nq = h * w, ns = eh * ew;

  auto apply = [&](const Extracted& e, const std::vector<double>& x) {
    std::vector<double> out(e.w.size());
    for (size_t o = 0; o < e.w.size(); ++o) {
      double acc = e.b[o];
      for (size_t i = 0; i < e.w[o].size(); ++i) acc += e.w[o][i] * x[i];
      out[o] = acc;
    }
    return out;
  };
  auto col_q = [&](int64_t pos) {
    std::vector<double> v(c);
    for (int64_t i = 0; i < c; ++i) v[i] = fq[i * nq + pos];
    return v;
  };
  auto col_s = [&](int64_t pos) {
    std::vector<double> v(c);
    for (int64_t i = 0; i < c; ++i) v[i] = fs[i * ns + pos];
    return v;
  };
  // mlp weights
  ParamList<double> all;
  fce.collect_params("fce", all);
  auto find = [&](const std::string& name) -> const Tensor<double>& {
    for (const auto& p : all) {
      if (p.name == name) return p.value;
    }
    FAIL("missing param ", name);
    static Tensor<double> dummy;
    return dummy;
  };
  auto mlp_eval = [&](const char* which, const std::vector<double>& x) {
    const auto& w1 = find(std::string("fce.g1.mlp_") + which + ".w1");
    const auto& b1 = find(std::string("fce.g1.mlp_") + which + ".b1");
    const auto& w2 = find(std::string("fce.g1.mlp_") + which + ".w2");
    const auto& b2 = find(std::string("fce.g1.mlp_") + which + ".b2");
    std::vector<double> hdn(c), out(c);
    for (int64_t o = 0; o < c; ++o) {
      double acc = b1[o];
      for (int64_t i = 0; i < c; ++i) acc += w1.at({o, i, 0, 0}) * x[i];
      hdn[o] = std::max(acc, 0.0);
    }
    for (int64_t o = 0; o < c; ++o) {
      double acc = b2[o];
      for (int64_t i = 0; i < c; ++i) acc += w2.at({o, i, 0, 0}) * hdn[i];
      out[o] = acc;
    }
    return out;
  };

  // attention from the oracle path
  std::vector<std::vector<double>> attn(nq, std::vector<double>(ns));
  for (int64_t q = 0; q < nq; ++q) {
    const auto qe = apply(pq, col_q(q));
    double mx = -1e300;
    for (int64_t s = 0; s < ns; ++s) {
      const auto ke = apply(pk, col_s(s));
      double dot = 0.0;
      for (int64_t o = 0; o < ce; ++o) dot += qe[o] * ke[o];
      attn[q][s] = dot;
      mx = std::max(mx, dot);
    }
    double z = 0.0;
    for (double& v : attn[q]) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : attn[q]) v /= z;
  }

  // query side: Fq + MLP(Fq) * Trans(sum_s A[q][s] * Vs[s])
  for (int64_t q = 0; q < nq; ++q) {
    std::vector<double> agg(ce, 0.0);
    for (int64_t s = 0; s < ns; ++s) {
      const auto vs = apply(pv, col_s(s));
      for (int64_t o = 0; o < ce; ++o) agg[o] += attn[q][s] * vs[o];
    }
    const auto mod = apply(tq, agg);
    const auto mlpv = mlp_eval("q", col_q(q));
    for (int64_t i = 0; i < c; ++i) {
      const double expect = fq[i * nq + q] + mlpv[i] * mod[i];
      CHECK(std::abs(got.query[i * nq + q] - expect) < 1e-5);
    }
  }
  // exemplar side: Fs + MLP(Fs) * Trans(sum_q A[q][s] * Vq[q])
  for (int64_t s = 0; s < ns; ++s) {
    std::vector<double> agg(ce, 0.0);
    for (int64_t q = 0; q < nq; ++q) {
      const auto vq = apply(pv, col_q(q));
      for (int64_t o = 0; o < ce; ++o) agg[o] += attn[q][s] * vq[o];
    }
    const auto mod = apply(ts, agg);
    const auto mlpv = mlp_eval("s", col_s(s));
    for (int64_t i = 0; i < c; ++i) {
      const double expect = fs[i * ns + s] + mlpv[i] * mod[i];
      CHECK(std::abs(got.exemplar[i * ns + s] - expect) < 1e-5);
    }
  }
}

TEST_CASE("enhance is permutation-equivariant over exemplars") {
  auto fce = make_fce(62);
  liven_trans(fce, 63);
  Rng rng(64);
  const int64_t c = 8, k = 3, eh = 2, ew = 2;
  D fq = rand_tensor<double>({c, 3, 3}, rng);
  D fs = rand_tensor<double>({c, k, eh, ew}, rng);
  auto base = fce.enhance(fq, fs, 0);

  const std::vector<int64_t> perm{2, 0, 1};
  std::vector<D> slices;
  for (int64_t kk : perm) {
    slices.push_back(reshape(narrow(fs, 1, kk, 1), {c, eh, ew}));
  }
  D fs_perm = stack_axis1(slices);
  auto permuted = fce.enhance(fq, fs_perm, 0);

  CHECK(testutil::max_abs_diff(permuted.query, base.query) < 1e-10);
  for (size_t i = 0; i < perm.size(); ++i) {
    D want = reshape(narrow(base.exemplar, 1, perm[i], 1), {c, eh, ew});
    D have = reshape(narrow(permuted.exemplar, 1, static_cast<int64_t>(i), 1),
                     {c, eh, ew});
    CHECK(testutil::max_abs_diff(want, have) < 1e-10);
  }
}

TEST_CASE("modulation shrinks linearly with the trans scale") {
  Rng rng(65);
  D fq = rand_tensor<double>({8, 3, 3}, rng);
  D fs = rand_tensor<double>({8, 2, 2, 2}, rng);

  auto deviation_at = [&](double t) {
    auto fce = make_fce(66);
    ParamList<double> ps;
    fce.collect_params("fce", ps);
    for (auto& p : ps) {
      if (p.name.find("trans") == std::string::npos) continue;
      Rng wrng(mix_seed(67, p.name.size() + p.name.back()));
      p.value.apply_update([&](std::vector<double>& w) {
        for (auto& v : w) v = t * wrng.uniform(-0.5, 0.5);
      });
    }
    auto e = fce.enhance(fq, fs, 0);
    return testutil::max_abs_diff(e.query, fq) + testutil::max_abs_diff(e.exemplar, fs);
  };
  const double d1 = deviation_at(0.2);
  const double d2 = deviation_at(0.1);
  CHECK(d1 > 0.0);
  CHECK(d1 / d2 == doctest::Approx(2.0).epsilon(0.05));
}
