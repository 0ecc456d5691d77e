#pragma once

// Fixed-seed property suites behind `veca verify`.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "veca/analysis.hpp"
#include "veca/distill.hpp"
#include "veca/elastic.hpp"
#include "veca/grad_check.hpp"

namespace veca {

struct PropertyResult {
  std::string suite;
  std::string name;
  bool pass = false;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  // Corrupts one projection weight on the checked side of every comparison;
  // used as a negative control.
  bool inject_fault = false;
};

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = T(scale * rng.uniform(-1.0, 1.0));
  return Tensor<T>(shape, std::move(v), requires_grad);
}

/// Random attention parameters with O(1) weights so score differences matter.
template <typename T>
AttnParams<T> random_attn_params(std::size_t dim, std::size_t heads, Rng& rng, double scale = 0.5) {
  auto lin = [&] {
    return Linear<T>{random_tensor<T>({dim, dim}, rng, scale, true), random_tensor<T>({dim}, rng, scale, true)};
  };
  AttnParams<T> p{lin(), lin(), lin(), lin(), heads};
  p.validate();
  return p;
}

template <typename T>
Tensor<T> random_coords(std::size_t tokens, Rng& rng) {
  return random_tensor<T>({tokens, 2}, rng, 1.0);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline void corrupt(Tensor<double>& w) {
  auto d = w.mutable_data();
  d[0] += 1e-3;
}

}  // namespace detail

inline std::vector<PropertyResult> verify_attention(const VerifyOptions& opt) {
  std::vector<PropertyResult> out;
  Rng rng(opt.seed, "verify-attention");
  double worst = 0.0, worst_row = 0.0;
  std::size_t cases = 0;
  bool rows_ok = true;
  const std::size_t cs[] = {2, 4, 8}, ds[] = {8, 16}, hs[] = {1, 2};
  for (std::size_t k = 0; k < 60; ++k) {
    const std::size_t c = cs[k % 3], d = ds[(k / 3) % 2], h = hs[(k / 6) % 2];
    const std::size_t tokens = c + 1 + rng.below(32 - c);
    auto p = random_attn_params<double>(d, h, rng);
    const RopeSpec rope(d / h);
    const auto x = random_tensor<double>({tokens, d}, rng);
    const auto coords = random_coords<double>(tokens, rng);
    AttentionTrace<double> tr;
    const auto fast = core_attention(p, x, coords, c, rope, &tr);
    if (opt.inject_fault) detail::corrupt(p.v.weight);
    const auto ref = masked_dense_oracle(p, x, coords, c, rope);
    worst = std::max(worst, max_abs_diff(fast.data(), ref.data()));
    for (std::size_t hh = 0; hh < h; ++hh) {
      for (std::size_t i = 0; i < c; ++i)
        worst_row = std::max(worst_row, std::abs(std::accumulate(tr.core_probs[hh].begin() + i * tokens,
                                                                 tr.core_probs[hh].begin() + (i + 1) * tokens, 0.0) - 1.0));
      for (std::size_t i = 0; i < tokens - c; ++i)
        worst_row = std::max(worst_row, std::abs(std::accumulate(tr.patch_probs[hh].begin() + i * c,
                                                                 tr.patch_probs[hh].begin() + (i + 1) * c, 0.0) - 1.0));
    }
    rows_ok = rows_ok && worst_row <= 1e-6;
    ++cases;
  }
  out.push_back({"attention", "block-sparse equals masked dense oracle (60 cases, float64)", worst <= 1e-12,
                 "max |diff| = " + detail::fmt_double(worst)});
  out.push_back({"attention", "attention rows sum to 1", rows_ok, "max |sum-1| = " + detail::fmt_double(worst_row)});

  // Patch permutation equivariance.
  double perm_err = 0.0;
  for (std::size_t k = 0; k < 20; ++k) {
    const std::size_t c = 4, n = 10, tokens = c + n, d = 8;
    auto p = random_attn_params<double>(d, 2, rng);
    const RopeSpec rope(4);
    const auto x = random_tensor<double>({tokens, d}, rng);
    const auto coords = random_coords<double>(tokens, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<double> xp = x.values(), cp = coords.values();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(x.values().begin() + (c + perm[i]) * d, d, xp.begin() + (c + i) * d);
      std::copy_n(coords.values().begin() + (c + perm[i]) * 2, 2, cp.begin() + (c + i) * 2);
    }
    const auto y = core_attention(p, x, coords, c, rope);
    if (opt.inject_fault) detail::corrupt(p.q.weight);
    const auto yp = core_attention(p, Tensor<double>(x.shape(), xp), Tensor<double>(coords.shape(), cp), c, rope);
    for (std::size_t i = 0; i < tokens; ++i) {
      const std::size_t src = i < c ? i : c + perm[i - c];
      for (std::size_t o = 0; o < d; ++o) perm_err = std::max(perm_err, std::abs(yp.at(i, o) - y.at(src, o)));
    }
  }
  out.push_back({"attention", "patch permutation equivariance", perm_err <= 1e-12,
                 "max |diff| = " + detail::fmt_double(perm_err)});

  bool counts_ok = true;
  for (std::uint64_t c = 1; c <= 64; c *= 2)
    for (std::uint64_t n = 3 * c; n <= 3 * c + 200; ++n) counts_ok = counts_ok && interaction_count(n, c) < dense_count(n);
  out.push_back({"attention", "2NC + C^2 < N^2 whenever N >= 3C", counts_ok, ""});
  return out;
}

inline std::vector<PropertyResult> verify_rope(const VerifyOptions& opt) {
  std::vector<PropertyResult> out;
  Rng rng(opt.seed, "verify-rope");
  double iso = 0.0, shift_err = 0.0;
  for (std::size_t k = 0; k < 100; ++k) {
    const RopeSpec spec(k % 2 ? 8 : 16);
    const std::size_t hd = spec.head_dim;
    const auto q = random_tensor<double>({1, hd}, rng), kk = random_tensor<double>({1, hd}, rng);
    const auto c1 = random_coords<double>(1, rng), c2 = random_coords<double>(1, rng);
    const double dx = rng.uniform(-0.5, 0.5), dy = rng.uniform(-0.5, 0.5);
    auto shifted = [&](const Tensor<double>& c) { return Tensor<double>({1, 2}, {c[0] + dx, c[1] + dy}); };
    auto rot = [&](const Tensor<double>& v, const Tensor<double>& c) {
      const auto [cs, sn] = cos_sin(spec, c);
      return rope_apply(v, cs, sn);
    };
    const auto rq = rot(q, c1);
    double n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < hd; ++i) n_in += q[i] * q[i], n_out += rq[i] * rq[i];
    iso = std::max(iso, std::abs(std::sqrt(n_in) - std::sqrt(n_out)));
    auto dot = [&](const Tensor<double>& a, const Tensor<double>& b) {
      double s = 0;
      for (std::size_t i = 0; i < hd; ++i) s += a[i] * b[i];
      return s;
    };
    const double l0 = dot(rq, rot(kk, c2));
    const double l1 = dot(rot(q, shifted(c1)), rot(kk, shifted(c2)));
    shift_err = std::max(shift_err, std::abs(l0 - l1) + (opt.inject_fault ? 1.0 : 0.0));
  }
  out.push_back({"rope", "rotation preserves per-token norm (100 draws)", iso <= 1e-6, "max = " + detail::fmt_double(iso)});
  out.push_back({"rope", "logits invariant to common coordinate shift (100 draws)", shift_err <= 1e-6,
                 "max = " + detail::fmt_double(shift_err)});

  bool sym = true;
  for (std::size_t hp = 1; hp <= 5; ++hp)
    for (std::size_t wp = 1; wp <= 5; ++wp) {
      const auto g = patch_grid<double>(hp, wp);
      for (std::size_t r = 0; r < hp; ++r)
        for (std::size_t c = 0; c < wp; ++c) sym = sym && g.at(r * wp + c, 0) == -g.at(r * wp + (wp - 1 - c), 0);
    }
  out.push_back({"rope", "patch grid x is antisymmetric under column flip", sym, ""});

  auto model = VecaEncoder<double>::init(preset("tiny-test"), opt.seed);
  for (auto& a : model.pos_alpha) a.mutable_data()[0] = 5.0;  // stress the update
  Rng img_rng(opt.seed, "verify-rope-images");
  const auto images = synthetic_batch<double>(1, 64, 64, img_rng);
  bool bounded = true;
  for (auto c : model.config.budgets) {
    EncoderTrace<double> tr;
    model.forward(images, c, &tr);
    for (const auto& layer : tr.core_coords[0])
      for (double v : layer) bounded = bounded && v > -1.0 && v < 1.0;
  }
  out.push_back({"rope", "core coordinates stay in (-1, 1) after every layer", bounded, ""});
  return out;
}

inline std::vector<PropertyResult> verify_gradients(const VerifyOptions& opt) {
  std::vector<PropertyResult> out;
  using F = std::function<Tensor<double>()>;
  struct Case {
    std::string name;
    std::function<std::pair<F, std::vector<Tensor<double>>>(Rng&)> make;
  };
  const std::vector<Case> cases = {
      {"matmul", [](Rng& r) {
         auto a = random_tensor<double>({3, 4}, r, 1, true), b = random_tensor<double>({4, 2}, r, 1, true);
         auto w = random_tensor<double>({3, 2}, r);
         return std::pair{F([=] { return sum(mul(matmul(a, b), w)); }), std::vector{a, b}};
       }},
      {"softmax_rows", [](Rng& r) {
         auto a = random_tensor<double>({3, 5}, r, 2, true);
         auto w = random_tensor<double>({3, 5}, r);
         return std::pair{F([=] { return sum(mul(softmax_rows(a), w)); }), std::vector{a}};
       }},
      {"layer_norm", [](Rng& r) {
         auto a = random_tensor<double>({3, 6}, r, 2, true), g = random_tensor<double>({6}, r, 1, true),
              b = random_tensor<double>({6}, r, 1, true);
         auto w = random_tensor<double>({3, 6}, r);
         return std::pair{F([=] { return sum(mul(layer_norm(a, g, b, 1e-6), w)); }), std::vector{a, g, b}};
       }},
      {"silu/tanh/cos/sin", [](Rng& r) {
         auto a = random_tensor<double>({2, 5}, r, 2, true);
         return std::pair{F([=] { return sum(add(mul(silu(a), tanh(a)), mul(cos(a), sin(a)))); }), std::vector{a}};
       }},
      {"rope_apply + cos_sin", [](Rng& r) {
         auto x = random_tensor<double>({3, 8}, r, 1, true), c = random_tensor<double>({3, 2}, r, 1, true);
         auto w = random_tensor<double>({3, 8}, r);
         return std::pair{F([=] {
                            const auto [cs, sn] = cos_sin(RopeSpec(8), c);
                            return sum(mul(rope_apply(x, cs, sn), w));
                          }),
                          std::vector{x, c}};
       }},
      {"cosine + mse losses", [](Rng& r) {
         auto z = random_tensor<double>({2, 3, 4}, r, 1, true), zs = random_tensor<double>({2, 3, 4}, r);
         auto y = random_tensor<double>({2, 4}, r, 1, true), ys = random_tensor<double>({2, 4}, r);
         return std::pair{F([=] { return add(loss_global(y, ys), loss_dense(z, zs, 1.0)); }), std::vector{z, y}};
       }},
      {"core_attention", [](Rng& r) {
         auto p = random_attn_params<double>(8, 2, r);
         auto x = random_tensor<double>({7, 8}, r, 1, true), c = random_tensor<double>({7, 2}, r, 1, true);
         auto w = random_tensor<double>({7, 8}, r);
         return std::pair{F([=] { return sum(mul(core_attention(p, x, c, 3, RopeSpec(4)), w)); }),
                          std::vector{x, c, p.q.weight, p.k.weight, p.v.weight, p.out.weight, p.q.bias}};
       }},
  };
  for (const auto& cs : cases) {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      Rng r(opt.seed + s, "verify-grad-" + cs.name);
      auto [f, params] = cs.make(r);
      worst = std::max(worst, grad_check<double>(f, params, 1e-5).max_rel_error);
    }
    if (opt.inject_fault) worst += 1.0;
    out.push_back({"gradients", cs.name + " (20 seeds)", worst <= 1e-6, "max rel err = " + detail::fmt_double(worst)});
  }

  // Whole tiny model, every 7th coordinate of every tensor.
  auto model = VecaEncoder<double>::init(preset("tiny-test"), opt.seed);
  auto teacher = DenseTeacher<double>::init(model.config, opt.seed + 1);
  Rng img_rng(opt.seed, "verify-grad-images");
  const auto images = synthetic_batch<double>(1, 64, 64, img_rng);
  const auto tgt = teacher(images);
  DistillConfig dcfg;
  auto f = F([&] { return total_loss(images, 8, model, tgt, dcfg); });
  const auto res = grad_check<double>(f, model.parameters(), 1e-5, 7);
  out.push_back({"gradients", "tiny encoder + distillation loss", res.max_rel_error <= 1e-4,
                 "max rel err = " + detail::fmt_double(res.max_rel_error) + " over " +
                     std::to_string(res.coords_checked) + " coords"});
  return out;
}

inline std::vector<PropertyResult> verify_elastic(const VerifyOptions& opt) {
  std::vector<PropertyResult> out;
  auto model = VecaEncoder<double>::init(preset("tiny-test"), opt.seed);
  Rng img_rng(opt.seed, "verify-elastic-images");
  const auto images = synthetic_batch<double>(2, 64, 64, img_rng);

  bool nested = true;
  const auto full = active_prefix(model.cores, 64);
  for (auto c : model.config.budgets) {
    const auto [tok, xy] = active_prefix(model.cores, c);
    nested = nested && std::equal(tok.data().begin(), tok.data().end(), full.first.data().begin()) &&
             std::equal(xy.data().begin(), xy.data().end(), full.second.data().begin());
  }
  out.push_back({"elastic", "active prefixes are nested", nested, ""});

  bool invariant = true;
  Rng noise(opt.seed, "verify-elastic-noise");
  for (auto c : model.config.budgets) {
    if (c == model.config.max_cores) continue;
    const auto before = model.forward(images, c);
    auto perturbed = VecaEncoder<double>::init(model.config, opt.seed);
    for (std::size_t k = c / model.config.chunk; k < model.config.chunks(); ++k) {
      for (auto& v : perturbed.cores.token_chunks[k].mutable_data()) v += noise.normal();
      for (auto& v : perturbed.cores.coord_chunks[k].mutable_data()) v += noise.normal();
    }
    if (opt.inject_fault) perturbed.cores.token_chunks[0].mutable_data()[0] += 1e-3;
    const auto after = perturbed.forward(images, c);
    invariant = invariant && before.global.values() == after.global.values() && before.dense.values() == after.dense.values();
  }
  out.push_back({"elastic", "outputs bit-identical under inactive-core perturbation", invariant, ""});

  const auto dist = BudgetDistribution::standard();
  bool freq_ok = true, chi_ok = true;
  double worst_dev = 0.0, worst_chi = 0.0;
  constexpr double kChi2Crit7 = 24.321886347856854;  // chi^2_7 upper 1e-3 quantile
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng r(opt.seed + s, "budget");
    std::vector<double> counts(dist.budgets().size(), 0.0);
    const std::size_t draws = 100000;
    for (std::size_t i = 0; i < draws; ++i) {
      const auto c = dist.sample(r);
      counts[c / 8 - 1] += 1;
    }
    double chi = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const double expect = dist.probs()[i] * draws;
      chi += (counts[i] - expect) * (counts[i] - expect) / expect;
      worst_dev = std::max(worst_dev, std::abs(counts[i] / draws - dist.probs()[i]));
    }
    worst_chi = std::max(worst_chi, chi);
    freq_ok = freq_ok && worst_dev <= 0.005;
    chi_ok = chi_ok && chi < kChi2Crit7;
  }
  out.push_back({"elastic", "sampler frequencies within 0.005 of weights/20", freq_ok,
                 "max dev = " + detail::fmt_double(worst_dev)});
  out.push_back({"elastic", "sampler chi-square not rejected at 1e-3 (5 streams)", chi_ok,
                 "max chi2 = " + detail::fmt_double(worst_chi)});
  return out;
}

inline std::vector<PropertyResult> verify_diameter(const VerifyOptions& opt) {
  std::vector<PropertyResult> out;
  double one_block = 0.0;
  std::size_t nonzero = 0, pairs = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto model = VecaEncoder<double>::init(preset("tiny-test"), opt.seed + s);
    if (opt.inject_fault) model.blocks[0].attn.k.weight.mutable_data()[0] += 1e-3;
    Rng r(opt.seed + s, "verify-diameter-images");
    const auto image = synthetic_batch<double>(1, 64, 64, r);
    const auto inf1 = influence_probe(model, image, 1, 8);
    const auto inf2 = influence_probe(model, image, 2, 8);
    for (std::size_t i = 0; i < inf1.size(); ++i)
      for (std::size_t j = 0; j < inf1.size(); ++j) {
        if (i == j) continue;
        one_block = std::max(one_block, inf1[i][j]);
        ++pairs;
        nonzero += inf2[i][j] > 1e-9;
      }
  }
  if (opt.inject_fault) one_block += 1.0;
  out.push_back({"diameter", "one block: zero cross-patch influence", one_block <= 1e-12,
                 "max = " + detail::fmt_double(one_block)});
  const double frac = double(nonzero) / double(pairs);
  out.push_back({"diameter", "two blocks: >= 90% of patch pairs interact", frac >= 0.9,
                 "fraction = " + detail::fmt_double(frac)});
  return out;
}

inline const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names = {"attention", "rope", "gradients", "elastic", "diameter"};
  return names;
}

inline std::vector<PropertyResult> run_verify_suite(const std::string& suite, const VerifyOptions& opt) {
  if (suite == "attention") return verify_attention(opt);
  if (suite == "rope") return verify_rope(opt);
  if (suite == "gradients") return verify_gradients(opt);
  if (suite == "elastic") return verify_elastic(opt);
  if (suite == "diameter") return verify_diameter(opt);
  if (suite == "all") {
    std::vector<PropertyResult> all;
    for (const auto& s : verify_suite_names()) {
      auto r = run_verify_suite(s, opt);
      all.insert(all.end(), r.begin(), r.end());
    }
    return all;
  }
  throw ConfigError("unknown suite '" + suite + "' (expected attention, rope, gradients, elastic, diameter, all)");
}

}  // namespace veca
