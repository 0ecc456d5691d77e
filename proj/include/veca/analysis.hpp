#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "veca/model.hpp"

namespace veca {

// ---------------------------------------------------------------------------
// Analytic cost of one attention residual path (q/k/v projections, scores,
// weighted values, output projection). FLOPs = 2 x MACs; bias adds and
// softmax are not counted. The dense baseline carries one global token and
// four registers, so T = N + 5.
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kBaselineExtraTokens = 5;

enum class CostMode { DenseBaseline, Core };

struct CostReport {
  std::string preset;
  std::size_t resolution = 0;
  CostMode mode = CostMode::Core;
  std::size_t active_c = 0;
  std::uint64_t patches = 0;
  std::uint64_t tokens = 0;
  std::uint64_t projection_macs = 0;
  std::uint64_t attention_macs = 0;  // score + weighted-value matmuls
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
  double ratio = 1.0;  // dense-baseline FLOPs / this row's FLOPs

  std::string mode_str() const {
    return mode == CostMode::DenseBaseline ? "dense_baseline" : "core(" + std::to_string(active_c) + ")";
  }
};

inline std::uint64_t patch_count(std::size_t resolution, std::size_t patch) {
  if (resolution == 0 || resolution % patch != 0)
    throw ResolutionError("resolution " + std::to_string(resolution) + " is not a positive multiple of patch size " +
                          std::to_string(patch));
  const std::uint64_t side = resolution / patch;
  return side * side;
}

/// Score-matrix MACs in core mode: C rows over T keys plus N rows over C keys.
inline std::uint64_t core_score_macs(std::uint64_t n, std::uint64_t c, std::uint64_t d) {
  return c * (n + c) * d + n * c * d;
}

inline CostReport attention_path_flops(const ModelConfig& cfg, std::size_t resolution, CostMode mode,
                                       std::size_t active_c = 64) {
  CostReport r;
  r.preset = cfg.name;
  r.resolution = resolution;
  r.mode = mode;
  r.patches = patch_count(resolution, cfg.patch_size);
  const std::uint64_t d = cfg.dim, n = r.patches;
  const std::uint64_t t_dense = n + kBaselineExtraTokens;
  const std::uint64_t dense_macs = 4 * t_dense * d * d + 2 * t_dense * t_dense * d;
  if (mode == CostMode::DenseBaseline) {
    r.tokens = t_dense;
    r.projection_macs = 4 * t_dense * d * d;
    r.attention_macs = 2 * t_dense * t_dense * d;
  } else {
    if (active_c == 0) throw BudgetError("cost model: active core count must be positive");
    const std::uint64_t c = active_c;
    r.active_c = active_c;
    r.tokens = n + c;
    r.projection_macs = 4 * r.tokens * d * d;
    r.attention_macs = 2 * c * r.tokens * d + 2 * n * c * d;
  }
  r.macs = r.projection_macs + r.attention_macs;
  r.flops = 2 * r.macs;
  r.ratio = double(2 * dense_macs) / double(r.flops);
  return r;
}

inline CostReport attention_path_flops(const std::string& preset_name, std::size_t resolution, CostMode mode,
                                       std::size_t active_c = 64) {
  return attention_path_flops(preset(preset_name), resolution, mode, active_c);
}

/// Both modes at every resolution, dense row first.
inline std::vector<CostReport> flop_sweep(const ModelConfig& cfg, const std::vector<std::size_t>& resolutions,
                                          std::size_t active_c) {
  std::vector<CostReport> out;
  for (auto res : resolutions) {
    out.push_back(attention_path_flops(cfg, res, CostMode::DenseBaseline));
    out.push_back(attention_path_flops(cfg, res, CostMode::Core, active_c));
  }
  return out;
}

inline void write_cost_csv(std::ostream& os, const std::vector<CostReport>& rows) {
  os << "# FLOPs = 2 x MACs; attention path = qkv/out projections + scores + weighted values;"
        " dense baseline T = N + 5 (global + 4 register tokens, assumed); bias/softmax excluded\n";
  os << "preset,resolution,mode,T,macs,flops,ratio\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.ratio);
    os << r.preset << ',' << r.resolution << ',' << r.mode_str() << ',' << r.tokens << ',' << r.macs << ','
       << r.flops << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Output-contribution maps.
// ---------------------------------------------------------------------------

/// Row-stochastic contribution scores s[T x T]. Patch rows are zero outside
/// the active-core columns.
template <typename T>
Tensor<T> contribution_map(const AttentionTrace<T>& tr, const Tensor<T>& out_weight) {
  const std::size_t tokens = tr.tokens, c = tr.active_c, hd = tr.head_dim, d = tr.heads * hd;
  if (out_weight.shape() != Shape{d, d})
    throw DimensionError("contribution_map: output projection " + shape_str(out_weight.shape()) +
                         " does not match " + std::to_string(tr.heads) + " heads of width " + std::to_string(hd));
  // u[h][j] = v_hj * W^O_h, the value of key j as seen in output space.
  std::vector<T> u(tr.heads * tokens * d, T(0));
  for (std::size_t h = 0; h < tr.heads; ++h)
    for (std::size_t j = 0; j < tokens; ++j)
      for (std::size_t a = 0; a < hd; ++a) {
        const T vj = tr.values[h][j * hd + a];
        const T* wrow = out_weight.data().data() + (h * hd + a) * d;
        T* dst = u.data() + (h * tokens + j) * d;
        for (std::size_t o = 0; o < d; ++o) dst[o] += vj * wrow[o];
      }
  std::vector<T> s(tokens * tokens, T(0)), e(d);
  for (std::size_t i = 0; i < tokens; ++i) {
    const std::size_t keys = i < c ? tokens : c;
    T total = 0;
    for (std::size_t j = 0; j < keys; ++j) {
      std::fill(e.begin(), e.end(), T(0));
      for (std::size_t h = 0; h < tr.heads; ++h) {
        const T a = i < c ? tr.core_probs[h][i * tokens + j] : tr.patch_probs[h][(i - c) * c + j];
        const T* uj = u.data() + (h * tokens + j) * d;
        for (std::size_t o = 0; o < d; ++o) e[o] += a * uj[o];
      }
      T nrm = 0;
      for (T v : e) nrm += v * v;
      s[i * tokens + j] = std::sqrt(nrm);
      total += s[i * tokens + j];
    }
    if (total > T(0))
      for (std::size_t j = 0; j < keys; ++j) s[i * tokens + j] /= total;
  }
  return Tensor<T>({tokens, tokens}, std::move(s));
}

/// Per-layer contribution maps for the first image of `images`.
template <typename T>
std::vector<Tensor<T>> contribution_maps(const VecaEncoder<T>& model, const Tensor<T>& images, std::size_t active_c) {
  NoGradGuard no_grad;
  EncoderTrace<T> trace;
  model.forward(images, active_c, &trace);
  std::vector<Tensor<T>> maps;
  for (std::size_t l = 0; l < model.blocks.size(); ++l)
    maps.push_back(contribution_map(trace.attention[0][l], model.blocks[l].attn.out.weight));
  return maps;
}

/// Patch rows of one layer's map restricted to the active cores: [N x C].
template <typename T>
struct CoreMap {
  std::size_t layer = 0;
  std::size_t active_c = 0;
  Tensor<T> scores;
};

/// Patch-over-core contribution profiles for the requested layers
/// (defaults to every layer except the first).
template <typename T>
std::vector<CoreMap<T>> export_core_maps(const VecaEncoder<T>& model, const Tensor<T>& image, std::size_t active_c,
                                         std::vector<std::size_t> layers = {}) {
  if (layers.empty())
    for (std::size_t l = 1; l < model.blocks.size(); ++l) layers.push_back(l);
  for (auto l : layers)
    if (l >= model.blocks.size())
      throw ConfigError("export_core_maps: layer " + std::to_string(l) + " out of range (model has " +
                        std::to_string(model.blocks.size()) + " layers)");
  const auto maps = contribution_maps(model, image, active_c);
  std::vector<CoreMap<T>> out;
  for (auto l : layers) {
    const Tensor<T>& s = maps[l];
    const std::size_t tokens = s.dim(0), n = tokens - active_c;
    std::vector<T> rows(n * active_c);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < active_c; ++j) rows[i * active_c + j] = s.at(active_c + i, j);
    out.push_back({l, active_c, Tensor<T>({n, active_c}, std::move(rows))});
  }
  return out;
}

template <typename T>
void write_core_map_csv(std::ostream& os, const CoreMap<T>& m, const std::string& image_label) {
  os << "# image=" << image_label << " layer=" << m.layer << " C=" << m.active_c << '\n';
  char buf[40];
  const std::size_t rows = m.scores.dim(0), cols = m.scores.dim(1);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", double(m.scores.at(i, j)));
      os << (j ? "," : "") << buf;
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Patch-to-patch influence.
// ---------------------------------------------------------------------------

/// influence[i][j] = Frobenius norm of d(patch j after `n_blocks`) / d(patch i
/// before block 0), by central differences over patch i's D features.
template <typename T>
std::vector<std::vector<double>> influence_probe(const VecaEncoder<T>& model, const Tensor<T>& image,
                                                 std::size_t n_blocks, std::size_t active_c, T h = T(1e-5)) {
  NoGradGuard no_grad;
  model.check_budget(active_c);
  std::size_t hp = 0, wp = 0;
  const Tensor<T> patches = model.embed(image, 0, hp, wp);
  const auto [tokens, rho] = active_prefix(model.cores, active_c);
  const Tensor<T> grid = patch_grid<T>(hp, wp);
  const std::size_t n = hp * wp, d = model.config.dim;
  const Tensor<T> x0 = concat_rows<T>({tokens, patches});

  auto run = [&](const Tensor<T>& x) { return model.run_blocks(x, rho, grid, active_c, n_blocks); };
  std::vector<std::vector<double>> sq(n, std::vector<double>(n, 0.0));
  std::vector<T> buf = x0.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t idx = (active_c + i) * d + k;
      const T orig = buf[idx];
      buf[idx] = orig + h;
      const Tensor<T> yp = run(Tensor<T>(x0.shape(), buf));
      buf[idx] = orig - h;
      const Tensor<T> ym = run(Tensor<T>(x0.shape(), buf));
      buf[idx] = orig;
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t o = 0; o < d; ++o) {
          const std::size_t q = (active_c + j) * d + o;
          const double deriv = (double(yp[q]) - double(ym[q])) / (2.0 * double(h));
          sq[i][j] += deriv * deriv;
        }
    }
  for (auto& row : sq)
    for (auto& v : row) v = std::sqrt(v);
  return sq;
}

// ---------------------------------------------------------------------------
// Optional CPU microbenchmark (no acceptance target; hardware dependent).
// ---------------------------------------------------------------------------

struct MicrobenchResult {
  double core_ms = 0.0, dense_ms = 0.0;
};

template <typename T>
MicrobenchResult microbench_attention(std::size_t dim, std::size_t heads, std::size_t n_patches, std::size_t active_c,
                                      std::size_t repeats = 3) {
  NoGradGuard no_grad;
  Rng rng(0, "microbench");
  const auto p = AttnParams<T>::init(dim, heads, rng);
  const RopeSpec rope(dim / heads);
  auto random = [&](std::size_t rows, std::size_t cols) {
    std::vector<T> v(rows * cols);
    for (auto& x : v) x = T(rng.uniform(-1.0, 1.0));
    return Tensor<T>({rows, cols}, std::move(v));
  };
  const Tensor<T> xc = random(active_c + n_patches, dim), cc = random(active_c + n_patches, 2);
  const Tensor<T> xd = random(n_patches + kBaselineExtraTokens, dim), cd = random(n_patches + kBaselineExtraTokens, 2);
  auto time_ms = [repeats](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t r = 0; r < repeats; ++r) fn();
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / double(repeats);
  };
  MicrobenchResult res;
  res.core_ms = time_ms([&] { core_attention(p, xc, cc, active_c, rope); });
  res.dense_ms = time_ms([&] { full_self_attention(p, xd, cd, rope); });
  return res;
}

}  // namespace veca
