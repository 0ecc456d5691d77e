#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "veca/ops.hpp"
#include "veca/rope2d.hpp"

namespace veca {

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

template <typename T>
Linear<T> make_linear(std::size_t in, std::size_t out, Rng& rng, double std = 0.02) {
  std::vector<T> w(in * out);
  for (auto& v : w) v = T(rng.truncated_normal(std));
  return {Tensor<T>({in, out}, std::move(w), true), Tensor<T>::zeros({out}, true)};
}

/// Separate q/k/v/out affine maps over D features, split into `heads` heads.
template <typename T>
struct AttnParams {
  Linear<T> q, k, v, out;
  std::size_t heads = 1;

  std::size_t dim() const { return q.in_features(); }
  std::size_t head_dim() const { return dim() / heads; }

  void validate() const {
    if (heads == 0 || dim() % heads != 0)
      throw ConfigError("attention: dim " + std::to_string(dim()) + " is not divisible by " +
                        std::to_string(heads) + " heads");
  }

  static AttnParams init(std::size_t dim, std::size_t heads, Rng& rng) {
    AttnParams p{make_linear<T>(dim, dim, rng), make_linear<T>(dim, dim, rng),
                 make_linear<T>(dim, dim, rng), make_linear<T>(dim, dim, rng), heads};
    p.validate();
    return p;
  }
};

/// Per-head attention probabilities and values captured from one forward.
template <typename T>
struct AttentionTrace {
  std::size_t tokens = 0, active_c = 0, heads = 0, head_dim = 0;
  std::vector<std::vector<T>> core_probs;   // per head, [C x T]
  std::vector<std::vector<T>> patch_probs;  // per head, [N x C]
  std::vector<std::vector<T>> values;       // per head, [T x head_dim], before output projection
};

struct AttentionOptions {
  double dropout = 0.0;
  Rng* rng = nullptr;  // required when dropout > 0
};

namespace detail {

template <typename T>
void check_attention_input(const AttnParams<T>& p, const Tensor<T>& x, const Tensor<T>& coords,
                           std::size_t active_c) {
  p.validate();
  detail::require_rank2(x, "attention");
  const std::size_t tokens = x.dim(0);
  if (x.dim(1) != p.dim())
    throw DimensionError("attention: input " + shape_str(x.shape()) + " vs model dim " +
                         std::to_string(p.dim()));
  if (coords.shape() != Shape{tokens, 2})
    throw DimensionError("attention: coords " + shape_str(coords.shape()) + " for " +
                         std::to_string(tokens) + " tokens");
  if (active_c < 1 || active_c >= tokens)
    throw BudgetError("attention: active core count " + std::to_string(active_c) +
                      " must satisfy 1 <= C < T = " + std::to_string(tokens));
}

template <typename T>
struct Projected {
  std::vector<Tensor<T>> q, k, v;  // per head, [T x head_dim]; q, k rotated
};

template <typename T>
Projected<T> project_heads(const AttnParams<T>& p, const Tensor<T>& x, const Tensor<T>& coords,
                           const RopeSpec& rope) {
  const std::size_t hd = p.head_dim();
  if (rope.head_dim != hd)
    throw DimensionError("attention: rope head_dim " + std::to_string(rope.head_dim) +
                         " vs attention head_dim " + std::to_string(hd));
  const Tensor<T> q = p.q(x), k = p.k(x), v = p.v(x);
  const auto [c, s] = cos_sin(rope, coords);
  Projected<T> out;
  for (std::size_t h = 0; h < p.heads; ++h) {
    out.q.push_back(rope_apply(slice_cols(q, h * hd, hd), c, s));
    out.k.push_back(rope_apply(slice_cols(k, h * hd, hd), c, s));
    out.v.push_back(slice_cols(v, h * hd, hd));
  }
  return out;
}

template <typename T>
Tensor<T> scaled_scores(const Tensor<T>& q, const Tensor<T>& k) {
  return scale(matmul(q, transpose(k)), T(1) / std::sqrt(T(q.dim(1))));
}

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& probs, const AttentionOptions& opt) {
  if (opt.dropout <= 0.0) return probs;
  if (!opt.rng) throw ConfigError("attention: dropout needs an explicit rng stream");
  return dropout(probs, opt.dropout, *opt.rng);
}

}  // namespace detail

/// Core-mediated attention over x = [R_C; Z] with x[T x D].
///
/// Core rows (0..C-1) attend to every token; patch rows attend only to the
/// C core tokens. RoPE rotates queries and keys, never values.
template <typename T>
Tensor<T> core_attention(const AttnParams<T>& p, const Tensor<T>& x, const Tensor<T>& coords,
                         std::size_t active_c, const RopeSpec& rope, AttentionTrace<T>* trace = nullptr,
                         const AttentionOptions& opt = {}) {
  detail::check_attention_input(p, x, coords, active_c);
  const std::size_t tokens = x.dim(0), n_patch = tokens - active_c, hd = p.head_dim();
  const auto proj = detail::project_heads(p, x, coords, rope);
  if (trace) *trace = {tokens, active_c, p.heads, hd, {}, {}, {}};

  std::vector<Tensor<T>> heads;
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Tensor<T> k_core = slice_rows(proj.k[h], 0, active_c);
    const Tensor<T> v_core = slice_rows(proj.v[h], 0, active_c);
    const Tensor<T> core_p = softmax_rows(detail::scaled_scores(slice_rows(proj.q[h], 0, active_c), proj.k[h]));
    const Tensor<T> patch_p = softmax_rows(detail::scaled_scores(slice_rows(proj.q[h], active_c, n_patch), k_core));
    if (trace) {
      trace->core_probs.push_back(core_p.values());
      trace->patch_probs.push_back(patch_p.values());
      trace->values.push_back(proj.v[h].values());
    }
    heads.push_back(concat_rows<T>({matmul(detail::maybe_dropout(core_p, opt), proj.v[h]),
                                    matmul(detail::maybe_dropout(patch_p, opt), v_core)}));
  }
  return p.out(heads.size() == 1 ? heads[0] : concat_cols(heads));
}

/// Batched form over x[B x T x D]; coordinates are shared across the batch.
template <typename T>
Tensor<T> core_attention_batched(const AttnParams<T>& p, const Tensor<T>& x, const Tensor<T>& coords,
                                 std::size_t active_c, const RopeSpec& rope) {
  if (x.rank() != 3) throw DimensionError("attention: expected [B x T x D], got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  const Tensor<T> flat = reshape(x, {b * t, d});
  std::vector<Tensor<T>> outs;
  for (std::size_t i = 0; i < b; ++i)
    outs.push_back(core_attention(p, slice_rows(flat, i * t, t), coords, active_c, rope));
  return reshape(concat_rows(outs), {b, t, d});
}

/// Additive mask value standing in for -inf.
template <typename T>
constexpr T mask_value() {
  return std::is_same_v<T, float> ? T(-1e30) : T(-1e300);
}

/// Reference implementation: full T x T attention with an additive mask that
/// removes every patch -> patch entry (self included).
template <typename T>
Tensor<T> masked_dense_oracle(const AttnParams<T>& p, const Tensor<T>& x, const Tensor<T>& coords,
                              std::size_t active_c, const RopeSpec& rope) {
  detail::check_attention_input(p, x, coords, active_c);
  const std::size_t tokens = x.dim(0);
  std::vector<T> mask(tokens * tokens, T(0));
  for (std::size_t i = active_c; i < tokens; ++i)
    for (std::size_t j = active_c; j < tokens; ++j) mask[i * tokens + j] = mask_value<T>();
  const Tensor<T> mask_t({tokens, tokens}, std::move(mask));

  const auto proj = detail::project_heads(p, x, coords, rope);
  std::vector<Tensor<T>> heads;
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Tensor<T> probs = softmax_rows(add(detail::scaled_scores(proj.q[h], proj.k[h]), mask_t));
    heads.push_back(matmul(probs, proj.v[h]));
  }
  return p.out(heads.size() == 1 ? heads[0] : concat_cols(heads));
}

/// Unrestricted multi-head self-attention with RoPE (dense baseline).
template <typename T>
Tensor<T> full_self_attention(const AttnParams<T>& p, const Tensor<T>& x, const Tensor<T>& coords,
                              const RopeSpec& rope) {
  p.validate();
  const auto proj = detail::project_heads(p, x, coords, rope);
  std::vector<Tensor<T>> heads;
  for (std::size_t h = 0; h < p.heads; ++h)
    heads.push_back(matmul(softmax_rows(detail::scaled_scores(proj.q[h], proj.k[h])), proj.v[h]));
  return p.out(heads.size() == 1 ? heads[0] : concat_cols(heads));
}

/// Attention comparisons per layer with N patches and C active cores.
inline std::uint64_t interaction_count(std::uint64_t n, std::uint64_t c) {
  if (n < 1 || c < 1) throw BudgetError("interaction_count: N and C must be >= 1");
  return 2 * n * c + c * c;
}

inline std::uint64_t dense_count(std::uint64_t n) { return n * n; }

}  // namespace veca
