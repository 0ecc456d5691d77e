#pragma once

#include <string>
#include <utility>
#include <vector>

#include "veca/attention.hpp"
#include "veca/config.hpp"

namespace veca {

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma, beta;

  static LayerNormParams init(std::size_t dim) {
    return {Tensor<T>::full({dim}, T(1), true), Tensor<T>::zeros({dim}, true)};
  }
  Tensor<T> operator()(const Tensor<T>& x, T eps) const { return layer_norm(x, gamma, beta, eps); }
};

/// W2(SiLU(u) * v) with [u, v] = W1 x.
template <typename T>
Tensor<T> ffn_swiglu(const Tensor<T>& x, const Linear<T>& fc1, const Linear<T>& fc2) {
  const Tensor<T> uv = fc1(x);
  const std::size_t hidden = uv.dim(1) / 2;
  return fc2(mul(silu(slice_cols(uv, 0, hidden)), slice_cols(uv, hidden, hidden)));
}

enum class AttentionKind { Core, Dense };

template <typename T>
struct BlockParams {
  LayerNormParams<T> norm_attn;
  AttnParams<T> attn;
  LayerNormParams<T> norm_ffn;
  Linear<T> fc1, fc2;

  static BlockParams init(const ModelConfig& c, Rng& rng) {
    BlockParams b;
    b.norm_attn = LayerNormParams<T>::init(c.dim);
    b.attn = AttnParams<T>::init(c.dim, c.heads, rng);
    b.norm_ffn = LayerNormParams<T>::init(c.dim);
    b.fc1 = make_linear<T>(c.dim, 2 * c.hidden(), rng);
    b.fc2 = make_linear<T>(c.hidden(), c.dim, rng);
    return b;
  }

  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    out.emplace_back(prefix + "norm_attn.gamma", norm_attn.gamma);
    out.emplace_back(prefix + "norm_attn.beta", norm_attn.beta);
    for (auto [name, lin] : {std::pair{"q", &attn.q}, {"k", &attn.k}, {"v", &attn.v}, {"out", &attn.out}}) {
      out.emplace_back(prefix + "attn." + name + ".weight", lin->weight);
      out.emplace_back(prefix + "attn." + name + ".bias", lin->bias);
    }
    out.emplace_back(prefix + "norm_ffn.gamma", norm_ffn.gamma);
    out.emplace_back(prefix + "norm_ffn.beta", norm_ffn.beta);
    out.emplace_back(prefix + "fc1.weight", fc1.weight);
    out.emplace_back(prefix + "fc1.bias", fc1.bias);
    out.emplace_back(prefix + "fc2.weight", fc2.weight);
    out.emplace_back(prefix + "fc2.bias", fc2.bias);
  }
};

/// Pre-norm residual block: x + Attn(LN(x)), then + FFN(LN(.)).
template <typename T>
Tensor<T> block_forward(const BlockParams<T>& b, const Tensor<T>& x, const Tensor<T>& coords,
                        std::size_t active_c, const RopeSpec& rope, T eps,
                        AttentionKind kind = AttentionKind::Core, AttentionTrace<T>* trace = nullptr,
                        const AttentionOptions& opt = {}) {
  const Tensor<T> normed = b.norm_attn(x, eps);
  const Tensor<T> attn = kind == AttentionKind::Core
                             ? core_attention(b.attn, normed, coords, active_c, rope, trace, opt)
                             : full_self_attention(b.attn, normed, coords, rope);
  const Tensor<T> h = add(x, attn);
  return add(h, ffn_swiglu(b.norm_ffn(h, eps), b.fc1, b.fc2));
}

/// Image batch [B x C x H x W] -> per-image patch matrix [N x C*P*P].
/// Each patch is flattened channel-major, then row, then column.
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& images, std::size_t index, std::size_t patch,
                          std::size_t* hp_out = nullptr, std::size_t* wp_out = nullptr) {
  if (images.rank() != 4)
    throw DimensionError("patch_embed: images must be [B x C x H x W], got " + shape_str(images.shape()));
  const std::size_t ch = images.dim(1), height = images.dim(2), width = images.dim(3);
  if (height % patch != 0 || width % patch != 0)
    throw ResolutionError("patch_embed: resolution " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by patch size " + std::to_string(patch));
  const std::size_t hp = height / patch, wp = width / patch, feat = ch * patch * patch;
  const T* img = images.data().data() + index * ch * height * width;
  std::vector<T> out(hp * wp * feat);
  for (std::size_t r = 0; r < hp; ++r)
    for (std::size_t c = 0; c < wp; ++c) {
      T* dst = out.data() + (r * wp + c) * feat;
      for (std::size_t k = 0; k < ch; ++k)
        for (std::size_t i = 0; i < patch; ++i)
          for (std::size_t j = 0; j < patch; ++j)
            *dst++ = img[(k * height + r * patch + i) * width + c * patch + j];
    }
  if (hp_out) *hp_out = hp;
  if (wp_out) *wp_out = wp;
  return Tensor<T>({hp * wp, feat}, std::move(out));
}

/// Ordered bank of learnable core tokens and coordinate states, stored in
/// fixed-size chunks so a budget activates a prefix of whole chunks.
template <typename T>
struct CoreBank {
  std::size_t chunk = 8;
  std::vector<Tensor<T>> token_chunks;  // each [chunk x D]
  std::vector<Tensor<T>> coord_chunks;  // each [chunk x 2], pre-tanh

  std::size_t capacity() const { return chunk * token_chunks.size(); }

  static CoreBank init(const ModelConfig& c, Rng& rng) {
    CoreBank bank;
    bank.chunk = c.chunk;
    const Tensor<T> rho = fps_init<T>(c.max_cores, c.fps_grid);
    for (std::size_t k = 0; k < c.chunks(); ++k) {
      std::vector<T> tok(c.chunk * c.dim);
      for (auto& v : tok) v = T(0.02 * rng.normal());
      bank.token_chunks.emplace_back(Shape{c.chunk, c.dim}, std::move(tok), true);
      std::vector<T> xy(rho.values().begin() + k * c.chunk * 2, rho.values().begin() + (k + 1) * c.chunk * 2);
      bank.coord_chunks.emplace_back(Shape{c.chunk, 2}, std::move(xy), true);
    }
    return bank;
  }
};

/// First C tokens and coordinate states; only chunks below C/chunk are read.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> active_prefix(const CoreBank<T>& bank, std::size_t active_c) {
  if (active_c == 0 || active_c % bank.chunk != 0 || active_c > bank.capacity())
    throw BudgetError("active_prefix: budget " + std::to_string(active_c) + " is not a multiple of " +
                      std::to_string(bank.chunk) + " in [" + std::to_string(bank.chunk) + ", " +
                      std::to_string(bank.capacity()) + "]");
  const std::size_t n = active_c / bank.chunk;
  if (n == 1) return {bank.token_chunks[0], bank.coord_chunks[0]};
  std::vector<Tensor<T>> tok(bank.token_chunks.begin(), bank.token_chunks.begin() + n);
  std::vector<Tensor<T>> xy(bank.coord_chunks.begin(), bank.coord_chunks.begin() + n);
  return {concat_rows(tok), concat_rows(xy)};
}

template <typename T>
struct EncoderOutput {
  Tensor<T> global;  // [B x D], final r_1
  Tensor<T> dense;   // [B x N x D], final patch tokens
  std::size_t hp = 0, wp = 0;
};

/// Captures, per image and per layer, attention internals and the core
/// coordinates (after tanh) the layer used.
template <typename T>
struct EncoderTrace {
  std::vector<std::vector<AttentionTrace<T>>> attention;
  std::vector<std::vector<std::vector<T>>> core_coords;
};

/// The core-periphery encoder.
template <typename T>
class VecaEncoder {
 public:
  ModelConfig config;
  RopeSpec rope;
  Linear<T> patch_embed;
  CoreBank<T> cores;
  std::vector<BlockParams<T>> blocks;
  std::vector<Linear<T>> pos_heads;   // layers - 1 maps D -> 2
  std::vector<Tensor<T>> pos_alpha;   // layers - 1 scalars
  LayerNormParams<T> final_norm;

  static VecaEncoder init(const ModelConfig& c, std::uint64_t seed) {
    c.validate();
    Rng rng(seed, "weights");
    VecaEncoder m;
    m.config = c;
    m.rope = RopeSpec(c.head_dim(), c.rope_base);
    m.patch_embed = make_linear<T>(c.patch_features(), c.dim, rng);
    m.cores = CoreBank<T>::init(c, rng);
    for (std::size_t l = 0; l < c.layers; ++l) m.blocks.push_back(BlockParams<T>::init(c, rng));
    for (std::size_t l = 1; l < c.layers; ++l) {
      m.pos_heads.push_back(make_linear<T>(c.dim, 2, rng));
      m.pos_alpha.push_back(Tensor<T>::scalar(T(c.alpha_init), true));
    }
    m.final_norm = LayerNormParams<T>::init(c.dim);
    return m;
  }

  /// Every learnable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.emplace_back("patch_embed.weight", patch_embed.weight);
    out.emplace_back("patch_embed.bias", patch_embed.bias);
    for (std::size_t k = 0; k < cores.token_chunks.size(); ++k) {
      out.emplace_back("cores.tokens." + std::to_string(k), cores.token_chunks[k]);
      out.emplace_back("cores.coords." + std::to_string(k), cores.coord_chunks[k]);
    }
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect("blocks." + std::to_string(l) + ".", out);
    for (std::size_t l = 0; l < pos_heads.size(); ++l) {
      out.emplace_back("pos_heads." + std::to_string(l) + ".weight", pos_heads[l].weight);
      out.emplace_back("pos_heads." + std::to_string(l) + ".bias", pos_heads[l].bias);
      out.emplace_back("pos_alpha." + std::to_string(l), pos_alpha[l]);
    }
    out.emplace_back("final_norm.gamma", final_norm.gamma);
    out.emplace_back("final_norm.beta", final_norm.beta);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t count_parameters() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.size();
    return n;
  }

  void check_budget(std::size_t active_c) const {
    if (!config.has_budget(active_c))
      throw BudgetError("budget " + std::to_string(active_c) + " is not one of {" + config.budgets_str() + "}");
  }

  /// Patch tokens [N x D] for one image of the batch.
  Tensor<T> embed(const Tensor<T>& images, std::size_t index, std::size_t& hp, std::size_t& wp) const {
    if (images.rank() == 4 && images.dim(1) != config.in_channels)
      throw DimensionError("patch_embed: expected " + std::to_string(config.in_channels) + " channels, got " +
                           shape_str(images.shape()));
    return patch_embed(extract_patches(images, index, config.patch_size, &hp, &wp));
  }

  /// Runs the first `n_blocks` blocks on one token sequence [C + N x D],
  /// updating core coordinates before every block after the first.
  /// Returns the residual stream before the final norm.
  Tensor<T> run_blocks(Tensor<T> x, Tensor<T> rho, const Tensor<T>& patch_coords, std::size_t active_c,
                       std::size_t n_blocks, std::vector<AttentionTrace<T>>* attn_trace = nullptr,
                       std::vector<std::vector<T>>* coord_trace = nullptr, const AttentionOptions& opt = {}) const {
    if (n_blocks > blocks.size())
      throw ConfigError("run_blocks: asked for " + std::to_string(n_blocks) + " of " +
                        std::to_string(blocks.size()) + " blocks");
    const T eps = T(config.ln_eps);
    Tensor<T> core_xy = tanh(rho);
    for (std::size_t l = 0; l < n_blocks; ++l) {
      if (l > 0) {
        const Tensor<T> delta = pos_heads[l - 1](slice_rows(x, 0, active_c));
        rho = add(rho, mul_scalar(delta, pos_alpha[l - 1]));
        core_xy = tanh(rho);
      }
      if (coord_trace) coord_trace->push_back(core_xy.values());
      const Tensor<T> coords = concat_rows<T>({core_xy, patch_coords});
      AttentionTrace<T>* tr = nullptr;
      if (attn_trace) tr = &attn_trace->emplace_back();
      x = block_forward(blocks[l], x, coords, active_c, rope, eps, AttentionKind::Core, tr, opt);
    }
    return x;
  }

  /// Full forward. `active_c` defaults to the full capacity.
  EncoderOutput<T> forward(const Tensor<T>& images, std::size_t active_c = 0, EncoderTrace<T>* trace = nullptr,
                           const AttentionOptions& opt = {}) const {
    if (active_c == 0) active_c = config.max_cores;
    check_budget(active_c);
    if (images.rank() != 4)
      throw DimensionError("encoder: images must be [B x C x H x W], got " + shape_str(images.shape()));
    const auto [tokens, rho] = active_prefix(cores, active_c);
    const std::size_t batch = images.dim(0);
    std::vector<Tensor<T>> globals, denses;
    std::size_t hp = 0, wp = 0;
    if (trace) *trace = {};
    for (std::size_t b = 0; b < batch; ++b) {
      const Tensor<T> patches = embed(images, b, hp, wp);
      const Tensor<T> grid = patch_grid<T>(hp, wp);
      auto* at = trace ? &trace->attention.emplace_back() : nullptr;
      auto* ct = trace ? &trace->core_coords.emplace_back() : nullptr;
      Tensor<T> x = run_blocks(concat_rows<T>({tokens, patches}), rho, grid, active_c, blocks.size(), at, ct, opt);
      x = final_norm(x, T(config.ln_eps));
      globals.push_back(slice_rows(x, 0, 1));
      denses.push_back(slice_rows(x, active_c, hp * wp));
    }
    const std::size_t n = hp * wp, d = config.dim;
    return {concat_rows(globals), reshape(concat_rows(denses), {batch, n, d}), hp, wp};
  }
};

}  // namespace veca
