#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "veca/errors.hpp"

namespace veca {

/// Architecture hyperparameters for one encoder.
struct ModelConfig {
  std::string name = "custom";
  std::size_t layers = 12;
  std::size_t dim = 384;
  std::size_t heads = 6;
  double mlp_ratio = 2.67;
  std::size_t patch_size = 16;
  std::size_t in_channels = 3;
  std::size_t max_cores = 64;
  std::size_t chunk = 8;
  std::vector<std::size_t> budgets = {8, 16, 24, 32, 40, 48, 56, 64};
  double rope_base = 100.0;
  double ln_eps = 1e-6;
  double dropout = 0.0;
  double alpha_init = 0.01;
  std::size_t fps_grid = 64;

  /// SwiGLU hidden width, truncated exactly like int(dim * mlp_ratio).
  std::size_t hidden() const { return static_cast<std::size_t>(static_cast<double>(dim) * mlp_ratio); }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t chunks() const { return max_cores / chunk; }
  std::size_t patch_features() const { return in_channels * patch_size * patch_size; }

  bool has_budget(std::size_t c) const {
    for (auto b : budgets)
      if (b == c) return true;
    return false;
  }

  std::string budgets_str() const {
    std::string s;
    for (auto b : budgets) s += (s.empty() ? "" : ",") + std::to_string(b);
    return s;
  }

  void validate() const {
    auto fail = [this](const std::string& why) { throw ConfigError("config '" + name + "': " + why); };
    if (layers == 0) fail("layers must be positive");
    if (dim == 0 || heads == 0 || dim % heads != 0) fail("dim must be divisible by heads");
    if (head_dim() % 4 != 0) fail("head_dim must be a multiple of 4 for 2D axial RoPE");
    if (!(mlp_ratio > 0.0) || hidden() == 0) fail("mlp_ratio must give a positive hidden width");
    if (patch_size == 0 || in_channels == 0) fail("patch_size and in_channels must be positive");
    if (chunk == 0 || max_cores == 0 || max_cores % chunk != 0) fail("max_cores must be a multiple of chunk");
    if (budgets.empty()) fail("budget list is empty");
    for (std::size_t i = 0; i < budgets.size(); ++i) {
      if (budgets[i] == 0 || budgets[i] % chunk != 0 || budgets[i] > max_cores)
        fail("budget " + std::to_string(budgets[i]) + " is not a multiple of chunk within capacity");
      if (i > 0 && budgets[i] <= budgets[i - 1]) fail("budgets must be strictly increasing");
    }
    if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
    if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
    if (fps_grid * fps_grid < max_cores) fail("fps_grid lattice too small for max_cores");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"name", c.name},           {"layers", c.layers},
                     {"dim", c.dim},             {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio}, {"patch_size", c.patch_size},
                     {"in_channels", c.in_channels}, {"max_cores", c.max_cores},
                     {"chunk", c.chunk},         {"budgets", c.budgets},
                     {"rope_base", c.rope_base}, {"ln_eps", c.ln_eps},
                     {"dropout", c.dropout},     {"alpha_init", c.alpha_init},
                     {"fps_grid", c.fps_grid}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.name = j.value("name", d.name);
  c.layers = j.value("layers", d.layers);
  c.dim = j.value("dim", d.dim);
  c.heads = j.value("heads", d.heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.max_cores = j.value("max_cores", d.max_cores);
  c.chunk = j.value("chunk", d.chunk);
  c.budgets = j.value("budgets", d.budgets);
  c.rope_base = j.value("rope_base", d.rope_base);
  c.ln_eps = j.value("ln_eps", d.ln_eps);
  c.dropout = j.value("dropout", d.dropout);
  c.alpha_init = j.value("alpha_init", d.alpha_init);
  c.fps_grid = j.value("fps_grid", d.fps_grid);
}

/// Named presets: small, small_plus, base, large, tiny-test.
inline ModelConfig preset(const std::string& name) {
  ModelConfig c;
  c.name = name;
  if (name == "small") {
    c.layers = 12, c.dim = 384, c.heads = 6, c.mlp_ratio = 2.67;
  } else if (name == "small_plus") {
    c.layers = 12, c.dim = 384, c.heads = 6, c.mlp_ratio = 4.0;
  } else if (name == "base") {
    c.layers = 12, c.dim = 768, c.heads = 12, c.mlp_ratio = 2.67;
  } else if (name == "large") {
    c.layers = 24, c.dim = 1024, c.heads = 16, c.mlp_ratio = 2.67;
  } else if (name == "tiny-test") {
    c.layers = 2, c.dim = 16, c.heads = 2, c.mlp_ratio = 2.67;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected small, small_plus, base, large, tiny-test)");
  }
  c.validate();
  return c;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"small", "small_plus", "base", "large", "tiny-test"};
  return names;
}

/// Exact number of learnable scalars for a configuration.
inline std::uint64_t param_count(const ModelConfig& c) {
  c.validate();
  const std::uint64_t d = c.dim, h = c.hidden(), l = c.layers;
  const std::uint64_t patch_embed = c.patch_features() * d + d;
  const std::uint64_t block = 2 * (2 * d)                // two LayerNorms
                              + 4 * (d * d + d)          // q, k, v, out
                              + (d * 2 * h + 2 * h)      // fc1
                              + (h * d + d);             // fc2
  const std::uint64_t final_norm = 2 * d;
  const std::uint64_t cores = c.max_cores * d + c.max_cores * 2;
  const std::uint64_t coord_heads = (l - 1) * (d * 2 + 2) + (l - 1);
  return patch_embed + l * block + final_norm + cores + coord_heads;
}

}  // namespace veca
