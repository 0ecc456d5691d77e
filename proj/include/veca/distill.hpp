#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "veca/elastic.hpp"
#include "veca/image.hpp"
#include "veca/model.hpp"

namespace veca {

struct DistillConfig {
  double lambda_dense = 1.0;
  double beta_mse = 1.0;
  double norm_eps = 1e-6;
  double lr = 4e-3;
  double min_lr = 5e-5;
  std::size_t warmup_steps = 25;
  std::size_t total_steps = 500;
  double weight_decay = 0.015;
  std::size_t batch_size = 4;
  std::size_t resolution = 64;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(lambda_dense >= 0.0) || !(beta_mse >= 0.0)) throw ConfigError("distill: loss weights must be >= 0");
    if (!(min_lr > 0.0) || !(min_lr <= lr)) throw ConfigError("distill: need 0 < min_lr <= lr");
    if (total_steps == 0 || warmup_steps > total_steps) throw ConfigError("distill: need 0 <= warmup <= total steps");
    if (batch_size == 0) throw ConfigError("distill: batch_size must be positive");
    if (!(norm_eps > 0.0)) throw ConfigError("distill: norm_eps must be positive");
  }
};

template <typename T>
struct TeacherTargets {
  Tensor<T> y_star;  // [B x D]
  Tensor<T> z_star;  // [B x N x D]
};

namespace detail {
// Per-row 1 - cos(a, b) with norms floored at eps.
template <typename T>
Tensor<T> cosine_distance_rows(const Tensor<T>& a, const Tensor<T>& b, T eps) {
  const Tensor<T> denom = mul(clamp_min(row_norm(a), eps), clamp_min(row_norm(b), eps));
  return scale(add_scalar(div(row_dot(a, b), denom), T(-1)), T(-1));
}

template <typename T>
Tensor<T> as_rows(const Tensor<T>& x) {
  return x.rank() == 2 ? x : reshape(x, {x.rows(), x.cols()});
}
}  // namespace detail

/// Mean over the batch of 1 - cos(y, y*).
template <typename T>
Tensor<T> loss_global(const Tensor<T>& y, const Tensor<T>& y_star, T eps = T(1e-6)) {
  detail::require_same_shape(y, y_star, "loss_global");
  return mean(detail::cosine_distance_rows(detail::as_rows(y), detail::as_rows(y_star), eps));
}

/// Patch-mean cosine distance plus beta * per-element MSE.
template <typename T>
Tensor<T> loss_dense(const Tensor<T>& z, const Tensor<T>& z_star, T beta_mse, T eps = T(1e-6)) {
  detail::require_same_shape(z, z_star, "loss_dense");
  const Tensor<T> a = detail::as_rows(z), b = detail::as_rows(z_star);
  const Tensor<T> cos_term = mean(detail::cosine_distance_rows(a, b, eps));
  if (beta_mse == T(0)) return cos_term;
  return add(cos_term, scale(mean(square(sub(a, b))), beta_mse));
}

template <typename T>
struct LossParts {
  Tensor<T> global, dense, total;
};

template <typename T>
LossParts<T> distill_loss(const EncoderOutput<T>& out, const TeacherTargets<T>& tgt, const DistillConfig& cfg) {
  if (out.dense.shape() != tgt.z_star.shape())
    throw DimensionError("distill: student dense " + shape_str(out.dense.shape()) + " vs teacher " +
                         shape_str(tgt.z_star.shape()));
  const T eps = T(cfg.norm_eps);
  LossParts<T> p;
  p.global = loss_global(out.global, tgt.y_star.detach(), eps);
  p.dense = loss_dense(out.dense, tgt.z_star.detach(), T(cfg.beta_mse), eps);
  p.total = cfg.lambda_dense == 0.0 ? p.global : add(p.global, scale(p.dense, T(cfg.lambda_dense)));
  return p;
}

/// L(I, C) for the student at budget C.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& images, std::size_t active_c, const VecaEncoder<T>& student,
                     const TeacherTargets<T>& targets, const DistillConfig& cfg) {
  return distill_loss(student.forward(images, active_c), targets, cfg).total;
}

/// Frozen dense self-attention encoder used as a stand-in teacher.
/// Global feature is the mean of the final patch tokens.
template <typename T>
class DenseTeacher {
 public:
  static DenseTeacher init(const ModelConfig& student, std::uint64_t seed, std::size_t layers = 2) {
    DenseTeacher t;
    t.config_ = student;
    t.config_.name = "teacher";
    t.config_.layers = layers;
    t.config_.validate();
    Rng rng(seed, "teacher");
    t.rope_ = RopeSpec(t.config_.head_dim(), t.config_.rope_base);
    t.patch_embed_ = make_linear<T>(t.config_.patch_features(), t.config_.dim, rng);
    for (std::size_t l = 0; l < layers; ++l) t.blocks_.push_back(BlockParams<T>::init(t.config_, rng));
    t.final_norm_ = LayerNormParams<T>::init(t.config_.dim);
    return t;
  }

  TeacherTargets<T> operator()(const Tensor<T>& images) const {
    NoGradGuard no_grad;
    const std::size_t batch = images.dim(0);
    std::vector<Tensor<T>> globals, denses;
    std::size_t hp = 0, wp = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor<T> x = patch_embed_(extract_patches(images, b, config_.patch_size, &hp, &wp));
      const Tensor<T> coords = patch_grid<T>(hp, wp);
      for (const auto& blk : blocks_)
        x = block_forward(blk, x, coords, 0, rope_, T(config_.ln_eps), AttentionKind::Dense);
      x = final_norm_(x, T(config_.ln_eps));
      const std::size_t n = hp * wp;
      globals.push_back(matmul(Tensor<T>::full({1, n}, T(1) / T(n)), x));
      denses.push_back(x);
    }
    const std::size_t n = hp * wp;
    return {concat_rows(globals), reshape(concat_rows(denses), {batch, n, config_.dim})};
  }

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  RopeSpec rope_;
  Linear<T> patch_embed_;
  std::vector<BlockParams<T>> blocks_;
  LayerNormParams<T> final_norm_;
};

template <typename T>
TeacherTargets<T> synthetic_teacher(const DenseTeacher<T>& teacher, const Tensor<T>& images) {
  return teacher(images);
}

/// Linear warmup to `lr` over `warmup_steps`, then cosine decay to `min_lr`
/// at `total_steps`. Steps are 1-based.
struct LrSchedule {
  double lr, min_lr;
  std::size_t warmup_steps, total_steps;

  double operator()(std::size_t step) const {
    if (warmup_steps > 0 && step <= warmup_steps) return lr * double(step) / double(warmup_steps);
    if (step >= total_steps) return min_lr;
    const double progress = double(step - warmup_steps) / double(total_steps - warmup_steps);
    return min_lr + (lr - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

/// Adam with decoupled weight decay. Decay applies to `.weight` matrices only.
/// Tensors that received no gradient in a step are left untouched.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor<T>>> params, double beta1, double beta2, double eps,
        double weight_decay)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
      steps_.push_back(0);
      decay_.push_back(name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0);
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  void step(double lr) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].second;
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      auto w = p.mutable_data();
      const std::size_t t = ++steps_[k];
      const double bc1 = 1.0 - std::pow(beta1_, double(t)), bc2 = 1.0 - std::pow(beta2_, double(t));
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * double(g[i]) * g[i];
        double wi = w[i];
        if (decay_[k]) wi *= 1.0 - lr * wd_;
        wi -= lr * (m_[k][i] / bc1) / (std::sqrt(v_[k][i] / bc2) + eps_);
        w[i] = T(wi);
      }
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  double beta1_, beta2_, eps_, wd_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<std::size_t> steps_;
  std::vector<bool> decay_;
};

struct TrainRecord {
  std::size_t step;
  std::size_t budget;
  double loss;
  double lr;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  std::vector<std::size_t> schedule() const {
    std::vector<std::size_t> s;
    for (const auto& r : records) s.push_back(r.budget);
    return s;
  }

  /// Mean loss over records [first, first + count).
  double mean_loss(std::size_t first, std::size_t count) const {
    double s = 0.0;
    for (std::size_t i = first; i < first + count; ++i) s += records.at(i).loss;
    return s / double(count);
  }

  void write_csv(std::ostream& os, const std::string& header_comment = {}) const {
    if (!header_comment.empty()) os << "# " << header_comment << '\n';
    os << "step,budget,loss,lr\n";
    char buf[128];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n", r.step, r.budget, r.loss, r.lr);
      os << buf;
    }
  }
};

/// One training batch: normalized images plus teacher targets.
template <typename T>
struct Batch {
  Tensor<T> images;
  TeacherTargets<T> targets;
};

/// Supplies the batch for a 1-based step.
template <typename T>
using BatchSource = std::function<Batch<T>(std::size_t step)>;

/// Fresh synthetic images each step, labelled by the teacher.
template <typename T>
BatchSource<T> synthetic_batches(const DenseTeacher<T>& teacher, const DistillConfig& cfg, std::uint64_t data_seed) {
  auto rng = std::make_shared<Rng>(data_seed, "data");
  return [&teacher, cfg, rng](std::size_t) {
    Tensor<T> images = synthetic_batch<T>(cfg.batch_size, cfg.resolution, cfg.resolution, *rng);
    TeacherTargets<T> tgt = teacher(images);
    return Batch<T>{std::move(images), std::move(tgt)};
  };
}

/// Elastic distillation: one budget per optimizer step for the whole batch.
/// `next_budget` supplies the budget sequence (sampler or replay).
template <typename T>
TrainLog train(VecaEncoder<T>& student, const BatchSource<T>& batches,
               const std::function<std::size_t()>& next_budget, const DistillConfig& cfg,
               const std::function<void(const TrainRecord&)>& on_step = {}) {
  cfg.validate();
  AdamW<T> opt(student.named_parameters(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
  const LrSchedule sched{cfg.lr, cfg.min_lr, cfg.warmup_steps, cfg.total_steps};
  TrainLog log;
  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    const std::size_t budget = next_budget();
    Batch<T> batch = batches(step);
    Tensor<T> loss;
    try {
      loss = total_loss(batch.images, budget, student, batch.targets, cfg);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + " with budget " +
                         std::to_string(budget) + ": " + e.what());
    }
    if (!std::isfinite(loss.item()))
      throw NumericError("non-finite loss at step " + std::to_string(step) + " with budget " + std::to_string(budget));
    opt.zero_grad();
    loss.backward();
    const double lr = sched(step);
    opt.step(lr);
    log.records.push_back({step, budget, double(loss.item()), lr});
    if (on_step) on_step(log.records.back());
  }
  return log;
}

/// Convenience overload drawing budgets from a distribution stream.
template <typename T>
TrainLog train(VecaEncoder<T>& student, const BatchSource<T>& batches, const BudgetDistribution& dist,
               Rng& budget_rng, const DistillConfig& cfg) {
  dist.check_against(student.config);
  return train<T>(student, batches, [&] { return dist.sample(budget_rng); }, cfg);
}

struct BudgetEval {
  std::size_t budget;
  double global_loss, dense_loss, total;
};

/// Frozen-model losses at each budget on a fixed batch.
template <typename T>
std::vector<BudgetEval> eval_budgets(const VecaEncoder<T>& student, const Tensor<T>& images,
                                     const TeacherTargets<T>& targets, const std::vector<std::size_t>& budgets,
                                     const DistillConfig& cfg) {
  NoGradGuard no_grad;
  std::vector<BudgetEval> out;
  for (auto c : budgets) {
    student.check_budget(c);
    const auto parts = distill_loss(student.forward(images, c), targets, cfg);
    out.push_back({c, double(parts.global.item()), double(parts.dense.item()), double(parts.total.item())});
  }
  return out;
}

}  // namespace veca
