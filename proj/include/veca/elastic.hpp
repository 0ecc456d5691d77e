#pragma once

#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "veca/model.hpp"

namespace veca {

/// Discrete distribution over active-core budgets, p(C) = w(C) / sum(w).
class BudgetDistribution {
 public:
  BudgetDistribution(std::vector<std::size_t> budgets, std::vector<double> weights)
      : budgets_(std::move(budgets)), weights_(std::move(weights)) {
    if (budgets_.empty() || budgets_.size() != weights_.size())
      throw ConfigError("budget distribution: need one weight per budget");
    double total = 0.0;
    for (std::size_t i = 0; i < budgets_.size(); ++i) {
      if (i > 0 && budgets_[i] <= budgets_[i - 1]) throw ConfigError("budget distribution: budgets must increase");
      if (!(weights_[i] >= 0.0)) throw ConfigError("budget distribution: weights must be non-negative");
      total += weights_[i];
    }
    if (!(total > 0.0)) throw ConfigError("budget distribution: weights sum to zero");
    double run = 0.0;
    for (double w : weights_) {
      probs_.push_back(w / total);
      cdf_.push_back(run += w / total);
    }
    cdf_.back() = 1.0;
  }

  /// Budgets {8, ..., 64} with weights (1,1,2,2,3,3,4,4).
  static BudgetDistribution standard() {
    return {{8, 16, 24, 32, 40, 48, 56, 64}, {1, 1, 2, 2, 3, 3, 4, 4}};
  }

  /// Validates that every budget is usable by the given model config.
  void check_against(const ModelConfig& c) const {
    for (auto b : budgets_)
      if (!c.has_budget(b))
        throw BudgetError("budget " + std::to_string(b) + " is not one of {" + c.budgets_str() + "}");
  }

  const std::vector<std::size_t>& budgets() const { return budgets_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& probs() const { return probs_; }

  double prob(std::size_t budget) const {
    for (std::size_t i = 0; i < budgets_.size(); ++i)
      if (budgets_[i] == budget) return probs_[i];
    return 0.0;
  }

  /// Inverse-CDF draw consuming one value from `rng`.
  std::size_t sample(Rng& rng) const {
    const double u = rng.uniform();
    for (std::size_t i = 0; i < cdf_.size(); ++i)
      if (u < cdf_[i] && probs_[i] > 0.0) return budgets_[i];
    for (std::size_t i = budgets_.size(); i-- > 0;)
      if (probs_[i] > 0.0) return budgets_[i];
    return budgets_.back();
  }

 private:
  std::vector<std::size_t> budgets_;
  std::vector<double> weights_;
  std::vector<double> probs_;
  std::vector<double> cdf_;
};

inline std::size_t sample_budget(const BudgetDistribution& dist, Rng& rng) { return dist.sample(rng); }

/// Budget schedule as one integer per line; lines starting with '#' are comments.
inline void save_schedule(const std::string& path, const std::vector<std::size_t>& schedule,
                          const std::string& comment = "") {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write budget schedule to " + path);
  if (!comment.empty()) os << "# " << comment << '\n';
  for (auto c : schedule) os << c << '\n';
  if (!os) throw IoError("failed writing budget schedule to " + path);
}

inline std::vector<std::size_t> load_schedule(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read budget schedule from " + path);
  std::vector<std::size_t> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(line, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || line.find_first_not_of(" \t\r", pos) != std::string::npos)
      throw FormatError("budget schedule " + path + ": malformed entry on line " + std::to_string(lineno));
    if (v <= 0) throw FormatError("budget schedule " + path + ": non-positive entry on line " + std::to_string(lineno));
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

/// Replays a stored schedule; throws once exhausted.
class ScheduleReplay {
 public:
  explicit ScheduleReplay(std::vector<std::size_t> schedule) : schedule_(std::move(schedule)) {}
  std::size_t next() {
    if (pos_ >= schedule_.size()) throw BudgetError("budget schedule exhausted after " + std::to_string(pos_) + " steps");
    return schedule_[pos_++];
  }

 private:
  std::vector<std::size_t> schedule_;
  std::size_t pos_ = 0;
};

}  // namespace veca
