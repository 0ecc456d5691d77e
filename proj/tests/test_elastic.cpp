#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "veca/veca.hpp"

using namespace veca;

namespace {

constexpr double kChi2Crit7DofAt1e3 = 24.321886347856854;

std::vector<std::size_t> counts(const BudgetDistribution& d, Rng& rng, std::size_t draws) {
  std::vector<std::size_t> n(d.budgets().size(), 0);
  for (std::size_t i = 0; i < draws; ++i) {
    const auto c = d.sample(rng);
    for (std::size_t k = 0; k < n.size(); ++k)
      if (d.budgets()[k] == c) ++n[k];
  }
  return n;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("veca_test_" + name);
}

}  // namespace

TEST(BudgetDistribution, StandardProbabilities) {
  const auto d = BudgetDistribution::standard();
  double total = 0;
  for (double p : d.probs()) total += p;
  EXPECT_NEAR(total, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(d.prob(8), 0.05);
  EXPECT_DOUBLE_EQ(d.prob(64), 0.20);
  EXPECT_DOUBLE_EQ(d.prob(40), 0.15);
  EXPECT_EQ(d.prob(12), 0.0);
}

TEST(BudgetDistribution, DegenerateWeightsAlwaysPickTheSameBudget) {
  const BudgetDistribution d({8, 16, 24, 32, 40, 48, 56, 64}, {0, 0, 0, 0, 0, 0, 0, 1});
  Rng rng(1, "budget");
  for (int i = 0; i < 10000; ++i) ASSERT_EQ(d.sample(rng), 64u);
  const BudgetDistribution first({8, 16}, {1, 0});
  for (int i = 0; i < 10000; ++i) ASSERT_EQ(first.sample(rng), 8u);
}

TEST(BudgetDistribution, EmpiricalFrequencies) {
  const auto d = BudgetDistribution::standard();
  Rng rng(2, "budget");
  const auto n = counts(d, rng, 100000);
  for (std::size_t k = 0; k < n.size(); ++k)
    EXPECT_NEAR(double(n[k]) / 1e5, d.probs()[k], 0.005) << "budget " << d.budgets()[k];
}

TEST(BudgetDistribution, ChiSquareAcrossFiveStreams) {
  const auto d = BudgetDistribution::standard();
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(100 + s, "budget");
    const auto n = counts(d, rng, 100000);
    double chi2 = 0;
    for (std::size_t k = 0; k < n.size(); ++k) {
      const double e = 1e5 * d.probs()[k];
      chi2 += (n[k] - e) * (n[k] - e) / e;
    }
    EXPECT_LT(chi2, kChi2Crit7DofAt1e3) << "stream " << s;
  }
}

TEST(BudgetDistribution, DeterministicGivenStream) {
  const auto d = BudgetDistribution::standard();
  Rng a(3, "budget"), b(3, "budget");
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(d.sample(a), d.sample(b));
}

TEST(BudgetDistribution, RejectsInvalidWeights) {
  EXPECT_THROW(BudgetDistribution({8, 16}, {1}), ConfigError);
  EXPECT_THROW(BudgetDistribution({8, 16}, {0, 0}), ConfigError);
  EXPECT_THROW(BudgetDistribution({8, 16}, {1, -1}), ConfigError);
  EXPECT_THROW(BudgetDistribution({16, 8}, {1, 1}), ConfigError);
  EXPECT_THROW(BudgetDistribution({8, 12}, {1, 1}).check_against(preset("tiny-test")), BudgetError);
}

TEST(ActivePrefix, FullAndFirstChunk) {
  const auto m = VecaEncoder<double>::init(preset("tiny-test"), 1);
  const auto [all_tok, all_xy] = active_prefix(m.cores, 64);
  EXPECT_EQ(all_tok.shape(), (Shape{64, 16}));
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t i = 0; i < 8 * 16; ++i) ASSERT_EQ(all_tok[k * 128 + i], m.cores.token_chunks[k][i]);
  const auto [tok8, xy8] = active_prefix(m.cores, 8);
  EXPECT_EQ(tok8.values(), m.cores.token_chunks[0].values());
  EXPECT_EQ(xy8.values(), m.cores.coord_chunks[0].values());
}

TEST(ActivePrefix, NestedPrefixesAreExact) {
  const auto m = VecaEncoder<double>::init(preset("tiny-test"), 2);
  for (std::size_t c1 = 8; c1 <= 64; c1 += 8)
    for (std::size_t c2 = c1 + 8; c2 <= 64; c2 += 8) {
      const auto [t1, x1] = active_prefix(m.cores, c1);
      const auto [t2, x2] = active_prefix(m.cores, c2);
      EXPECT_TRUE(std::equal(t1.values().begin(), t1.values().end(), t2.values().begin())) << c1 << " in " << c2;
      EXPECT_TRUE(std::equal(x1.values().begin(), x1.values().end(), x2.values().begin())) << c1 << " in " << c2;
    }
}

TEST(ActivePrefix, InvalidBudgets) {
  const auto m = VecaEncoder<double>::init(preset("tiny-test"), 3);
  EXPECT_THROW(active_prefix(m.cores, 0), BudgetError);
  EXPECT_THROW(active_prefix(m.cores, 12), BudgetError);
  EXPECT_THROW(active_prefix(m.cores, 72), BudgetError);
}

TEST(ActivePrefix, GradientsReachOnlyActiveChunks) {
  const auto m = VecaEncoder<double>::init(preset("tiny-test"), 4);
  Rng rng(5, "test");
  const auto img = synthetic_batch<double>(1, 32, 32, rng);
  sum(square(m.forward(img, 16).dense)).backward();
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(m.cores.token_chunks[k].has_grad(), k < 2) << "chunk " << k;
    EXPECT_EQ(m.cores.coord_chunks[k].has_grad(), k < 2) << "chunk " << k;
  }
}

TEST(Schedule, RoundTripWithComment) {
  const auto path = temp_file("schedule.txt");
  const std::vector<std::size_t> s = {8, 64, 64, 24, 40};
  save_schedule(path.string(), s, "config: {}");
  EXPECT_EQ(load_schedule(path.string()), s);
  ScheduleReplay replay(load_schedule(path.string()));
  for (auto c : s) EXPECT_EQ(replay.next(), c);
  EXPECT_THROW(replay.next(), BudgetError);
  std::filesystem::remove(path);
}

TEST(Schedule, MalformedFiles) {
  const auto path = temp_file("bad_schedule.txt");
  {
    std::ofstream(path) << "8\nsixteen\n";
  }
  EXPECT_THROW(load_schedule(path.string()), FormatError);
  {
    std::ofstream(path) << "8\n0\n";
  }
  EXPECT_THROW(load_schedule(path.string()), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_schedule(path.string()), IoError);
}
