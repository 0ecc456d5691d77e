#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "veca/veca.hpp"

using namespace veca;
using T64 = Tensor<double>;

namespace {

std::vector<double> row(const T64& t, std::size_t r) {
  return {t.values().begin() + r * t.cols(), t.values().begin() + (r + 1) * t.cols()};
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Rotates a single head vector at one coordinate through the library path.
std::vector<double> rotate(const RopeSpec& spec, const std::vector<double>& v, double x, double y) {
  const auto [c, s] = cos_sin(spec, T64({1, 2}, {x, y}));
  return rope_apply(T64({1, v.size()}, v), c, s).values();
}

}  // namespace

TEST(PatchGrid, SingleCellIsCentre) {
  EXPECT_EQ(patch_grid<double>(1, 1).values(), (std::vector<double>{0, 0}));
}

TEST(PatchGrid, TwoByTwo) {
  EXPECT_EQ(patch_grid<double>(2, 2).values(), (std::vector<double>{-0.5, -0.5, 0.5, -0.5, -0.5, 0.5, 0.5, 0.5}));
}

TEST(PatchGrid, Rectangular) {
  const T64 g = patch_grid<double>(2, 4);
  ASSERT_EQ(g.shape(), (Shape{8, 2}));
  const std::vector<double> xs = {-0.75, -0.25, 0.25, 0.75};
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_EQ(g.at(r * 4 + c, 0), xs[c]);
      EXPECT_EQ(g.at(r * 4 + c, 1), r == 0 ? -0.5 : 0.5);
    }
}

TEST(PatchGrid, MatchesCellCentreFormula) {
  for (std::size_t hp : {1, 3, 7, 16})
    for (std::size_t wp : {1, 5, 14}) {
      const T64 g = patch_grid<double>(hp, wp);
      for (std::size_t r = 0; r < hp; ++r)
        for (std::size_t c = 0; c < wp; ++c) {
          EXPECT_NEAR(g.at(r * wp + c, 0), (c + 0.5) / wp * 2 - 1, 1e-15);
          EXPECT_NEAR(g.at(r * wp + c, 1), (r + 0.5) / hp * 2 - 1, 1e-15);
        }
    }
}

TEST(PatchGrid, ColumnReflectionNegatesXExactly) {
  for (std::size_t wp = 1; wp <= 64; ++wp) {
    const T64 g = patch_grid<double>(3, wp);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < wp; ++c) {
        ASSERT_EQ(g.at(r * wp + c, 0), -g.at(r * wp + (wp - 1 - c), 0)) << "wp=" << wp;
        ASSERT_EQ(g.at(r * wp + c, 1), g.at(r * wp + (wp - 1 - c), 1));
      }
  }
}

TEST(RopeSpec, RejectsBadHeadDim) {
  EXPECT_THROW(RopeSpec(6), ConfigError);
  EXPECT_THROW(RopeSpec(0), ConfigError);
  EXPECT_NO_THROW(RopeSpec(8));
}

TEST(RopeSpec, FrequenciesStrictlyDecreasing) {
  const RopeSpec s(64);
  const auto f = s.freqs();
  ASSERT_EQ(f.size(), 16u);
  EXPECT_EQ(f[0], 1.0);
  for (std::size_t j = 1; j < f.size(); ++j) {
    EXPECT_LT(f[j], f[j - 1]);
    EXPECT_NEAR(f[j], std::pow(100.0, -double(j) / 16.0), 1e-15);
  }
}

TEST(CosSin, OriginIsZeroAngle) {
  const auto [c, s] = cos_sin(RopeSpec(16), T64({1, 2}, {0, 0}));
  for (double v : c.values()) EXPECT_EQ(v, 1.0);
  for (double v : s.values()) EXPECT_EQ(v, 0.0);
}

TEST(CosSin, UnitXGivesPiOnFirstPair) {
  const auto [c, s] = cos_sin(RopeSpec(16), T64({1, 2}, {1, 0}));
  EXPECT_NEAR(c[0], -1.0, 1e-15);
  EXPECT_NEAR(s[0], 0.0, 1e-15);
  // y-driven pairs stay at zero angle.
  for (std::size_t p = 4; p < 8; ++p) EXPECT_EQ(c[p], 1.0);
}

TEST(CosSin, EqualCoordsGiveIdenticalRows) {
  const auto [c, s] = cos_sin(RopeSpec(16), T64({2, 2}, {0.3, -0.7, 0.3, -0.7}));
  EXPECT_EQ(row(c, 0), row(c, 1));
  EXPECT_EQ(row(s, 0), row(s, 1));
}

TEST(CosSin, MatchesAngleFormula) {
  Rng rng(21, "test");
  const RopeSpec spec(32);
  const T64 coords = random_coords<double>(10, rng);
  const auto [c, s] = cos_sin(spec, coords);
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t p = 0; p < 16; ++p) {
      const double th = oracle::rope_angle(p, 32, coords.at(t, 0), coords.at(t, 1));
      EXPECT_NEAR(c.at(t, p), std::cos(th), 1e-14);
      EXPECT_NEAR(s.at(t, p), std::sin(th), 1e-14);
    }
}

TEST(RopeApply, ZeroAngleIsIdentity) {
  Rng rng(22, "test");
  const T64 x = random_tensor<double>({5, 8}, rng);
  EXPECT_EQ(rope_apply(x, T64::full({5, 4}, 1.0), T64::zeros({5, 4})).values(), x.values());
}

TEST(RopeApply, MatchesScalarRotation) {
  Rng rng(23, "test");
  const RopeSpec spec(16);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> v(16);
    for (auto& e : v) e = rng.uniform(-1, 1);
    const double x = rng.uniform(-1, 1), y = rng.uniform(-1, 1);
    const auto got = rotate(spec, v, x, y), ref = oracle::rope_rotate(v, x, y);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(got[i], ref[i], 1e-14);
  }
}

TEST(RopeApply, DimensionMismatch) {
  EXPECT_THROW(rope_apply(T64::zeros({3, 8}), T64::zeros({3, 3}), T64::zeros({3, 4})), DimensionError);
  EXPECT_THROW(rope_apply(T64::zeros({3, 8}), T64::zeros({2, 4}), T64::zeros({2, 4})), DimensionError);
}

TEST(RopeProperty, IsometryOverHundredDraws) {
  Rng rng(24, "test");
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const RopeSpec spec(rep % 2 ? 16 : 32);
    const T64 x = random_tensor<double>({6, spec.head_dim}, rng, 3.0);
    const auto [c, s] = cos_sin(spec, random_coords<double>(6, rng));
    const T64 y = rope_apply(x, c, s);
    for (std::size_t t = 0; t < 6; ++t)
      worst = std::max(worst, std::abs(std::sqrt(dot(row(x, t), row(x, t))) - std::sqrt(dot(row(y, t), row(y, t)))));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(RopeProperty, LogitsInvariantToCommonTranslation) {
  Rng rng(25, "test");
  const RopeSpec spec(32);
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> q(32), k(32);
    for (auto& e : q) e = rng.uniform(-1, 1);
    for (auto& e : k) e = rng.uniform(-1, 1);
    const double x1 = rng.uniform(-1, 1), y1 = rng.uniform(-1, 1), x2 = rng.uniform(-1, 1), y2 = rng.uniform(-1, 1);
    const double dx = rng.uniform(-0.5, 0.5), dy = rng.uniform(-0.5, 0.5);
    const double a = dot(rotate(spec, q, x1, y1), rotate(spec, k, x2, y2));
    const double b = dot(rotate(spec, q, x1 - dx, y1 - dy), rotate(spec, k, x2 - dx, y2 - dy));
    worst = std::max(worst, std::abs(a - b));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(RopeProperty, TanhKeepsCoordinatesInsideSquare) {
  Rng rng(26, "test");
  const T64 rho = random_tensor<double>({200, 2}, rng, 15.0);
  for (double u : veca::tanh(rho).values()) {
    EXPECT_GT(u, -1.0);
    EXPECT_LT(u, 1.0);
  }
}

namespace {

// Symmetric lattice coordinate.
double coord(std::size_t i, std::size_t side) { return (2.0 * double(i) - double(side - 1)) / double(side - 1); }

std::pair<double, double> lattice(std::size_t i, std::size_t side) { return {coord(i % side, side), coord(i / side, side)}; }

// Exhaustive scan: nearest-to-origin lattice point, lowest index on ties
// (distances within 1e-12 count as tied).
std::size_t oracle_seed(std::size_t side) {
  std::size_t best = 0;
  double bd = INFINITY;
  for (std::size_t i = 0; i < side * side; ++i) {
    const auto [x, y] = lattice(i, side);
    if (x * x + y * y < bd - 1e-12) {
      bd = x * x + y * y;
      best = i;
    }
  }
  return best;
}

}  // namespace

TEST(Fps, SinglePointIsSeed) {
  const auto pts = fps_points(1, 64);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0], lattice(oracle_seed(64), 64));
  // Four lattice points tie at distance sqrt(2)/63; the lowest index wins.
  EXPECT_NEAR(pts[0].first, -1.0 / 63.0, 1e-15);
  EXPECT_NEAR(pts[0].second, -1.0 / 63.0, 1e-15);
}

TEST(Fps, SecondPointIsFarthestByExhaustiveScan) {
  for (std::size_t side : {5, 8, 64}) {
    const auto pts = fps_points(2, side);
    const auto s = pts[0];
    std::size_t arg = 0;
    double bd = -1;
    for (std::size_t i = 0; i < side * side; ++i) {
      const auto p = lattice(i, side);
      const double d = std::hypot(p.first - s.first, p.second - s.second);
      if (d > bd + 1e-12) {
        bd = d;
        arg = i;
      }
    }
    EXPECT_EQ(pts[1], lattice(arg, side)) << "side " << side;
    EXPECT_EQ(std::abs(pts[1].first), 1.0);
    EXPECT_EQ(std::abs(pts[1].second), 1.0);
  }
}

TEST(Fps, BeatsRandomSubsets) {
  const double fps_min = oracle::min_pairwise(fps_points(64, 64));
  Rng rng(27, "test");
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<std::size_t> idx(64 * 64);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < 64; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < 64; ++i) pts.push_back(lattice(idx[i], 64));
    ASSERT_GE(fps_min, oracle::min_pairwise(pts)) << "subset " << rep;
  }
}

TEST(Fps, CapacityError) {
  EXPECT_THROW(fps_points(17, 4), CapacityError);
  EXPECT_NO_THROW(fps_points(16, 4));
}

TEST(Fps, InitReturnsClampedAtanh) {
  const T64 rho = fps_init<double>(8, 64);
  const auto pts = fps_points(8, 64);
  for (std::size_t i = 0; i < 8; ++i) {
    const double cx = std::clamp(pts[i].first, -0.999999, 0.999999);
    EXPECT_NEAR(std::tanh(rho.at(i, 0)), cx, 1e-12);
    EXPECT_TRUE(std::isfinite(rho.at(i, 0)) && std::isfinite(rho.at(i, 1)));
  }
  EXPECT_EQ(fps_init<double>(8, 64).values(), rho.values());
}
