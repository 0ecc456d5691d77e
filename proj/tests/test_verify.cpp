#include <gtest/gtest.h>

#include "veca/veca.hpp"

using namespace veca;

class VerifySuite : public ::testing::TestWithParam<std::string> {};

TEST_P(VerifySuite, PassesWithFixedSeed) {
  const auto results = run_verify_suite(GetParam(), {});
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) EXPECT_TRUE(r.pass) << r.suite << ": " << r.name << " (" << r.detail << ")";
}

TEST_P(VerifySuite, InjectedFaultIsDetected) {
  VerifyOptions opt;
  opt.inject_fault = true;
  const auto results = run_verify_suite(GetParam(), opt);
  std::size_t failed = 0;
  for (const auto& r : results) failed += !r.pass;
  EXPECT_GT(failed, 0u) << GetParam();
}

INSTANTIATE_TEST_SUITE_P(All, VerifySuite, ::testing::Values("attention", "rope", "gradients", "elastic", "diameter"),
                         [](const auto& info) { return info.param; });

TEST(VerifySuiteNames, UnknownSuiteIsAConfigError) {
  EXPECT_THROW(run_verify_suite("everything", {}), ConfigError);
}
