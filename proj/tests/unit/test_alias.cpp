#include <gtest/gtest.h>

#include <limits>
#include <numeric>

#include "test_support.hpp"

using namespace mobclip;

namespace {

std::vector<int> histogram(const AliasTable& t, int draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> h(t.size(), 0);
  for (int i = 0; i < draws; ++i) ++h[t(rng)];
  return h;
}

}  // namespace

TEST(Alias, TwoEqualWeights) {
  const std::vector<double> w{1, 1};
  const auto t = build_alias(w);
  const auto p = t.implied_probabilities();
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
  EXPECT_EQ(t.draw(0.2, 0.99), 0u);
  EXPECT_EQ(t.draw(0.7, 0.99), 1u);
}

TEST(Alias, OneToThreeWithinThreeSigma) {
  const std::vector<double> w{1, 3};
  const auto t = build_alias(w);
  const int n = 100'000;
  const auto h = histogram(t, n, 42);
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  EXPECT_NEAR(h[0], 0.25 * n, 3 * sigma);
  EXPECT_NEAR(h[1], 0.75 * n, 3 * sigma);
}

TEST(Alias, SingleWeightAlwaysZero) {
  const std::vector<double> w{7};
  const auto t = build_alias(w);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(t(rng), 0u);
  EXPECT_EQ(t.draw(0.999999, 0.999999), 0u);
}

TEST(Alias, ImpliedProbabilitiesMatchInputs) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> len(1, 300);
  std::lognormal_distribution<double> wd(0.0, 2.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> w(static_cast<std::size_t>(len(rng)));
    for (auto& x : w) x = wd(rng);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    const auto p = build_alias(w).implied_probabilities();
    for (std::size_t i = 0; i < w.size(); ++i) ASSERT_NEAR(p[i], w[i] / total, 1e-12);
  }
}

TEST(Alias, RejectsBadWeights) {
  EXPECT_THROW(build_alias(std::vector<double>{}), ValidationError);
  EXPECT_THROW(build_alias(std::vector<double>{1, 0}), ValidationError);
  EXPECT_THROW(build_alias(std::vector<double>{1, -2}), ValidationError);
  EXPECT_THROW(build_alias(std::vector<double>{1, std::numeric_limits<double>::infinity()}), ValidationError);
  EXPECT_THROW(build_alias(std::vector<double>{std::nan("")}), ValidationError);
}
