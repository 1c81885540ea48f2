#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mobclip/errors.hpp"

namespace mobclip {

/// Vose alias table: O(n) construction, O(1) weighted draws.
class AliasTable {
public:
  AliasTable() = default;

  explicit AliasTable(std::span<const double> weights) {
    const std::size_t n = weights.size();
    if (n == 0) throw ValidationError("alias table needs at least one weight");
    if (n > UINT32_MAX) throw ValidationError("alias table too large");
    long double total = 0.0L;
    for (double w : weights) {
      if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("alias weights must be positive and finite");
      total += w;
    }
    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<long double> scaled(n);
    std::vector<std::uint32_t> small, large;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = static_cast<long double>(weights[i]) * static_cast<long double>(n) / total;
      alias_[i] = static_cast<std::uint32_t>(i);
      (scaled[i] < 1.0L ? small : large).push_back(static_cast<std::uint32_t>(i));
    }
    while (!small.empty() && !large.empty()) {
      const auto s = small.back();
      small.pop_back();
      const auto l = large.back();
      prob_[s] = static_cast<double>(scaled[s]);
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0L;
      if (scaled[l] < 1.0L) {
        large.pop_back();
        small.push_back(l);
      }
    }
    // Leftovers are 1 up to rounding.
    for (auto i : large) prob_[i] = 1.0;
    for (auto i : small) prob_[i] = 1.0;
  }

  std::size_t size() const noexcept { return prob_.size(); }
  const std::vector<double>& prob() const noexcept { return prob_; }
  const std::vector<std::uint32_t>& alias() const noexcept { return alias_; }

  /// u1, u2 uniform in [0, 1).
  std::size_t draw(double u1, double u2) const noexcept {
    auto i = static_cast<std::size_t>(u1 * static_cast<double>(prob_.size()));
    if (i >= prob_.size()) i = prob_.size() - 1;
    return u2 < prob_[i] ? i : alias_[i];
  }

  template <typename Rng>
  std::size_t operator()(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double u1 = u(rng);
    return draw(u1, u(rng));
  }

  /// Exact sampling distribution encoded by the table.
  std::vector<double> implied_probabilities() const {
    const std::size_t n = prob_.size();
    std::vector<long double> p(n, 0.0L);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] += prob_[i];
      p[alias_[i]] += 1.0L - prob_[i];
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(p[i] / static_cast<long double>(n));
    return out;
  }

private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

inline AliasTable build_alias(std::span<const double> weights) { return AliasTable(weights); }

}  // namespace mobclip
