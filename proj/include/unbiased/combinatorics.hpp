#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace unbiased {

/// C(n, k), saturating at UINT64_MAX.
inline std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t result = 1;
  for (int i = 1; i <= k; ++i) {
    const std::uint64_t num = static_cast<std::uint64_t>(n - k + i);
    // result * num / i is exact at every step; guard the multiplication.
    if (result > std::numeric_limits<std::uint64_t>::max() / num) return std::numeric_limits<std::uint64_t>::max();
    result = result * num / static_cast<std::uint64_t>(i);
  }
  return result;
}

/// Advances a strictly increasing k-subset of [0, n) to its lexicographic successor.
inline bool next_combination(std::vector<int> &comb, int n) {
  const int k = static_cast<int>(comb.size());
  int i = k - 1;
  while (i >= 0 && comb[i] == n - k + i) --i;
  if (i < 0) return false;
  ++comb[i];
  for (int j = i + 1; j < k; ++j) comb[j] = comb[j - 1] + 1;
  return true;
}

inline std::vector<int> first_combination(int k) {
  std::vector<int> comb(k);
  for (int i = 0; i < k; ++i) comb[i] = i;
  return comb;
}

/// Uniform k-subset of [0, n) in increasing order (Floyd's algorithm).
inline std::vector<int> random_subset(int n, int k, Rng &rng) {
  require(k >= 0 && k <= n, "random_subset: need 0 <= k <= n");
  std::set<int> chosen;
  for (int j = n - k; j < n; ++j) {
    const int t = static_cast<int>(rng.index(static_cast<std::uint64_t>(j) + 1));
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

} // namespace unbiased
