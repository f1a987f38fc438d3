#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "snowcast/core/errors.hpp"
#include "snowcast/core/rng.hpp"

namespace snowcast::data {

enum class SplitMode {
  shuffled,       // seeded shuffle, then contiguous chunks of the permutation
  chronological,  // contiguous blocks in sample order
};

inline std::string to_string(SplitMode m) { return m == SplitMode::shuffled ? "shuffled" : "chronological"; }

inline SplitMode parse_split_mode(const std::string& s) {
  if (s == "shuffled") return SplitMode::shuffled;
  if (s == "chronological") return SplitMode::chronological;
  throw ParameterError("unknown split mode '" + s + "' (expected shuffled or chronological)");
}

struct Split {
  std::vector<std::size_t> train, test;  // both sorted ascending
};

struct OuterFold {
  std::vector<std::size_t> train, test;
  std::vector<Split> inner;  // indices are global sample indices drawn from `train`
};

struct FoldPlan {
  std::size_t n_samples = 0;
  std::uint64_t seed = 42;
  SplitMode mode = SplitMode::shuffled;
  std::vector<OuterFold> outer;
};

/// K-fold over `items`. The first n % k folds get one extra element.
inline std::vector<Split> k_fold(const std::vector<std::size_t>& items, std::size_t k, SplitMode mode, Rng& rng) {
  const std::size_t n = items.size();
  if (k < 2) throw ParameterError("k_fold: need at least 2 folds, got " + std::to_string(k));
  if (n < k) throw ParameterError("k_fold: " + std::to_string(n) + " samples cannot fill " + std::to_string(k) + " folds");
  std::vector<std::size_t> order = items;
  if (mode == SplitMode::shuffled) rng.shuffle(order);
  std::vector<Split> out(k);
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    out[f].test.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() + static_cast<std::ptrdiff_t>(start + len));
    std::sort(out[f].test.begin(), out[f].test.end());
    start += len;
  }
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) out[f].train.insert(out[f].train.end(), out[g].test.begin(), out[g].test.end());
    }
    std::sort(out[f].train.begin(), out[f].train.end());
  }
  return out;
}

/// Outer K-fold over all samples; each outer training set is split again into
/// `inner` folds with its own derived seed.
inline FoldPlan plan_nested_cv(std::size_t n_samples, std::size_t outer = 5, std::size_t inner = 3,
                               std::uint64_t seed = 42, SplitMode mode = SplitMode::shuffled) {
  if (n_samples < outer) {
    throw ParameterError("plan_nested_cv: " + std::to_string(n_samples) + " samples but " + std::to_string(outer) +
                         " outer folds");
  }
  FoldPlan plan;
  plan.n_samples = n_samples;
  plan.seed = seed;
  plan.mode = mode;
  std::vector<std::size_t> all(n_samples);
  std::iota(all.begin(), all.end(), 0);
  Rng rng(seed);
  for (Split& s : k_fold(all, outer, mode, rng)) {
    OuterFold f;
    f.train = std::move(s.train);
    f.test = std::move(s.test);
    plan.outer.push_back(std::move(f));
  }
  for (std::size_t o = 0; o < plan.outer.size(); ++o) {
    Rng inner_rng(mix_seed(seed, o + 1));
    plan.outer[o].inner = k_fold(plan.outer[o].train, inner, mode, inner_rng);
  }
  return plan;
}

}  // namespace snowcast::data
