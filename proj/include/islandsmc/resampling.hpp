#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "islandsmc/random_stream.hpp"

namespace islandsmc {

/// Ancestor indices selected by a resampling pass, in draw order.
struct ResampleResult {
  std::vector<int> indices;
};

/// Walker/Vose alias table for O(1) categorical draws after O(N) setup.
class AliasTable {
 public:
  /// `probs` must be nonnegative, finite and sum to one within 1e-9.
  explicit AliasTable(const Eigen::VectorXd& probs);

  int sample(RandomStream& rng) const noexcept {
    const double u = rng.uniform() * static_cast<double>(cutoff_.size());
    auto slot = static_cast<std::size_t>(u);
    if (slot >= cutoff_.size()) slot = cutoff_.size() - 1;
    return (u - static_cast<double>(slot)) < cutoff_[slot] ? static_cast<int>(slot) : alias_[slot];
  }

  std::size_t size() const noexcept { return cutoff_.size(); }

 private:
  std::vector<double> cutoff_;
  std::vector<int> alias_;
};

/// `count` i.i.d. draws from categorical(probs). Each draw consumes one word of
/// `rng`. Throws ArgumentError on negative/NaN entries or probabilities that do
/// not sum to one.
ResampleResult multinomial_resample(const Eigen::VectorXd& probs, std::size_t count, RandomStream& rng);

}  // namespace islandsmc
