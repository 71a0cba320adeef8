#include "islandsmc/resampling.hpp"

#include <cmath>
#include <string>

#include "islandsmc/errors.hpp"

namespace islandsmc {

AliasTable::AliasTable(const Eigen::VectorXd& probs) {
  const auto n = static_cast<std::size_t>(probs.size());
  if (n == 0) throw ArgumentError("empty probability vector");
  double total = 0.0;
  std::size_t heaviest = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probs[static_cast<Eigen::Index>(i)];
    if (std::isnan(p) || std::isinf(p) || p < 0.0) {
      throw ArgumentError("invalid probability at index " + std::to_string(i));
    }
    if (p > probs[static_cast<Eigen::Index>(heaviest)]) heaviest = i;
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("probabilities do not sum to one");

  cutoff_.assign(n, 0.0);
  alias_.assign(n, 0);
  std::vector<double> scaled(n);
  std::vector<std::size_t> small;
  std::vector<std::size_t> large;
  small.reserve(n);
  large.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    scaled[i] = probs[static_cast<Eigen::Index>(i)] * static_cast<double>(n) / total;
    (scaled[i] < 1.0 ? small : large).push_back(i);
  }
  while (!small.empty() && !large.empty()) {
    const std::size_t s = small.back();
    small.pop_back();
    const std::size_t l = large.back();
    cutoff_[s] = scaled[s];
    alias_[s] = static_cast<int>(l);
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (std::size_t l : large) {
    cutoff_[l] = 1.0;
    alias_[l] = static_cast<int>(l);
  }
  // Leftovers from rounding. A zero-probability slot must never select itself.
  for (std::size_t s : small) {
    if (probs[static_cast<Eigen::Index>(s)] == 0.0) {
      cutoff_[s] = 0.0;
      alias_[s] = static_cast<int>(heaviest);
    } else {
      cutoff_[s] = 1.0;
      alias_[s] = static_cast<int>(s);
    }
  }
}

ResampleResult multinomial_resample(const Eigen::VectorXd& probs, std::size_t count, RandomStream& rng) {
  if (count == 0) throw ArgumentError("resample count must be positive");
  const AliasTable table(probs);
  ResampleResult out;
  out.indices.resize(count);
  for (auto& idx : out.indices) idx = table.sample(rng);
  return out;
}

}  // namespace islandsmc
