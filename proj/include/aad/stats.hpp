#ifndef AAD_STATS_HPP
#define AAD_STATS_HPP

#include <cstdint>
#include <vector>

namespace aad {

// Median of the final k entries; even k averages the middle two.
double median_last_k(const std::vector<double>& values, int64_t k = 5);

struct WilcoxonResult {
  double statistic = 0.0;   // min(W+, W-)
  double p_value = 1.0;     // two-sided
  int64_t n_effective = 0;  // pairs remaining after zero differences drop out
  double effect_direction = 0.0;  // sign of median difference a - b
};

// Paired two-sided Wilcoxon signed-rank test. Zero differences are removed;
// ties receive average ranks. Exact p for n <= 25 (rank-sum enumeration via
// dynamic programming), normal approximation with continuity and tie
// correction above. All differences zero is the defined p = 1 case.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                    const std::vector<double>& b);

}  // namespace aad

#endif  // AAD_STATS_HPP
