#include "aad/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aad/common.hpp"

namespace aad {

double median_last_k(const std::vector<double>& values, int64_t k) {
  require(k >= 1, "median_last_k: k must be positive");
  require(int64_t(values.size()) >= k, "median_last_k: fewer than k values");
  std::vector<double> tail(values.end() - k, values.end());
  std::sort(tail.begin(), tail.end());
  if (k % 2 == 1) return tail[size_t(k / 2)];
  return 0.5 * (tail[size_t(k / 2 - 1)] + tail[size_t(k / 2)]);
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                    const std::vector<double>& b) {
  require(a.size() == b.size(), "wilcoxon: paired samples must have equal length");
  std::vector<double> diff;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diff.push_back(d);
  }
  WilcoxonResult res;
  if (diff.empty()) {
    res.statistic = 0.0;
    res.p_value = 1.0;
    res.n_effective = 0;
    return res;
  }
  const int64_t n = int64_t(diff.size());
  require(n >= 5, "wilcoxon: need at least 5 nonzero differences");
  res.n_effective = n;

  // ranks of |d| with average ranks on ties; doubled ranks stay integral
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
    return std::abs(diff[size_t(x)]) < std::abs(diff[size_t(y)]);
  });
  std::vector<int64_t> rank2(static_cast<size_t>(n));  // 2 * rank
  std::vector<int64_t> tie_sizes;
  for (int64_t i = 0; i < n;) {
    int64_t j = i;
    while (j < n &&
           std::abs(diff[size_t(order[size_t(j)])]) == std::abs(diff[size_t(order[size_t(i)])]))
      ++j;
    const int64_t avg2 = (i + 1) + j;  // 2 * mean of ranks i+1 .. j
    for (int64_t k = i; k < j; ++k) rank2[size_t(order[size_t(k)])] = avg2;
    tie_sizes.push_back(j - i);
    i = j;
  }

  int64_t w2_pos = 0, w2_neg = 0;
  double med_acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (diff[size_t(i)] > 0)
      w2_pos += rank2[size_t(i)];
    else
      w2_neg += rank2[size_t(i)];
    med_acc += diff[size_t(i)] > 0 ? 1.0 : -1.0;
  }
  res.statistic = 0.5 * double(std::min(w2_pos, w2_neg));
  res.effect_direction = med_acc > 0 ? 1.0 : (med_acc < 0 ? -1.0 : 0.0);

  if (n <= 25) {
    // exact distribution of the doubled positive rank sum over 2^n sign flips
    const int64_t total2 = std::accumulate(rank2.begin(), rank2.end(), int64_t(0));
    std::vector<double> count(size_t(total2 + 1), 0.0);
    count[0] = 1.0;
    for (int64_t i = 0; i < n; ++i) {
      const int64_t r = rank2[size_t(i)];
      for (int64_t s = total2; s >= r; --s) count[size_t(s)] += count[size_t(s - r)];
    }
    const double denom = std::pow(2.0, double(n));
    double p_le = 0.0, p_ge = 0.0;
    for (int64_t s = 0; s <= total2; ++s) {
      if (s <= w2_pos) p_le += count[size_t(s)];
      if (s >= w2_pos) p_ge += count[size_t(s)];
    }
    res.p_value = std::min(1.0, 2.0 * std::min(p_le, p_ge) / denom);
  } else {
    const double mean = double(n) * double(n + 1) / 4.0;
    double var = double(n) * double(n + 1) * double(2 * n + 1) / 24.0;
    for (int64_t t : tie_sizes) var -= double(t * t * t - t) / 48.0;
    const double w = res.statistic;
    const double z = (w - mean + 0.5) / std::sqrt(var);
    const double phi = 0.5 * std::erfc(-z / std::sqrt(2.0));
    res.p_value = std::min(1.0, 2.0 * phi);
  }
  return res;
}

}  // namespace aad
