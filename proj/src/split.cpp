#include "aad/split.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "aad/common.hpp"

namespace aad {

namespace {

bool spans_overlap(const TrialMeta& a, const TrialMeta& b) {
  return a.source_id == b.source_id && a.span_begin < b.span_end && b.span_begin < a.span_end;
}

}  // namespace

SplitPlan split_dataset(const std::vector<TrialMeta>& manifest, double f_train, double f_val,
                        uint64_t seed) {
  (void)seed;  // block assignment is deterministic; kept for interface stability
  require(f_train > 0 && f_val >= 0 && f_train + 2 * f_val <= 1.0 + 1e-9,
          "split_dataset: bad fractions");
  SplitPlan plan;

  // group by recording, preserving first-appearance order
  std::vector<std::string> source_order;
  std::map<std::string, std::vector<int64_t>> by_source;
  for (int64_t i = 0; i < int64_t(manifest.size()); ++i) {
    const auto& m = manifest[size_t(i)];
    if (!by_source.count(m.source_id)) source_order.push_back(m.source_id);
    by_source[m.source_id].push_back(i);
  }

  for (const auto& src : source_order) {
    auto idx = by_source[src];
    std::sort(idx.begin(), idx.end(), [&](int64_t x, int64_t y) {
      const auto& a = manifest[size_t(x)];
      const auto& b = manifest[size_t(y)];
      if (a.span_begin != b.span_begin) return a.span_begin < b.span_begin;
      return a.trial_index < b.trial_index;
    });
    const int64_t n = int64_t(idx.size());
    const int64_t n_tr = std::llround(f_train * double(n));
    const int64_t n_va = std::llround(f_val * double(n));
    const int64_t n_te = n - n_tr - n_va;
    if (n_tr < 1 || n_va < 1 || n_te < 1) {
      plan.notes.push_back("recording '" + src + "' too short to split (" +
                           std::to_string(n) + " trials); assigned wholly to train");
      for (int64_t i : idx) plan.train.push_back(i);
      continue;
    }

    // tentative contiguous blocks, then symmetric boundary trimming: every
    // trial that overlaps a trial tentatively assigned to a different block
    // is excluded from the plan
    std::vector<int> block(size_t(n), 0);
    for (int64_t k = n_tr; k < n_tr + n_va; ++k) block[size_t(k)] = 1;
    for (int64_t k = n_tr + n_va; k < n; ++k) block[size_t(k)] = 2;

    // prefix max of span ends in sorted order, for exact overlap pruning
    std::vector<int64_t> pmax_end(static_cast<size_t>(n));
    for (int64_t k = 0; k < n; ++k) {
      const int64_t e = manifest[size_t(idx[size_t(k)])].span_end;
      pmax_end[size_t(k)] = k == 0 ? e : std::max(pmax_end[size_t(k - 1)], e);
    }

    std::vector<bool> drop(size_t(n), false);
    for (int64_t boundary : {n_tr, n_tr + n_va}) {
      for (int64_t i = boundary - 1; i >= 0; --i) {
        const auto& mi = manifest[size_t(idx[size_t(i)])];
        for (int64_t j = boundary; j < n; ++j) {
          const auto& mj = manifest[size_t(idx[size_t(j)])];
          if (mj.span_begin >= mi.span_end) break;  // begins sorted ascending
          if (block[size_t(j)] != block[size_t(i)] && spans_overlap(mi, mj)) {
            drop[size_t(i)] = true;
            break;
          }
        }
        if (pmax_end[size_t(i)] <= manifest[size_t(idx[size_t(boundary)])].span_begin)
          break;  // nothing this far left can reach the boundary
      }
      for (int64_t j = boundary; j < n; ++j) {
        const auto& mj = manifest[size_t(idx[size_t(j)])];
        bool hit = false;
        for (int64_t i = boundary - 1; i >= 0; --i) {
          if (pmax_end[size_t(i)] <= mj.span_begin) break;
          const auto& mi = manifest[size_t(idx[size_t(i)])];
          if (block[size_t(i)] != block[size_t(j)] && spans_overlap(mi, mj)) {
            hit = true;
            break;
          }
        }
        if (hit)
          drop[size_t(j)] = true;
        else if (pmax_end[size_t(boundary - 1)] <= mj.span_begin)
          break;  // later trials start even further right
      }
    }

    for (int64_t k = 0; k < n; ++k) {
      if (drop[size_t(k)]) {
        plan.dropped.push_back(idx[size_t(k)]);
      } else if (block[size_t(k)] == 0) {
        plan.train.push_back(idx[size_t(k)]);
      } else if (block[size_t(k)] == 1) {
        plan.validation.push_back(idx[size_t(k)]);
      } else {
        plan.test.push_back(idx[size_t(k)]);
      }
    }
  }
  return plan;
}

bool has_train_eval_overlap(const std::vector<TrialMeta>& manifest, const SplitPlan& plan) {
  for (int64_t t : plan.train) {
    for (int64_t e : plan.validation)
      if (spans_overlap(manifest[size_t(t)], manifest[size_t(e)])) return true;
    for (int64_t e : plan.test)
      if (spans_overlap(manifest[size_t(t)], manifest[size_t(e)])) return true;
  }
  return false;
}

}  // namespace aad
