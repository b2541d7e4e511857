#ifndef AAD_SPLIT_HPP
#define AAD_SPLIT_HPP

#include <string>
#include <vector>

#include "aad/trials.hpp"

namespace aad {

// Trial indices per split (positions in the manifest/container order).
// Assignment is block-contiguous per recording; trials whose raw-signal
// spans straddle a block boundary fall into `dropped`.
struct SplitPlan {
  std::vector<int64_t> train, validation, test;
  std::vector<int64_t> dropped;
  std::vector<std::string> notes;
};

SplitPlan split_dataset(const std::vector<TrialMeta>& manifest, double f_train = 0.75,
                        double f_val = 0.125, uint64_t seed = 0);

// True when any train trial shares raw-signal samples with a validation or
// test trial of the same recording; the split invariant demands false.
bool has_train_eval_overlap(const std::vector<TrialMeta>& manifest, const SplitPlan& plan);

}  // namespace aad

#endif  // AAD_SPLIT_HPP
