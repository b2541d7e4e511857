#ifndef AAD_CHECKPOINT_HPP
#define AAD_CHECKPOINT_HPP

#include <string>

#include "aad/nn.hpp"

namespace aad {

// Dense checkpoint ("AADWTSv1"): per named tensor, u16 name length, name,
// u8 rank, u32 extents, float32 payload, row-major, little-endian. Learnable
// parameters first, then batch-norm running statistics.
void save_checkpoint(const std::string& path, const ParamStore<float>& store);

// Strict loader: every stored tensor must exist in `store` with the same
// shape, and every store entry must be present in the file.
void load_checkpoint(const std::string& path, ParamStore<float>& store);

// Sparse variant ("AADWTSs1"): per tensor, name/rank/extents, advertised
// nonzero count, alternating zero-run/nonzero-run lengths (starting with a
// zero run), then the nonzero float32 payload. The loader reconstructs dense
// tensors and verifies the advertised sparsity.
void save_sparse_checkpoint(const std::string& path, const ParamStore<float>& store);
void load_sparse_checkpoint(const std::string& path, ParamStore<float>& store);

}  // namespace aad

#endif  // AAD_CHECKPOINT_HPP
