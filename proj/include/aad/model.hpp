#ifndef AAD_MODEL_HPP
#define AAD_MODEL_HPP

#include <array>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "aad/conv_block.hpp"
#include "aad/lstm.hpp"
#include "aad/nn.hpp"
#include "aad/trials.hpp"

namespace aad {

enum class AblationMode { none, zero_eeg, zero_audio, remove_blstm, remove_fc };

AblationMode ablation_from_string(const std::string& s);
std::string to_string(AblationMode m);

// One convolution table row in (time, space) coordinates, where "space" is
// the electrode axis for the EEG net and the frequency axis for the audio net.
struct LayerSpec {
  int64_t kernels;
  int64_t k_t, k_x;
  int64_t d_t, d_x;
  int64_t p_t, p_x;
  int64_t q_t, q_x;  // max-pool extents
};

const std::array<LayerSpec, 4>& eeg_layer_table();
const std::array<LayerSpec, 5>& audio_layer_table();

// Extents after the conv and after the pool of each layer, (time, space).
struct StageExtents {
  int64_t conv_t, conv_x;
  int64_t pool_t, pool_x;
};

// Per-layer extents for a given trial duration, including the adaptive final
// time pool that pins the embedding length to 48 for non-3 s durations.
std::vector<StageExtents> eeg_stage_extents(int64_t duration_s);
std::vector<StageExtents> audio_stage_extents(int64_t duration_s);

struct ModelConfig {
  int64_t duration_s = 3;
  int64_t blstm_hidden = 32;
  std::array<int64_t, 3> fc_widths{96, 48, 16};
  double p_drop_eeg = 0.25;
  double p_drop_audio = 0.4;
  double p_drop_concat = 0.25;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  AblationMode arch = AblationMode::none;  // remove_* variants change the head
  uint64_t init_seed = 1;
};

// Batched model input. Audio is stored frequency-major ([2N, 257, T_s, 1],
// speaker a rows first) to match the audio subnetwork's internal layout.
struct ModelInput {
  Tensor<float> eeg;    // [N, T_e, 10, 1]
  Tensor<float> audio;  // [2N, 257, T_s, 1]
  std::vector<int> labels;

  int64_t batch() const { return eeg.rank() ? eeg.dim(0) : 0; }
};

ModelInput make_input(const std::vector<const TrialRecord*>& trials);

struct ParamCountRow {
  std::string name;
  int64_t count;
  bool prunable;
};

struct ParamCountReport {
  std::vector<ParamCountRow> rows;
  int64_t total = 0;
  int64_t prunable = 0;
  int64_t bias_bn = 0;
};

// The joint CNN-LSTM attention classifier: EEG_CNN + shared-weight Audio_CNN
// (run over both speakers), feature concatenation, BLSTM, FC head.
class Model {
 public:
  explicit Model(ModelConfig cfg);

  // Returns logits [N x 2]. zero_eeg / zero_audio blank the corresponding
  // raw input; remove_* modes must match the constructed architecture.
  Var<float> forward(const ModelInput& input, bool train,
                     AblationMode mode = AblationMode::none);

  // Convenience single-trial inference: softmax probabilities [p0, p1].
  std::array<double, 2> predict(const TrialRecord& trial,
                                AblationMode mode = AblationMode::none);

  ParamStore<float>& params() { return store_; }
  const ParamStore<float>& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }

  ParamCountReport param_count() const;

  // dropout mask stream; reseed for reproducible training runs
  void seed_dropout(uint64_t seed) { dropout_rng_ = Rng(seed); }

 private:
  struct Block {
    ConvBlockParams<float> prm;
    LayerSpec spec;
  };

  Var<float> conv_stack(Var<float> x, const std::vector<Block>& blocks, bool audio_net,
                        bool train, double p_drop);

  ModelConfig cfg_;
  ParamStore<float> store_;
  std::deque<BnState<float>> bn_states_;
  std::vector<Block> eeg_blocks_, audio_blocks_;
  LstmDir<float> fw_, bw_;
  bool has_blstm_ = true, has_fc_stack_ = true;
  std::vector<std::pair<Var<float>, Var<float>>> fc_;  // (W, b)
  Rng dropout_rng_{1};
};

}  // namespace aad

#endif  // AAD_MODEL_HPP
