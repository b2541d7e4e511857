#include "aad/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace aad {

AblationMode ablation_from_string(const std::string& s) {
  if (s == "none") return AblationMode::none;
  if (s == "zero_eeg") return AblationMode::zero_eeg;
  if (s == "zero_audio") return AblationMode::zero_audio;
  if (s == "remove_blstm") return AblationMode::remove_blstm;
  if (s == "remove_fc") return AblationMode::remove_fc;
  throw std::invalid_argument("unknown ablation mode '" + s + "'");
}

std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::none: return "none";
    case AblationMode::zero_eeg: return "zero_eeg";
    case AblationMode::zero_audio: return "zero_audio";
    case AblationMode::remove_blstm: return "remove_blstm";
    case AblationMode::remove_fc: return "remove_fc";
  }
  return "none";
}

const std::array<LayerSpec, 4>& eeg_layer_table() {
  static const std::array<LayerSpec, 4> t = {{
      {32, 24, 1, 1, 1, 12, 0, 2, 1},
      {32, 7, 1, 2, 1, 6, 0, 1, 2},
      {32, 7, 5, 1, 1, 3, 2, 2, 5},
      {32, 7, 1, 1, 1, 3, 0, 1, 1},
  }};
  return t;
}

const std::array<LayerSpec, 5>& audio_layer_table() {
  static const std::array<LayerSpec, 5> t = {{
      {32, 1, 7, 1, 1, 0, 3, 1, 1},
      {32, 7, 1, 1, 1, 0, 0, 1, 4},
      {32, 3, 5, 8, 8, 0, 16, 1, 2},
      {32, 3, 3, 16, 16, 0, 16, 1, 1},
      {1, 1, 1, 1, 1, 0, 0, 2, 2},
  }};
  return t;
}

namespace {

constexpr int64_t kEmbedSteps = 48;

template <size_t N>
std::vector<StageExtents> stage_extents_impl(const std::array<LayerSpec, N>& table,
                                             int64_t t_in, int64_t x_in) {
  std::vector<StageExtents> out;
  int64_t t = t_in, x = x_in;
  for (size_t i = 0; i < N; ++i) {
    const LayerSpec& s = table[i];
    StageExtents e;
    e.conv_t = t + 2 * s.p_t - s.d_t * (s.k_t - 1);
    e.conv_x = x + 2 * s.p_x - s.d_x * (s.k_x - 1);
    const bool last = (i + 1 == N);
    const int64_t fixed_t = e.conv_t / s.q_t;
    e.pool_t = (last && fixed_t != kEmbedSteps) ? kEmbedSteps : fixed_t;
    e.pool_x = e.conv_x / s.q_x;
    t = e.pool_t;
    x = e.pool_x;
    out.push_back(e);
  }
  return out;
}

}  // namespace

std::vector<StageExtents> eeg_stage_extents(int64_t duration_s) {
  return stage_extents_impl(eeg_layer_table(), 64 * duration_s, 10);
}

std::vector<StageExtents> audio_stage_extents(int64_t duration_s) {
  return stage_extents_impl(audio_layer_table(), 50 * duration_s + 1, 257);
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  Rng rng(cfg_.init_seed);
  has_blstm_ = cfg_.arch != AblationMode::remove_blstm;
  has_fc_stack_ = cfg_.arch != AblationMode::remove_fc;

  auto add_block = [&](const std::string& name, const LayerSpec& spec, int64_t cin,
                       bool audio_net) {
    Block blk;
    blk.spec = spec;
    const int64_t kh = audio_net ? spec.k_x : spec.k_t;
    const int64_t kw = audio_net ? spec.k_t : spec.k_x;
    const int64_t fan_in = spec.k_t * spec.k_x * cin;
    blk.prm.w = store_.add(name + ".w",
                           init_uniform_fan_in<float>({kh, kw, cin, spec.kernels}, fan_in, rng),
                           true);
    blk.prm.b = store_.add(name + ".b", Tensor<float>::zeros({spec.kernels}), false);
    blk.prm.gamma = store_.add(name + ".bn.g", Tensor<float>::full({spec.kernels}, 1.f), false);
    blk.prm.beta = store_.add(name + ".bn.b", Tensor<float>::zeros({spec.kernels}), false);
    bn_states_.emplace_back(spec.kernels);
    blk.prm.bn = &bn_states_.back();
    store_.add_state(name + ".bn.rmean", &bn_states_.back().mean);
    store_.add_state(name + ".bn.rvar", &bn_states_.back().var);
    return blk;
  };

  int64_t cin = 1;
  for (size_t i = 0; i < eeg_layer_table().size(); ++i) {
    eeg_blocks_.push_back(
        add_block("eeg.l" + std::to_string(i + 1), eeg_layer_table()[i], cin, false));
    cin = eeg_layer_table()[i].kernels;
  }
  cin = 1;
  for (size_t i = 0; i < audio_layer_table().size(); ++i) {
    audio_blocks_.push_back(
        add_block("audio.l" + std::to_string(i + 1), audio_layer_table()[i], cin, true));
    cin = audio_layer_table()[i].kernels;
  }

  const int64_t concat_features = 64;
  int64_t flat = 0;
  if (has_blstm_) {
    fw_ = make_lstm_dir<float>(store_, "blstm.fw", concat_features, cfg_.blstm_hidden, rng);
    bw_ = make_lstm_dir<float>(store_, "blstm.bw", concat_features, cfg_.blstm_hidden, rng);
    flat = kEmbedSteps * 2 * cfg_.blstm_hidden;
  } else {
    flat = kEmbedSteps * concat_features;
  }

  if (has_fc_stack_) {
    std::vector<int64_t> widths{flat, cfg_.fc_widths[0], cfg_.fc_widths[1], cfg_.fc_widths[2],
                                2};
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
      const std::string name = "fc" + std::to_string(i + 1);
      fc_.push_back({store_.add(name + ".w",
                                init_uniform_fan_in<float>({widths[i], widths[i + 1]},
                                                           widths[i], rng),
                                true),
                     store_.add(name + ".b", Tensor<float>::zeros({widths[i + 1]}), false)});
    }
  } else {
    fc_.push_back({store_.add("head.w", init_uniform_fan_in<float>({flat, 2}, flat, rng), true),
                   store_.add("head.b", Tensor<float>::zeros({2}), false)});
  }
}

Var<float> Model::conv_stack(Var<float> x, const std::vector<Block>& blocks, bool audio_net,
                             bool train, double p_drop) {
  for (size_t i = 0; i < blocks.size(); ++i) {
    const Block& blk = blocks[i];
    const LayerSpec& s = blk.spec;
    ConvBlockCfg cb;
    cb.geom.kh = audio_net ? s.k_x : s.k_t;
    cb.geom.kw = audio_net ? s.k_t : s.k_x;
    cb.geom.dh = audio_net ? s.d_x : s.d_t;
    cb.geom.dw = audio_net ? s.d_t : s.d_x;
    cb.geom.ph = audio_net ? s.p_x : s.p_t;
    cb.geom.pw = audio_net ? s.p_t : s.p_x;
    cb.p_drop = p_drop;
    cb.bn_momentum = cfg_.bn_momentum;
    cb.bn_eps = cfg_.bn_eps;
    const int64_t Ho = cb.geom.out_h(x->value.dim(1));
    const int64_t Wo = cb.geom.out_w(x->value.dim(2));
    const int64_t qh = audio_net ? s.q_x : s.q_t;
    const int64_t qw = audio_net ? s.q_t : s.q_x;
    const bool last = (i + 1 == blocks.size());
    // final time-axis pool adapts to 48 steps for non-3 s durations
    if (last && !audio_net && Ho / qh != kEmbedSteps) {
      cb.win_h = pool_windows_adaptive(Ho, kEmbedSteps);
    } else {
      cb.win_h = pool_windows_fixed(Ho, qh);
    }
    if (last && audio_net && Wo / qw != kEmbedSteps) {
      cb.win_w = pool_windows_adaptive(Wo, kEmbedSteps);
    } else {
      cb.win_w = pool_windows_fixed(Wo, qw);
    }
    const std::string name =
        (audio_net ? "audio.l" : "eeg.l") + std::to_string(i + 1);
    x = conv_block(x, blk.prm, cb, train, dropout_rng_, name);
  }
  return x;
}

Var<float> Model::forward(const ModelInput& input, bool train, AblationMode mode) {
  require(mode == AblationMode::none || mode == AblationMode::zero_eeg ||
              mode == AblationMode::zero_audio,
          "forward: remove_* ablations are fixed at model construction");
  require(input.eeg.rank() == 4 && input.eeg.dim(2) == 10 && input.eeg.dim(3) == 1,
          "forward: eeg input must be [N, T_e, 10, 1]");
  const int64_t n = input.eeg.dim(0);
  const int64_t te = input.eeg.dim(1);
  require(te == 128 || te == 192 || te == 256 || te == 320,
          "forward: unsupported EEG trial length " + std::to_string(te));
  const int64_t ts = 50 * (te / 64) + 1;
  require(input.audio.rank() == 4 && input.audio.dim(0) == 2 * n &&
              input.audio.dim(1) == 257 && input.audio.dim(2) == ts &&
              input.audio.dim(3) == 1,
          "forward: audio input must be [2N, 257, " + std::to_string(ts) + ", 1]");

  Tensor<float> eeg_in = input.eeg;
  if (mode == AblationMode::zero_eeg) eeg_in.fill(0.f);
  Tensor<float> audio_in = input.audio;
  if (mode == AblationMode::zero_audio) audio_in.fill(0.f);

  auto eeg_leaf = make_leaf(std::move(eeg_in), false, "eeg_input");
  auto audio_leaf = make_leaf(std::move(audio_in), false, "audio_input");

  // [N, 48, 1, 32] -> [N*48, 32]
  auto eeg_emb = conv_stack(eeg_leaf, eeg_blocks_, false, train, cfg_.p_drop_eeg);
  auto eeg_flat = reshape(eeg_emb, {n * kEmbedSteps, 32});

  // both speakers share one audio net as a single stacked batch
  auto audio_out = conv_stack(audio_leaf, audio_blocks_, true, train, cfg_.p_drop_audio);
  const int64_t freq_out = audio_out->value.dim(1);  // 16
  auto audio_2d = reshape(audio_out, {2 * n, freq_out * kEmbedSteps});
  auto emb_a = reshape(
      transpose12(reshape(slice_rows(audio_2d, 0, n), {n, freq_out, kEmbedSteps})),
      {n * kEmbedSteps, freq_out});
  auto emb_b = reshape(
      transpose12(reshape(slice_rows(audio_2d, n, 2 * n), {n, freq_out, kEmbedSteps})),
      {n * kEmbedSteps, freq_out});

  auto cat = concat_cols<float>({eeg_flat, emb_a, emb_b}, "concat");  // [N*48, 64]
  auto cat_d = dropout(cat, cfg_.p_drop_concat, train, dropout_rng_, "concat.dropout");

  Var<float> flat;
  if (has_blstm_) {
    auto seq = transpose01(reshape(cat_d, {n, kEmbedSteps, 64}));  // [48, N, 64]
    auto lstm_out = blstm(seq, fw_, bw_, cfg_.blstm_hidden, "blstm");
    flat = reshape(transpose01(lstm_out), {n, kEmbedSteps * 2 * cfg_.blstm_hidden});
  } else {
    flat = reshape(cat_d, {n, kEmbedSteps * 64});
  }

  if (has_fc_stack_) {
    auto h = flat;
    for (size_t i = 0; i + 1 < fc_.size(); ++i) {
      const std::string name = "fc" + std::to_string(i + 1);
      h = relu(linear(h, fc_[i].first, fc_[i].second, name), name + ".relu");
      h = dropout(h, cfg_.p_drop_concat, train, dropout_rng_, name + ".dropout");
    }
    return linear(h, fc_.back().first, fc_.back().second, "fc_out");
  }
  return linear(flat, fc_[0].first, fc_[0].second, "head");
}

std::array<double, 2> Model::predict(const TrialRecord& trial, AblationMode mode) {
  NoGradGuard ng;
  ModelInput input = make_input({&trial});
  auto logits = forward(input, false, mode);
  const double l0 = logits->value.at(0, 0), l1 = logits->value.at(0, 1);
  const double m = std::max(l0, l1);
  const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

ModelInput make_input(const std::vector<const TrialRecord*>& trials) {
  require(!trials.empty(), "make_input: empty trial list");
  const int64_t n = int64_t(trials.size());
  const int64_t te = trials[0]->eeg.dim(0);
  const int64_t ne = trials[0]->eeg.dim(1);
  const int64_t ts = trials[0]->spec_a.dim(0);
  const int64_t nf = trials[0]->spec_a.dim(1);
  ModelInput input;
  input.eeg = Tensor<float>({n, te, ne, 1});
  input.audio = Tensor<float>({2 * n, nf, ts, 1});
  input.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const TrialRecord& t = *trials[size_t(i)];
    require(t.eeg.dim(0) == te && t.eeg.dim(1) == ne && t.spec_a.dim(0) == ts &&
                t.spec_a.dim(1) == nf && t.spec_b.same_shape(t.spec_a),
            "make_input: trial dimensions disagree");
    std::memcpy(input.eeg.ptr() + i * te * ne, t.eeg.ptr(), size_t(te * ne) * sizeof(float));
    // spectrograms arrive [T_s x freq]; the audio net wants frequency-major
    for (int64_t f = 0; f < nf; ++f)
      for (int64_t tt = 0; tt < ts; ++tt) {
        input.audio[(i * nf + f) * ts + tt] = t.spec_a.at(tt, f);
        input.audio[((n + i) * nf + f) * ts + tt] = t.spec_b.at(tt, f);
      }
    input.labels[size_t(i)] = int(t.label);
  }
  return input;
}

ParamCountReport Model::param_count() const {
  ParamCountReport rep;
  for (const auto& p : store_.params()) {
    const int64_t c = p.var->value.numel();
    rep.rows.push_back({p.name, c, p.prunable});
    rep.total += c;
    if (p.prunable)
      rep.prunable += c;
    else
      rep.bias_bn += c;
  }
  return rep;
}

}  // namespace aad
