#ifndef AAD_LSTM_HPP
#define AAD_LSTM_HPP

#include <string>
#include <vector>

#include "aad/graph.hpp"
#include "aad/nn.hpp"

namespace aad {

// One LSTM direction. Gate layout along the 4H axis is (input, forget,
// candidate, output); one shared bias per gate, not the doubled ih/hh pair.
template <typename T>
struct LstmDir {
  Var<T> w_ih;  // [F x 4H]
  Var<T> w_hh;  // [H x 4H]
  Var<T> b;     // [4H]
};

template <typename T>
LstmDir<T> make_lstm_dir(ParamStore<T>& store, const std::string& prefix, int64_t in_f,
                         int64_t hidden, Rng& rng) {
  LstmDir<T> d;
  d.w_ih = store.add(prefix + ".w_ih", init_uniform_fan_in<T>({in_f, 4 * hidden}, in_f, rng),
                     true);
  d.w_hh = store.add(prefix + ".w_hh",
                     init_uniform_fan_in<T>({hidden, 4 * hidden}, hidden, rng), true);
  Tensor<T> bias({4 * hidden});
  for (int64_t i = hidden; i < 2 * hidden; ++i) bias[i] = T(1);  // forget gate bias
  d.b = store.add(prefix + ".b", std::move(bias), false);
  return d;
}

namespace detail {

// Runs one direction over [S,N,F]; returns per-step hidden states in time
// order (index s corresponds to input step s regardless of direction).
template <typename T>
std::vector<Var<T>> lstm_direction(const Var<T>& x, const LstmDir<T>& dir, int64_t hidden,
                                   bool backward_dir) {
  const int64_t S = x->value.dim(0), N = x->value.dim(1), F = x->value.dim(2);
  require(dir.w_ih->value.dim(0) == F && dir.w_ih->value.dim(1) == 4 * hidden,
          "lstm: w_ih shape mismatch");
  auto xf = reshape(x, {S * N, F});
  auto gates_x = linear(xf, dir.w_ih, dir.b);  // [S*N x 4H]

  auto h = make_leaf(Tensor<T>::zeros({N, hidden}));
  auto c = make_leaf(Tensor<T>::zeros({N, hidden}));
  std::vector<Var<T>> out(static_cast<size_t>(S));
  for (int64_t step = 0; step < S; ++step) {
    const int64_t s = backward_dir ? S - 1 - step : step;
    auto g = add(slice_rows(gates_x, s * N, (s + 1) * N), matmul(h, dir.w_hh));
    auto i_g = sigmoid(slice_cols(g, 0, hidden));
    auto f_g = sigmoid(slice_cols(g, hidden, 2 * hidden));
    auto c_g = tanh_op(slice_cols(g, 2 * hidden, 3 * hidden));
    auto o_g = sigmoid(slice_cols(g, 3 * hidden, 4 * hidden));
    c = add(mul(f_g, c), mul(i_g, c_g));
    h = mul(o_g, tanh_op(c));
    out[size_t(s)] = h;
  }
  return out;
}

}  // namespace detail

// Bidirectional LSTM over seq-major input [S,N,F] -> [S,N,2H]; per step the
// features are [forward | backward].
template <typename T>
Var<T> blstm(const Var<T>& x, const LstmDir<T>& fw, const LstmDir<T>& bw, int64_t hidden,
             std::string name = {}) {
  require(x->value.rank() == 3, "blstm: input must be [S,N,F]");
  require(x->value.dim(0) >= 1, "blstm: empty sequence");
  auto hs_f = detail::lstm_direction(x, fw, hidden, false);
  auto hs_b = detail::lstm_direction(x, bw, hidden, true);
  std::vector<Var<T>> steps(hs_f.size());
  for (size_t s = 0; s < hs_f.size(); ++s) steps[s] = concat_cols<T>({hs_f[s], hs_b[s]});
  return stack_steps(steps, std::move(name));
}

}  // namespace aad

#endif  // AAD_LSTM_HPP
