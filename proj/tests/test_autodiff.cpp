#include <cmath>
#include <vector>

#include "aad/conv_block.hpp"
#include "aad/convnet.hpp"
#include "aad/gradcheck.hpp"
#include "aad/graph.hpp"
#include "aad/lstm.hpp"
#include "aad/nn.hpp"
#include "doctest.h"

using namespace aad;

namespace {

template <typename T>
Tensor<T> rand_tensor(Shape s, Rng& rng, double scale = 1.0) {
  return Tensor<T>::uniform(std::move(s), rng, T(-scale), T(scale));
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor<float> t({2, 3});
  CHECK(t.numel() == 6);
  t.at(1, 2) = 5.f;
  CHECK(t[5] == 5.f);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.f, 2.f}), std::invalid_argument);
}

TEST_CASE("relu examples") {
  auto x = make_leaf(Tensor<float>({3}, {-1.f, 0.f, 2.f}), true);
  auto y = relu(x);
  CHECK(y->value[0] == 0.f);
  CHECK(y->value[1] == 0.f);
  CHECK(y->value[2] == 2.f);

  backward(y);
  CHECK(x->grad[0] == 0.f);  // negative: blocked
  CHECK(x->grad[1] == 0.f);  // exactly zero: subgradient 0
  CHECK(x->grad[2] == 1.f);

  auto neg = relu(make_leaf(Tensor<float>({4}, {-3.f, -1.f, -0.5f, -2.f})));
  for (auto v : neg->value.data) CHECK(v == 0.f);
}

TEST_CASE("linear examples") {
  // W = identity, b = 0 -> output = input
  auto x = make_leaf(Tensor<float>({1, 2}, {3.f, -4.f}));
  auto wi = make_leaf(Tensor<float>({2, 2}, {1.f, 0.f, 0.f, 1.f}));
  auto b0 = make_leaf(Tensor<float>({2}));
  auto y = linear(x, wi, b0);
  CHECK(y->value[0] == 3.f);
  CHECK(y->value[1] == -4.f);

  // [1,2] * [[1,0],[0,3]] + [1,1] = [2,7]
  auto x2 = make_leaf(Tensor<float>({1, 2}, {1.f, 2.f}));
  auto w2 = make_leaf(Tensor<float>({2, 2}, {1.f, 0.f, 0.f, 3.f}));
  auto b2 = make_leaf(Tensor<float>({2}, {1.f, 1.f}));
  auto y2 = linear(x2, w2, b2);
  CHECK(y2->value[0] == doctest::Approx(2.f));
  CHECK(y2->value[1] == doctest::Approx(7.f));

  // W = 0 -> each row equals b
  auto x3 = make_leaf(Tensor<float>({3, 2}, {9.f, 9.f, 1.f, 1.f, 0.f, 0.f}));
  auto w3 = make_leaf(Tensor<float>({2, 2}));
  auto y3 = linear(x3, w3, b2);
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(y3->value.at(i, 0) == 1.f);
    CHECK(y3->value.at(i, 1) == 1.f);
  }

  CHECK_THROWS_AS(linear(x3, make_leaf(Tensor<float>({3, 2})), b2), std::invalid_argument);
}

TEST_CASE("conv2d shape law and identity") {
  Rng rng(7);
  // 1x1 kernel with unit weight reproduces the input
  auto x = make_leaf(rand_tensor<float>({1, 3, 4, 1}, rng));
  auto w = make_leaf(Tensor<float>({1, 1, 1, 1}, {1.f}));
  auto b = make_leaf(Tensor<float>({1}));
  auto y = conv2d(x, w, b, ConvGeom{});
  for (int64_t i = 0; i < x->value.numel(); ++i) CHECK(y->value[i] == x->value[i]);

  // EEG layer-1 parameters: H = 192, k = 24, p = 12 -> 193
  auto x1 = make_leaf(rand_tensor<float>({1, 192, 10, 1}, rng));
  auto w1 = make_leaf(rand_tensor<float>({24, 1, 1, 32}, rng));
  auto b1 = make_leaf(Tensor<float>({32}));
  ConvGeom g1;
  g1.kh = 24; g1.ph = 12;
  auto y1 = conv2d(x1, w1, b1, g1);
  CHECK(y1->value.dim(1) == 193);
  CHECK(y1->value.dim(2) == 10);

  // EEG layer-2 parameters: H = 96, k = 7, d = 2, p = 6 -> 96
  auto x2 = make_leaf(rand_tensor<float>({1, 96, 5, 2}, rng));
  auto w2 = make_leaf(rand_tensor<float>({7, 1, 2, 4}, rng));
  auto b2 = make_leaf(Tensor<float>({4}));
  ConvGeom g2;
  g2.kh = 7; g2.dh = 2; g2.ph = 6;
  CHECK(conv2d(x2, w2, b2, g2)->value.dim(1) == 96);

  // non-positive output extent
  ConvGeom bad;
  bad.kh = 9;
  CHECK_THROWS_AS(conv2d(make_leaf(rand_tensor<float>({1, 4, 4, 1}, rng)),
                         make_leaf(rand_tensor<float>({9, 1, 1, 2}, rng)),
                         make_leaf(Tensor<float>({2})), bad),
                  std::invalid_argument);
}

TEST_CASE("conv2d equals explicit zero-padded dense correlation") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const int64_t H = 5 + int64_t(rng.below(4)), W = 4 + int64_t(rng.below(5));
    const int64_t Ci = 1 + int64_t(rng.below(3)), Co = 1 + int64_t(rng.below(3));
    ConvGeom g;
    g.kh = 1 + int64_t(rng.below(3));
    g.kw = 1 + int64_t(rng.below(3));
    g.dh = 1 + int64_t(rng.below(2));
    g.dw = 1 + int64_t(rng.below(2));
    g.ph = int64_t(rng.below(3));
    g.pw = int64_t(rng.below(3));
    if (g.out_h(H) < 1 || g.out_w(W) < 1) continue;
    auto x = rand_tensor<double>({1, H, W, Ci}, rng);
    auto w = rand_tensor<double>({g.kh, g.kw, Ci, Co}, rng);
    auto b = rand_tensor<double>({Co}, rng);
    auto y = conv2d(make_leaf(x), make_leaf(w), make_leaf(b), g);

    // brute force: materialize the zero-padded input, slide without padding
    Tensor<double> xp({H + 2 * g.ph, W + 2 * g.pw, Ci});
    for (int64_t h = 0; h < H; ++h)
      for (int64_t ww = 0; ww < W; ++ww)
        for (int64_t c = 0; c < Ci; ++c) xp.at(h + g.ph, ww + g.pw, c) = x.at(0, h, ww, c);
    for (int64_t ho = 0; ho < g.out_h(H); ++ho)
      for (int64_t wo = 0; wo < g.out_w(W); ++wo)
        for (int64_t co = 0; co < Co; ++co) {
          double acc = b[co];
          for (int64_t ih = 0; ih < g.kh; ++ih)
            for (int64_t iw = 0; iw < g.kw; ++iw)
              for (int64_t ci = 0; ci < Ci; ++ci)
                acc += xp.at(ho + ih * g.dh, wo + iw * g.dw, ci) * w.at(ih, iw, ci, co);
          CHECK(y->value.at(0, ho, wo, co) == doctest::Approx(acc).epsilon(1e-12));
        }
  }
}

TEST_CASE("maxpool examples and gradient routing") {
  // [[1,2],[3,4]] pooled (2,2) -> [[4]]
  auto x = make_leaf(Tensor<float>({1, 2, 2, 1}, {1.f, 2.f, 3.f, 4.f}), true);
  auto y = maxpool2d(x, pool_windows_fixed(2, 2), pool_windows_fixed(2, 2));
  CHECK(y->value.numel() == 1);
  CHECK(y->value[0] == 4.f);
  backward(y);
  CHECK(x->grad[0] == 0.f);
  CHECK(x->grad[3] == 1.f);

  // length 193, pool 2 -> 96
  CHECK(pool_windows_fixed(193, 2).size() == 96);

  // pool (1,1) is the identity
  Rng rng(3);
  auto x2 = make_leaf(rand_tensor<float>({2, 3, 4, 2}, rng));
  auto y2 = maxpool2d(x2, pool_windows_fixed(3, 1), pool_windows_fixed(4, 1));
  for (int64_t i = 0; i < x2->value.numel(); ++i) CHECK(y2->value[i] == x2->value[i]);

  // ties route to the first (lowest flat index) maximum
  auto xt = make_leaf(Tensor<float>({1, 2, 2, 1}, {7.f, 7.f, 7.f, 7.f}), true);
  auto yt = maxpool2d(xt, pool_windows_fixed(2, 2), pool_windows_fixed(2, 2));
  backward(yt);
  CHECK(xt->grad[0] == 1.f);
  CHECK(xt->grad[1] == 0.f);
  CHECK(xt->grad[2] == 0.f);
  CHECK(xt->grad[3] == 0.f);
}

TEST_CASE("adaptive pool windows") {
  auto w = pool_windows_adaptive(80, 48);
  CHECK(w.size() == 48);
  CHECK(w.front().first == 0);
  CHECK(w.back().second == 80);
  for (auto& [a, b] : w) CHECK(a < b);
  // upsampling case duplicates elements but stays well-formed
  auto u = pool_windows_adaptive(32, 48);
  CHECK(u.size() == 48);
  for (auto& [a, b] : u) {
    CHECK(a < b);
    CHECK(b <= 32);
  }
}

TEST_CASE("batchnorm examples") {
  Rng rng(5);
  // batch with channel mean 5, var 4 -> normalized to mean 0, var 1
  Tensor<float> xv({8, 2, 2, 1});
  for (int64_t i = 0; i < xv.numel(); ++i) xv[i] = 5.f + 2.f * float(rng.normal());
  double mean = 0, var = 0;
  for (auto v : xv.data) mean += v;
  mean /= double(xv.numel());
  for (auto v : xv.data) var += (v - mean) * (v - mean);
  var /= double(xv.numel());
  auto x = make_leaf(xv);
  auto gamma = make_leaf(Tensor<float>({1}, {1.f}));
  auto beta = make_leaf(Tensor<float>({1}));
  Tensor<float> rm({1}), rv = Tensor<float>::full({1}, 1.f);
  auto y = batchnorm(x, gamma, beta, &rm, &rv, true);
  double om = 0, ov = 0;
  for (auto v : y->value.data) om += v;
  om /= double(y->value.numel());
  for (auto v : y->value.data) ov += (v - om) * (v - om);
  ov /= double(y->value.numel());
  CHECK(std::abs(om) < 1e-5);
  CHECK(ov == doctest::Approx(1.0).epsilon(1e-3));

  // gamma=2, beta=1 on normalized data -> mean 1, var 4
  auto g2 = make_leaf(Tensor<float>({1}, {2.f}));
  auto b1 = make_leaf(Tensor<float>({1}, {1.f}));
  auto y2 = batchnorm(x, g2, b1, &rm, &rv, true);
  om = ov = 0;
  for (auto v : y2->value.data) om += v;
  om /= double(y2->value.numel());
  for (auto v : y2->value.data) ov += (v - om) * (v - om);
  ov /= double(y2->value.numel());
  CHECK(om == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(ov == doctest::Approx(4.0).epsilon(1e-2));

  // eval mode with running mean 3, running var 1, constant input 3 -> beta
  Tensor<float> rm3 = Tensor<float>::full({1}, 3.f), rv1 = Tensor<float>::full({1}, 1.f);
  auto x3 = make_leaf(Tensor<float>::full({1, 2, 2, 1}, 3.f));
  auto y3 = batchnorm(x3, g2, b1, &rm3, &rv1, false);
  for (auto v : y3->value.data) CHECK(v == doctest::Approx(1.f).epsilon(1e-4));

  // batch of 1 in train mode is rejected
  auto x1 = make_leaf(Tensor<float>({1, 2, 2, 1}));
  CHECK_THROWS_AS(batchnorm(x1, gamma, beta, &rm, &rv, true), std::invalid_argument);
}

TEST_CASE("dropout examples") {
  Rng rng(17);
  auto x = make_leaf(Tensor<float>::full({100}, 1.f));
  auto y0 = dropout(x, 0.0, true, rng);
  for (auto v : y0->value.data) CHECK(v == 1.f);
  auto ye = dropout(x, 0.9, false, rng);
  for (auto v : ye->value.data) CHECK(v == 1.f);
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), std::invalid_argument);
  CHECK_THROWS_AS(dropout(x, -0.1, true, rng), std::invalid_argument);

  // p = 0.25 over 1e6 ones keeps the mean within 1%
  auto big = make_leaf(Tensor<float>::full({1000000}, 1.f));
  auto yb = dropout(big, 0.25, true, rng);
  double mean = 0;
  for (auto v : yb->value.data) mean += v;
  mean /= 1e6;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("softmax cross-entropy examples") {
  // logits [0,0], label 0 -> p = [0.5, 0.5], loss = ln 2
  auto l1 = make_leaf(Tensor<float>({1, 2}), true);
  auto r1 = softmax_crossentropy(l1, {0});
  CHECK(r1.probabilities[0] == doctest::Approx(0.5));
  CHECK(r1.probabilities[1] == doctest::Approx(0.5));
  CHECK(r1.loss->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-5));

  // shift invariance
  auto l2 = make_leaf(Tensor<float>({1, 2}, {1.f, 0.f}));
  auto l2s = make_leaf(Tensor<float>({1, 2}, {1.f + 100.f, 0.f + 100.f}));
  auto r2 = softmax_crossentropy(l2, {0});
  auto r2s = softmax_crossentropy(l2s, {0});
  CHECK(r2.probabilities[0] == doctest::Approx(r2s.probabilities[0]).epsilon(1e-6));
  CHECK(r2.loss->value[0] == doctest::Approx(r2s.loss->value[0]).epsilon(1e-6));

  // logits [1,0], label 0 -> p ~ [0.7311, 0.2689], loss ~ 0.3133
  CHECK(r2.probabilities[0] == doctest::Approx(0.731058).epsilon(1e-4));
  CHECK(r2.probabilities[1] == doctest::Approx(0.268941).epsilon(1e-4));
  CHECK(r2.loss->value[0] == doctest::Approx(0.313262).epsilon(1e-4));

  // rows sum to 1 and argmax is preserved
  Rng rng(23);
  auto lr = make_leaf(rand_tensor<float>({64, 2}, rng, 5.0));
  auto rr = softmax_crossentropy(lr, std::vector<int>(64, 1));
  for (int64_t i = 0; i < 64; ++i) {
    const double sum = rr.probabilities.at(i, 0) + rr.probabilities.at(i, 1);
    CHECK(std::abs(sum - 1.0) < 1e-9);
    const bool logit_argmax = lr->value.at(i, 1) > lr->value.at(i, 0);
    const bool prob_argmax = rr.probabilities.at(i, 1) > rr.probabilities.at(i, 0);
    CHECK(logit_argmax == prob_argmax);
  }
}

TEST_CASE("adam examples") {
  // zero gradient leaves the parameter unchanged
  {
    ParamStore<double> store;
    auto w = store.add("w", Tensor<double>({1}, {1.0}), true);
    Adam<double> opt(store, 5e-4);
    w->grad = Tensor<double>({1}, {0.0});
    opt.step();
    CHECK(w->value[0] == 1.0);
  }
  // first-step magnitude is about lr with the sign of the gradient
  {
    ParamStore<double> store;
    auto w = store.add("w", Tensor<double>({1}, {1.0}), true);
    Adam<double> opt(store, 5e-4);
    w->grad = Tensor<double>({1}, {4.0});
    opt.step();
    CHECK(w->value[0] == doctest::Approx(1.0 - 5e-4).epsilon(1e-7));
  }
  // two steps with constant gradient match the hand recurrence
  {
    ParamStore<double> store;
    auto w = store.add("w", Tensor<double>({1}, {1.0}), true);
    Adam<double> opt(store, 5e-4);
    double m = 0, v = 0, wref = 1.0;
    const double g = 4.0, lr = 5e-4, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int t = 1; t <= 2; ++t) {
      w->grad = Tensor<double>({1}, {g});
      opt.step();
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mh = m / (1 - std::pow(b1, t));
      const double vh = v / (1 - std::pow(b2, t));
      wref -= lr * mh / (std::sqrt(vh) + eps);
      CHECK(w->value[0] == doctest::Approx(wref).epsilon(1e-10));
    }
  }
}

TEST_CASE("blstm examples") {
  // zero input, zero parameters -> zero output
  {
    ParamStore<double> store;
    Rng rng(1);
    auto fw = make_lstm_dir<double>(store, "fw", 4, 3, rng);
    auto bw = make_lstm_dir<double>(store, "bw", 4, 3, rng);
    for (auto& p : store.params()) p.var->value.fill(0.0);
    auto x = make_leaf(Tensor<double>::zeros({3, 2, 4}));
    auto y = blstm(x, fw, bw, 3);
    for (auto v : y->value.data) CHECK(v == 0.0);
  }
  // T=48, F=64, H=32 -> output 48 x 2H
  {
    ParamStore<float> store;
    Rng rng(2);
    auto fw = make_lstm_dir<float>(store, "fw", 64, 32, rng);
    auto bw = make_lstm_dir<float>(store, "bw", 64, 32, rng);
    auto x = make_leaf(rand_tensor<float>({48, 1, 64}, rng));
    auto y = blstm(x, fw, bw, 32);
    CHECK(y->value.dim(0) == 48);
    CHECK(y->value.dim(1) == 1);
    CHECK(y->value.dim(2) == 64);
  }
  // backward half on x equals reversed forward half of the mirrored net on
  // reversed x
  {
    ParamStore<double> store;
    Rng rng(9);
    const int64_t S = 6, N = 2, F = 3, H = 4;
    auto dir_a = make_lstm_dir<double>(store, "a", F, H, rng);
    auto dir_b = make_lstm_dir<double>(store, "b", F, H, rng);
    auto xv = rand_tensor<double>({S, N, F}, rng);
    Tensor<double> xr(xv.shape);
    for (int64_t s = 0; s < S; ++s)
      std::memcpy(xr.ptr() + (S - 1 - s) * N * F, xv.ptr() + s * N * F,
                  size_t(N * F) * sizeof(double));
    auto y1 = blstm(make_leaf(xv), dir_a, dir_b, H);
    auto y2 = blstm(make_leaf(xr), dir_b, dir_a, H);
    for (int64_t s = 0; s < S; ++s)
      for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < H; ++h) {
          const double fwd_1 = y1->value.at(s, n, h);                 // dir_a forward on x
          const double bwd_2 = y2->value.at(S - 1 - s, n, H + h);     // dir_a backward on rev x
          CHECK(fwd_1 == doctest::Approx(bwd_2).epsilon(1e-12));
        }
  }
}

TEST_CASE("non-finite outputs abort with the layer name") {
  auto x = make_leaf(Tensor<float>({2}, {1e38f, 1e38f}), true);
  CHECK_THROWS_AS(mul(x, x, "blowup"), NonFiniteError);
  try {
    mul(x, x, "blowup");
  } catch (const NonFiniteError& e) {
    CHECK(e.layer() == "blowup");
  }
}

// --- finite difference checks ------------------------------------------------

TEST_CASE("gradcheck: linear") {
  double worst = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 1);
    auto x = make_leaf(rand_tensor<double>({3, 4}, rng), true);
    auto w = make_leaf(rand_tensor<double>({4, 5}, rng), true);
    auto b = make_leaf(rand_tensor<double>({5}, rng), true);
    auto build = [&]() {
      auto y = linear(x, w, b);
      auto y2 = mul(y, y);
      Tensor<double> ones = Tensor<double>::full({3, 1}, 1.0);
      auto s = matmul(y2, make_leaf(Tensor<double>::full({5, 1}, 1.0)));
      auto s2 = matmul(reshape(s, {1, 3}), make_leaf(Tensor<double>::full({3, 1}, 1.0)));
      return reshape(s2, {1});
    };
    worst = std::max(worst, finite_diff_max_rel_error({x, w, b}, build));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("gradcheck: elementwise and softmax") {
  double worst = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 100);
    auto x = make_leaf(rand_tensor<double>({4, 2}, rng, 2.0), true);
    auto build = [&]() {
      auto h = tanh_op(sigmoid(x));
      return softmax_crossentropy(h, {0, 1, 1, 0}).loss;
    };
    worst = std::max(worst, finite_diff_max_rel_error({x}, build));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("gradcheck: conv2d with dilation") {
  double worst = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 200);
    auto x = make_leaf(rand_tensor<double>({2, 7, 6, 2}, rng), true);
    auto w = make_leaf(rand_tensor<double>({3, 2, 2, 3}, rng), true);
    auto b = make_leaf(rand_tensor<double>({3}, rng), true);
    ConvGeom g;
    g.kh = 3; g.kw = 2; g.dh = 2; g.dw = 2; g.ph = 2; g.pw = 1;
    auto build = [&]() {
      auto y = conv2d(x, w, b, g);
      auto y2 = mul(y, y);
      auto flat = reshape(y2, {1, y2->value.numel()});
      auto s = matmul(flat, make_leaf(Tensor<double>::full({y2->value.numel(), 1}, 1.0)));
      return reshape(s, {1});
    };
    worst = std::max(worst, finite_diff_max_rel_error({x, w, b}, build));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradcheck: maxpool + batchnorm") {
  double worst = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 300);
    auto x = make_leaf(rand_tensor<double>({3, 4, 4, 2}, rng), true);
    auto gamma = make_leaf(rand_tensor<double>({2}, rng, 0.5), true);
    auto beta = make_leaf(rand_tensor<double>({2}, rng, 0.5), true);
    gamma->value[0] += 1.0;
    gamma->value[1] += 1.0;
    Tensor<double> rm({2}), rv = Tensor<double>::full({2}, 1.0);
    auto build = [&]() {
      auto p = maxpool2d(x, pool_windows_fixed(4, 2), pool_windows_fixed(4, 2));
      auto y = batchnorm(p, gamma, beta, &rm, &rv, true);
      auto y2 = mul(y, y);
      auto flat = reshape(y2, {1, y2->value.numel()});
      auto s = matmul(flat, make_leaf(Tensor<double>::full({y2->value.numel(), 1}, 1.0)));
      return reshape(s, {1});
    };
    worst = std::max(worst, finite_diff_max_rel_error({x, gamma, beta}, build));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradcheck: dropout with a fixed mask") {
  double worst = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 400);
    auto x = make_leaf(rand_tensor<double>({6, 5}, rng), true);
    auto build = [&]() {
      Rng mask_rng(seed + 4000);  // same mask on every rebuild
      auto y = dropout(x, 0.3, true, mask_rng);
      auto y2 = mul(y, y);
      auto flat = reshape(y2, {1, y2->value.numel()});
      auto s = matmul(flat, make_leaf(Tensor<double>::full({y2->value.numel(), 1}, 1.0)));
      return reshape(s, {1});
    };
    worst = std::max(worst, finite_diff_max_rel_error({x}, build));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("gradcheck: blstm over T=5") {
  double worst = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore<double> store;
    Rng rng(seed + 500);
    const int64_t S = 5, N = 2, F = 3, H = 3;
    auto fw = make_lstm_dir<double>(store, "fw", F, H, rng);
    auto bw = make_lstm_dir<double>(store, "bw", F, H, rng);
    auto x = make_leaf(rand_tensor<double>({S, N, F}, rng), true);
    auto build = [&]() {
      auto y = blstm(x, fw, bw, H);
      auto y2 = mul(y, y);
      auto flat = reshape(y2, {1, y2->value.numel()});
      auto s = matmul(flat, make_leaf(Tensor<double>::full({y2->value.numel(), 1}, 1.0)));
      return reshape(s, {1});
    };
    std::vector<Var<double>> params{x};
    for (auto& p : store.params()) params.push_back(p.var);
    worst = std::max(worst, finite_diff_max_rel_error(params, build));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradcheck: fused conv block (generic path)") {
  double worst = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 600);
    auto x = make_leaf(rand_tensor<double>({2, 6, 5, 2}, rng), true);
    ConvBlockCfg cfg;
    cfg.geom.kh = 2; cfg.geom.kw = 2; cfg.geom.dh = 2; cfg.geom.dw = 1;
    cfg.geom.ph = 1; cfg.geom.pw = 1;
    const int64_t Ho = cfg.geom.out_h(6), Wo = cfg.geom.out_w(5);
    cfg.win_h = pool_windows_fixed(Ho, 2);
    cfg.win_w = pool_windows_fixed(Wo, 2);
    cfg.p_drop = 0.25;
    ConvBlockParams<double> prm;
    prm.w = make_leaf(rand_tensor<double>({2, 2, 2, 3}, rng), true);
    prm.b = make_leaf(rand_tensor<double>({3}, rng), true);
    prm.gamma = make_leaf(Tensor<double>::full({3}, 1.0), true);
    prm.beta = make_leaf(rand_tensor<double>({3}, rng, 0.2), true);
    BnState<double> bn(3);
    prm.bn = &bn;
    auto build = [&]() {
      Rng drop_rng(seed + 6000);
      auto y = conv_block(x, prm, cfg, true, drop_rng);
      auto y2 = mul(y, y);
      auto flat = reshape(y2, {1, y2->value.numel()});
      auto s = matmul(flat, make_leaf(Tensor<double>::full({y2->value.numel(), 1}, 1.0)));
      return reshape(s, {1});
    };
    worst = std::max(worst,
                     finite_diff_max_rel_error({x, prm.w, prm.b, prm.gamma, prm.beta}, build));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("conv block matches the primitive composition (fast float path)") {
  // Ci = Co = 32 engages the vectorized kernels. Inputs are quantized to
  // 1/16 so both conv paths produce bit-identical sums and therefore agree
  // on every pool argmax; otherwise near-ties reroute gradients legitimately.
  Rng rng(77);
  const int64_t N = 3, H = 9, W = 11, Ci = 32, Co = 32;
  ConvBlockCfg cfg;
  cfg.geom.kh = 3; cfg.geom.kw = 2; cfg.geom.dh = 2; cfg.geom.dw = 3;
  cfg.geom.ph = 2; cfg.geom.pw = 4;
  const int64_t Ho = cfg.geom.out_h(H), Wo = cfg.geom.out_w(W);
  cfg.win_h = pool_windows_adaptive(Ho, 5);
  cfg.win_w = pool_windows_fixed(Wo, 3);
  cfg.p_drop = 0.25;

  auto quant = [](Tensor<float>& t) {
    for (auto& v : t.data) v = std::round(v * 16.f) / 16.f;
  };
  auto xv = rand_tensor<float>({N, H, W, Ci}, rng);
  auto wv = rand_tensor<float>({cfg.geom.kh, cfg.geom.kw, Ci, Co}, rng, 0.3);
  auto bv = rand_tensor<float>({Co}, rng, 0.3);
  quant(xv);
  quant(wv);
  quant(bv);
  auto gv = rand_tensor<float>({Co}, rng, 0.2);
  for (auto& v : gv.data) v += 1.f;
  auto betav = rand_tensor<float>({Co}, rng, 0.2);

  // fused
  auto xf = make_leaf(xv, true);
  ConvBlockParams<float> prm{make_leaf(wv, true), make_leaf(bv, true), make_leaf(gv, true),
                             make_leaf(betav, true), nullptr};
  BnState<float> bn_f(Co);
  prm.bn = &bn_f;
  Rng drop_f(123);
  auto yf = conv_block(xf, prm, cfg, true, drop_f, "fused");
  backward(yf);

  // primitive chain
  auto xp = make_leaf(xv, true);
  auto wp = make_leaf(wv, true);
  auto bp = make_leaf(bv, true);
  auto gp = make_leaf(gv, true);
  auto betap = make_leaf(betav, true);
  Tensor<float> rm({Co}), rv2 = Tensor<float>::full({Co}, 1.f);
  Rng drop_p(123);
  auto y1 = conv2d(xp, wp, bp, cfg.geom);
  auto y2 = maxpool2d(y1, cfg.win_h, cfg.win_w);
  auto y3 = batchnorm(y2, gp, betap, &rm, &rv2, true);
  auto y4 = dropout(y3, cfg.p_drop, true, drop_p);
  auto y5 = relu(y4);
  backward(y5);

  REQUIRE(yf->value.shape == y5->value.shape);
  for (int64_t i = 0; i < yf->value.numel(); ++i)
    CHECK(yf->value[i] == doctest::Approx(y5->value[i]).epsilon(2e-3));
  // bn running stats agree
  for (int64_t c = 0; c < Co; ++c) {
    CHECK(bn_f.mean[c] == doctest::Approx(rm[c]).epsilon(2e-3));
    CHECK(bn_f.var[c] == doctest::Approx(rv2[c]).epsilon(2e-3));
  }
  // gradients agree; the floor covers the conv bias, whose gradient through
  // train-mode batchnorm is identically zero up to float noise
  auto close = [&](const Tensor<float>& a, const Tensor<float>& b) {
    REQUIRE(!a.empty());
    REQUIRE(!b.empty());
    double scale = 1e-2;
    for (int64_t i = 0; i < a.numel(); ++i) scale = std::max<double>(scale, std::abs(b[i]));
    for (int64_t i = 0; i < a.numel(); ++i)
      CHECK(std::abs(a[i] - b[i]) / scale < 2e-3);
  };
  close(xf->grad, xp->grad);
  close(prm.w->grad, wp->grad);
  close(prm.b->grad, bp->grad);
  close(prm.gamma->grad, gp->grad);
  close(prm.beta->grad, betap->grad);
}

TEST_CASE("conv block matches primitives with single input channel") {
  Rng rng(78);
  const int64_t N = 2, H = 12, W = 7, Ci = 1, Co = 32;
  ConvBlockCfg cfg;
  cfg.geom.kh = 5; cfg.geom.ph = 2;
  const int64_t Ho = cfg.geom.out_h(H), Wo = cfg.geom.out_w(W);
  cfg.win_h = pool_windows_fixed(Ho, 2);
  cfg.win_w = pool_windows_fixed(Wo, 1);
  cfg.p_drop = 0.0;

  auto xv = rand_tensor<float>({N, H, W, Ci}, rng);
  auto wv = rand_tensor<float>({5, 1, Ci, Co}, rng, 0.4);
  auto bv = rand_tensor<float>({Co}, rng, 0.2);
  auto gv = Tensor<float>::full({Co}, 1.f);
  auto betav = Tensor<float>::zeros({Co});

  auto xf = make_leaf(xv, true);
  ConvBlockParams<float> prm{make_leaf(wv, true), make_leaf(bv, true), make_leaf(gv, true),
                             make_leaf(betav, true), nullptr};
  BnState<float> bn_f(Co);
  prm.bn = &bn_f;
  Rng r1(5);
  auto yf = conv_block(xf, prm, cfg, true, r1);
  backward(yf);

  auto xp = make_leaf(xv, true);
  auto wp = make_leaf(wv, true);
  auto bp = make_leaf(bv, true);
  auto gp = make_leaf(gv, true);
  auto betap = make_leaf(betav, true);
  Tensor<float> rm({Co}), rv2 = Tensor<float>::full({Co}, 1.f);
  Rng r2(5);
  auto y5 = relu(dropout(
      batchnorm(maxpool2d(conv2d(xp, wp, bp, cfg.geom), cfg.win_h, cfg.win_w), gp, betap,
                &rm, &rv2, true),
      0.0, true, r2));
  backward(y5);

  for (int64_t i = 0; i < yf->value.numel(); ++i)
    CHECK(yf->value[i] == doctest::Approx(y5->value[i]).epsilon(1e-3));
  for (int64_t i = 0; i < wp->grad.numel(); ++i)
    CHECK(prm.w->grad[i] == doctest::Approx(wp->grad[i]).epsilon(2e-2).scale(1.0));
}

TEST_CASE("gemm kernels match Eigen on fast-path shapes") {
  Rng rng(99);
  for (int trial = 0; trial < 4; ++trial) {
    const int64_t M = 50 + int64_t(rng.below(100));
    std::vector<float> a(size_t(M * 32)), b(32 * 32), c1(size_t(M * 32), 0.f),
        c2(size_t(M * 32), 0.f);
    for (auto& v : a) v = float(rng.normal());
    for (auto& v : b) v = float(rng.normal());
    gemm<float>(true, M, 32, 32, a.data(), 32, b.data(), 32, c1.data(), 32);
    for (int64_t i = 0; i < M; ++i)
      for (int64_t j = 0; j < 32; ++j) {
        double acc = 0;
        for (int64_t k = 0; k < 32; ++k) acc += double(a[size_t(i * 32 + k)]) * b[size_t(k * 32 + j)];
        c2[size_t(i * 32 + j)] = float(acc);
      }
    for (size_t i = 0; i < c1.size(); ++i)
      CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-4).scale(1.0));

    std::vector<float> w1(32 * 32, 0.f), w2(32 * 32, 0.f);
    gemm_at_b_acc<float>(M, 32, 32, a.data(), 32, c1.data(), 32, w1.data(), 32);
    for (int64_t k = 0; k < 32; ++k)
      for (int64_t j = 0; j < 32; ++j) {
        double acc = 0;
        for (int64_t i = 0; i < M; ++i)
          acc += double(a[size_t(i * 32 + k)]) * double(c1[size_t(i * 32 + j)]);
        w2[size_t(k * 32 + j)] = float(acc);
      }
    for (size_t i = 0; i < w1.size(); ++i)
      CHECK(w1[i] == doctest::Approx(w2[i]).epsilon(2e-3).scale(1.0));
  }
}
