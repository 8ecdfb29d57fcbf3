#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "seisbench/nn.hpp"

using namespace seisbench;

namespace {

template <typename T>
Tensor4<T> random_tensor(int n, int c, int h, int w, Rng& rng, double scale = 1.0) {
  Tensor4<T> t(n, c, h, w);
  for (auto& v : t.v) v = static_cast<T>(scale * rng.gaussian());
  return t;
}

// Naive quadruple-loop cross-correlation oracle.
template <typename T>
Tensor4<T> conv_oracle(const Tensor4<T>& x, const Tensor4<T>& w,
                       const std::vector<T>& b, int stride, int pad) {
  int oh = (x.h + 2 * pad - w.h) / stride + 1;
  int ow = (x.w + 2 * pad - w.w) / stride + 1;
  Tensor4<T> y(x.n, w.n, oh, ow);
  for (int n = 0; n < x.n; ++n)
    for (int o = 0; o < w.n; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T s = b[o];
          for (int i = 0; i < x.c; ++i)
            for (int ky = 0; ky < w.h; ++ky)
              for (int kx = 0; kx < w.w; ++kx) {
                int iy = oy * stride - pad + ky;
                int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                s += x.at(n, i, iy, ix) * w.at(o, i, ky, kx);
              }
          y.at(n, o, oy, ox) = s;
        }
  return y;
}

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.v[i]) - b.v[i]));
  return m;
}

// relative error = max|g - ghat| / (max|ghat| + 1e-12)
template <typename T>
double grad_rel_error(const std::vector<ParamRef<T>>& params,
                      const std::vector<std::vector<T>>& fd) {
  double max_diff = 0.0, max_fd = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].size; ++j) {
      max_diff = std::max(max_diff, std::abs(static_cast<double>(params[i].grad[j]) -
                                             static_cast<double>(fd[i][j])));
      max_fd = std::max(max_fd, std::abs(static_cast<double>(fd[i][j])));
    }
  return max_diff / (max_fd + 1e-12);
}

}  // namespace

TEST_CASE("conv2d identity kernel and scalar case") {
  nn::Conv2d<double> c(1, 1, 3, 1, 1);
  c.w.fill(0.0);
  c.w.at(0, 0, 1, 1) = 1.0;
  Rng rng(1);
  Tensor4<double> x = random_tensor<double>(1, 1, 3, 3, rng);
  Tensor4<double> y = c.forward(x, nullptr);
  CHECK(max_abs_diff(x, y) == doctest::Approx(0.0));

  nn::Conv2d<double> s(1, 1, 1, 1, 0);
  s.w.at(0, 0, 0, 0) = 2.5;
  Tensor4<double> xv(1, 1, 1, 1);
  xv.at(0, 0, 0, 0) = 3.0;
  CHECK(s.forward(xv, nullptr).at(0, 0, 0, 0) == doctest::Approx(7.5));
}

TEST_CASE("conv2d matches the quadruple-loop oracle on random shapes") {
  Rng rng(22);
  struct Case { int n, c, h, w, oc, k, stride, pad; };
  std::vector<Case> cases = {
      {1, 2, 5, 5, 3, 3, 1, 1}, {2, 1, 8, 8, 2, 3, 2, 1},
      {1, 3, 6, 7, 4, 3, 1, 0}, {2, 4, 8, 8, 2, 1, 1, 0},
      {1, 2, 7, 5, 3, 3, 2, 1}, {2, 2, 8, 6, 3, 3, 1, 1}};
  for (const auto& cs : cases) {
    nn::Conv2d<double> c(cs.c, cs.oc, cs.k, cs.stride, cs.pad);
    c.init(rng);
    for (auto& b : c.b) b = rng.gaussian();
    Tensor4<double> x = random_tensor<double>(cs.n, cs.c, cs.h, cs.w, rng);
    Tensor4<double> y = c.forward(x, nullptr);
    Tensor4<double> ref = conv_oracle(x, c.w, c.b, cs.stride, cs.pad);
    CHECK(max_abs_diff(y, ref) < 1e-6);
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  nn::Conv2d<float> c(2, 3, 3, 1, 1);
  Tensor4<float> x(1, 1, 8, 8);
  CHECK_THROWS_AS(c.forward(x, nullptr), ShapeError);
}

TEST_CASE("batchnorm normalizes, applies affine, and is batch-independent in eval") {
  Rng rng(5);
  nn::BatchNorm<double> bn(3);
  Tensor4<double> x = random_tensor<double>(4, 3, 5, 5, rng, 3.0);
  nn::BNCache<double> cache;
  Tensor4<double> y = bn.forward(x, RunMode::Train, &cache);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    std::size_t m = 4 * 5 * 5;
    for (int n = 0; n < 4; ++n)
      for (int ih = 0; ih < 5; ++ih)
        for (int iw = 0; iw < 5; ++iw) mean += y.at(n, c, ih, iw);
    mean /= m;
    for (int n = 0; n < 4; ++n)
      for (int ih = 0; ih < 5; ++ih)
        for (int iw = 0; iw < 5; ++iw) {
          double d = y.at(n, c, ih, iw) - mean;
          var += d * d;
        }
    var /= m;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }

  // scale=2, shift=3
  nn::BatchNorm<double> bn2(3);
  std::fill(bn2.gamma.begin(), bn2.gamma.end(), 2.0);
  std::fill(bn2.beta.begin(), bn2.beta.end(), 3.0);
  Tensor4<double> y2 = bn2.forward(x, RunMode::Train, nullptr);
  for (std::size_t i = 0; i < y.v.size(); ++i)
    CHECK(y2.v[i] == doctest::Approx(2.0 * y.v[i] + 3.0).epsilon(1e-9));

  // eval mode: deterministic, batch-size independent
  Tensor4<double> small(1, 3, 5, 5);
  for (std::size_t i = 0; i < small.v.size(); ++i) small.v[i] = x.v[i];
  Tensor4<double> e1 = bn.forward(small, RunMode::Eval, nullptr);
  Tensor4<double> big = x;
  Tensor4<double> e2 = bn.forward(big, RunMode::Eval, nullptr);
  for (std::size_t i = 0; i < small.v.size(); ++i)
    CHECK(e1.v[i] == doctest::Approx(e2.v[i]).epsilon(1e-12));

  Tensor4<double> degenerate(1, 3, 1, 1);
  CHECK_THROWS_AS(bn.forward(degenerate, RunMode::Train, nullptr), ShapeError);
}

TEST_CASE("relu, pool, linear basics") {
  Tensor4<double> x(1, 3, 1, 1);
  x.at(0, 0, 0, 0) = -1.0;
  x.at(0, 1, 0, 0) = 0.0;
  x.at(0, 2, 0, 0) = 2.0;
  Tensor4<double> y = nn::relu(x);
  CHECK(y.at(0, 0, 0, 0) == 0.0);
  CHECK(y.at(0, 1, 0, 0) == 0.0);
  CHECK(y.at(0, 2, 0, 0) == 2.0);

  Tensor4<double> c(2, 3, 4, 5);
  c.fill(2.75);
  Tensor4<double> p = nn::global_avg_pool(c);
  CHECK(p.h == 1);
  CHECK(p.w == 1);
  for (double v : p.v) CHECK(v == doctest::Approx(2.75));

  nn::Linear<double> lin(3, 3);
  for (int i = 0; i < 3; ++i) lin.w[i * 3 + i] = 1.0;
  Tensor4<double> out = lin.forward(p, nullptr);
  for (std::size_t i = 0; i < out.v.size(); ++i)
    CHECK(out.v[i] == doctest::Approx(p.v[i]));

  Tensor4<double> wrong(1, 4, 1, 1);
  CHECK_THROWS_AS(lin.forward(wrong, nullptr), ShapeError);
}

TEST_CASE("forward ops are shape-total over random valid shapes") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    int n = 1 + static_cast<int>(rng.below(3));
    int c = 1 + static_cast<int>(rng.below(4));
    int h = 1 + static_cast<int>(rng.below(9));
    int w = 1 + static_cast<int>(rng.below(9));
    Tensor4<float> x = random_tensor<float>(n, c, h, w, rng);
    Tensor4<float> r = nn::relu(x);
    CHECK(r.same_shape(x));
    Tensor4<float> p = nn::global_avg_pool(x);
    CHECK(p.n == n);
    CHECK(p.c == c);
    CHECK(p.h == 1);
    CHECK(p.w == 1);
    int out = 1 + static_cast<int>(rng.below(5));
    nn::Linear<float> lin(c, out);
    lin.init(rng);
    Tensor4<float> y = lin.forward(p, nullptr);
    CHECK(y.n == n);
    CHECK(y.c == out);
  }
}

TEST_CASE("softmax_ce values and stability") {
  auto r = nn::softmax_ce(0.0, 0.0, 1);
  CHECK(r.p_usable == doctest::Approx(0.5));
  CHECK(r.loss == doctest::Approx(std::log(2.0)));

  auto sat = nn::softmax_ce(-20.0, 20.0, 1);
  CHECK(sat.p_usable > 0.999999);
  CHECK(sat.loss < 1e-6);

  // random logits vs independent long-double evaluation
  Rng rng(77);
  for (int i = 0; i < 200; ++i) {
    double l0 = 10.0 * rng.gaussian(), l1 = 10.0 * rng.gaussian();
    int label = rng.below(2) ? 1 : 0;
    auto got = nn::softmax_ce(l0, l1, label);
    long double e0 = expl(static_cast<long double>(l0));
    long double e1 = expl(static_cast<long double>(l1));
    long double p0 = e0 / (e0 + e1);
    long double p1 = e1 / (e0 + e1);
    long double loss = -logl(label == 1 ? p1 : p0);
    CHECK(std::abs(static_cast<double>(p1) - got.p_usable) < 1e-6);
    CHECK(std::abs(static_cast<double>(loss) - got.loss) <
          1e-6 * std::max(1.0, std::abs(got.loss)));
    CHECK(got.p_usable >= 0.0);
    CHECK(got.p_usable <= 1.0);
  }
}

TEST_CASE("sigmoid_bce values and equivalence with softmax over (0, z)") {
  auto r = nn::sigmoid_bce(0.0, 1);
  CHECK(r.p_usable == doctest::Approx(0.5));
  CHECK(r.loss == doctest::Approx(std::log(2.0)));
  CHECK(nn::sigmoid_bce(30.0, 1).loss < 1e-12);

  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    double z = 15.0 * rng.gaussian();
    int label = rng.below(2) ? 1 : 0;
    auto a = nn::sigmoid_bce(z, label);
    auto b = nn::softmax_ce(0.0, z, label);
    CHECK(std::abs(a.p_usable - b.p_usable) < 1e-6);
    CHECK(std::abs(a.loss - b.loss) < 1e-6);
  }
}

TEST_CASE("sgd_step recurrence") {
  double theta = 1.0, grad = 2.0;
  SgdState<double> st;
  std::vector<ParamRef<double>> params = {{&theta, &grad, 1}};
  sgd_step(params, st, 0.1, 0.0);
  CHECK(theta == doctest::Approx(0.8));

  // g = 0 leaves params unchanged
  grad = 0.0;
  sgd_step(params, st, 0.1, 0.0);
  CHECK(theta == doctest::Approx(0.8));

  // two momentum steps match the hand-unrolled recurrence
  double th = 2.0, g = 0.5;
  SgdState<double> st2;
  std::vector<ParamRef<double>> p2 = {{&th, &g, 1}};
  sgd_step(p2, st2, 0.1, 0.9);  // v=0.5, th=2-0.05=1.95
  sgd_step(p2, st2, 0.1, 0.9);  // v=0.95, th=1.95-0.095=1.855
  CHECK(th == doctest::Approx(1.855).epsilon(1e-7));

  double bad = std::nan("");
  std::vector<ParamRef<double>> p3 = {{&th, &bad, 1}};
  CHECK_THROWS_AS(sgd_step(p3, st2, 0.1, 0.0), NumericError);
  CHECK_THROWS_AS(sgd_step(p2, st2, -0.1, 0.0), SpecError);
}

TEST_CASE("finite_diff_grad basics and Richardson consistency") {
  double theta = 3.0, grad = 0.0;
  std::vector<ParamRef<double>> params = {{&theta, &grad, 1}};
  auto fd = finite_diff_grad<double>([&] { return theta * theta; }, params, 1e-3);
  CHECK(fd[0][0] == doctest::Approx(6.0).epsilon(1e-6));

  auto zero = finite_diff_grad<double>([&] { return 42.0; }, params, 1e-3);
  CHECK(zero[0][0] == 0.0);

  // conv layer: eps and eps/2 agree within 1e-4
  Rng rng(9);
  nn::Conv2d<double> c(2, 2, 3, 1, 1);
  c.init(rng);
  Tensor4<double> x = random_tensor<double>(1, 2, 4, 4, rng);
  std::vector<ParamRef<double>> cp = {
      {c.w.v.data(), c.gw.v.data(), c.w.size()},
      {c.b.data(), c.gb.data(), c.b.size()}};
  auto loss = [&] {
    Tensor4<double> y = c.forward(x, nullptr);
    double s = 0.0;
    for (double v : y.v) s += v * v;
    return 0.5 * s;
  };
  auto fd1 = finite_diff_grad<double>(loss, cp, 1e-4);
  auto fd2 = finite_diff_grad<double>(loss, cp, 5e-5);
  for (std::size_t i = 0; i < fd1.size(); ++i)
    for (std::size_t j = 0; j < fd1[i].size(); ++j)
      CHECK(std::abs(fd1[i][j] - fd2[i][j]) < 1e-4);
}

TEST_CASE("single linear layer backward matches closed form") {
  // loss = 0.5 * sum(y^2), y = Wx + b -> dW = y x^T, db = y
  nn::Linear<double> lin(2, 2);
  lin.w = {1.0, 2.0, -1.0, 0.5};
  lin.b = {0.1, -0.2};
  Tensor4<double> x(1, 2, 1, 1);
  x.at(0, 0, 0, 0) = 0.7;
  x.at(0, 1, 0, 0) = -1.3;
  nn::LinearCache<double> cache;
  Tensor4<double> y = lin.forward(x, &cache);
  Tensor4<double> dy = y;  // d(0.5 y^2)/dy = y
  lin.backward(dy, cache);
  for (int o = 0; o < 2; ++o) {
    CHECK(lin.gb[o] == doctest::Approx(y.at(0, o, 0, 0)));
    for (int i = 0; i < 2; ++i)
      CHECK(lin.gw[o * 2 + i] ==
            doctest::Approx(y.at(0, o, 0, 0) * x.at(0, i, 0, 0)));
  }
}

TEST_CASE("per-layer backward matches finite differences") {
  Rng rng(101);
  // conv + bn + relu + pool + linear chained, double precision
  for (int trial = 0; trial < 5; ++trial) {
    nn::Conv2d<double> conv(2, 3, 3, 1, 1);
    conv.init(rng);
    nn::BatchNorm<double> bn(3);
    nn::Linear<double> lin(3, 2);
    lin.init(rng);
    Tensor4<double> x = random_tensor<double>(2, 2, 5, 5, rng);
    std::vector<int> labels = {1, 0};

    std::vector<ParamRef<double>> params = {
        {conv.w.v.data(), conv.gw.v.data(), conv.w.size()},
        {conv.b.data(), conv.gb.data(), conv.b.size()},
        {bn.gamma.data(), bn.ggamma.data(), bn.gamma.size()},
        {bn.beta.data(), bn.gbeta.data(), bn.beta.size()},
        {lin.w.data(), lin.gw.data(), lin.w.size()},
        {lin.b.data(), lin.gb.data(), lin.b.size()}};

    auto run = [&](bool record) {
      nn::ConvCache<double> cc;
      nn::BNCache<double> bc;
      nn::ReluCache<double> rc;
      nn::GapCache<double> gc;
      nn::LinearCache<double> lc;
      // keep running stats untouched so repeated evals are identical
      auto saved_mean = bn.run_mean;
      auto saved_var = bn.run_var;
      Tensor4<double> h = conv.forward(x, record ? &cc : nullptr);
      h = bn.forward(h, RunMode::Train, record ? &bc : nullptr);
      bn.run_mean = saved_mean;
      bn.run_var = saved_var;
      h = nn::relu(h, record ? &rc : nullptr);
      h = nn::global_avg_pool(h, record ? &gc : nullptr);
      h = lin.forward(h, record ? &lc : nullptr);
      auto head = nn::binary_head(h, labels);
      if (record) {
        Tensor4<double> d = lin.backward(head.dlogits, lc);
        d = nn::global_avg_pool_backward(d, gc);
        d = nn::relu_backward(d, rc);
        d = bn.backward(d, bc);
        conv.backward(d, cc);
      }
      return head.mean_loss;
    };

    conv.zero_grad();
    bn.zero_grad();
    lin.zero_grad();
    run(true);
    auto fd = finite_diff_grad<double>([&] { return run(false); }, params, 1e-5);
    CHECK(grad_rel_error(params, fd) < 1e-5);
  }
}
