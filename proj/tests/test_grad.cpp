#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "piars/adam.hpp"
#include "piars/kernels.hpp"
#include "piars/rng.hpp"
#include "piars/tape.hpp"

using namespace piars;
using grad::Tape;
using grad::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& e : t.v) e = rng.uniform(lo, hi);
  return t;
}

// Sliding-window oracle: same summation order as the contract
// (ci, ky, kx, bias last) so results are expected to be bitwise equal.
Tensor conv2d_oracle(const Tensor& img, const Tensor& ker, const Tensor& bias) {
  const int ci_n = img.shape[0], h = img.shape[1], w = img.shape[2];
  const int co_n = ker.shape[0];
  Tensor out({co_n, h, w});
  for (int co = 0; co < co_n; ++co)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int ci = 0; ci < ci_n; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = y + ky - 1, xx = x + kx - 1;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              acc += img.at(ci, yy, xx) * ker.v[((std::size_t(co) * ci_n + ci) * 3 + ky) * 3 + kx];
            }
        out.at(co, y, x) = acc + bias.at(co);
      }
  return out;
}

// Central finite differences on a scalar-valued function of one leaf.
template <typename LossFn>
void check_gradient(Tensor& param, LossFn loss_of, double h = 1e-5, double tol = 1e-4) {
  Tape tape;
  Tape::Id p = tape.leaf(param);
  Tape::Id loss = loss_of(tape, p);
  tape.backward(loss);
  const Tensor& g = tape.grad(p);
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double save = param.v[i];
    param.v[i] = save + h;
    Tape tp;
    double fp = tp.val(loss_of(tp, tp.leaf(param))).v[0];
    param.v[i] = save - h;
    Tape tm;
    double fm = tm.val(loss_of(tm, tm.leaf(param))).v[0];
    param.v[i] = save;
    const double fd = (fp - fm) / (2.0 * h);
    const double rel = std::abs(g.v[i] - fd) / std::max(std::abs(fd), 1e-6);
    CHECK(rel < tol);
  }
}

}  // namespace

TEST_CASE("matmul identity, hand example, annihilator") {
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(7);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor out;
  grad::kernels::matmul(eye, a, out);
  CHECK(out.v == a.v);

  Tensor m({2, 2}, {1, 2, 3, 4});
  Tensor ones({2, 1}, {1, 1});
  grad::kernels::matmul(m, ones, out);
  CHECK(out.v == std::vector<double>{3, 7});

  Tensor zero({3, 3});
  grad::kernels::matmul(zero, a, out);
  for (double e : out.v) CHECK(e == 0.0);
}

TEST_CASE("matmul shape mismatch throws") {
  Tensor a({2, 3}), b({2, 2});
  Tensor out;
  CHECK_THROWS_AS(grad::kernels::matmul(a, b, out), grad::shape_error);
}

TEST_CASE("conv2d hand cases") {
  // all-ones kernel on constant-1 image: 9 at interior pixels
  Tensor img = Tensor::full({1, 5, 6}, 1.0);
  Tensor ker = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor bias({1});
  Tensor out;
  grad::kernels::conv2d(img, ker, bias, out);
  for (int y = 1; y < 4; ++y)
    for (int x = 1; x < 5; ++x) CHECK(out.at(0, y, x) == 9.0);
  CHECK(out.at(0, 0, 0) == 4.0);  // corner sees 2x2 window

  // delta kernel is the identity per channel
  Rng rng(3);
  Tensor img2 = random_tensor({2, 4, 4}, rng);
  Tensor delta({2, 2, 3, 3});
  delta.v[(0 * 2 + 0) * 9 + 4] = 1.0;  // center tap, matching channel
  delta.v[(1 * 2 + 1) * 9 + 4] = 1.0;
  Tensor bias2({2});
  grad::kernels::conv2d(img2, delta, bias2, out);
  CHECK(out.v == img2.v);

  // zero kernel, bias b: constant-b output
  Tensor zk({2, 2, 3, 3});
  Tensor b2({2}, {0.5, -1.5});
  grad::kernels::conv2d(img2, zk, b2, out);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(out.at(0, y, x) == 0.5);
      CHECK(out.at(1, y, x) == -1.5);
    }
}

TEST_CASE("conv2d matches brute-force oracle bit-for-bit on 8-channel 24x32 input") {
  Rng rng(11);
  Tensor img = random_tensor({8, 24, 32}, rng);
  Tensor ker = random_tensor({8, 8, 3, 3}, rng);
  Tensor bias = random_tensor({8}, rng);
  Tensor out;
  grad::kernels::conv2d(img, ker, bias, out);
  Tensor expect = conv2d_oracle(img, ker, bias);
  REQUIRE(out.numel() == expect.numel());
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.v[i] == expect.v[i]);
}

TEST_CASE("conv2d channel mismatch throws") {
  Tensor img({2, 4, 4});
  Tensor ker({1, 3, 3, 3});
  Tensor bias({1});
  Tensor out;
  CHECK_THROWS_AS(grad::kernels::conv2d(img, ker, bias, out), grad::shape_error);
}

TEST_CASE("elementwise relu and tanh") {
  Tape tape;
  Tape::Id x = tape.leaf(Tensor::vec({-2.0, 0.0, 3.0}));
  const Tensor& r = tape.val(tape.relu(x));
  CHECK(r.v == std::vector<double>{0.0, 0.0, 3.0});
  const Tensor& t = tape.val(tape.tanh(x));
  CHECK(t.v[1] == 0.0);
  CHECK(t.v[0] == doctest::Approx(std::tanh(-2.0)));
}

TEST_CASE("tanh saturates but never reaches +-1 for |x| < 19") {
  for (double x = 0.5; x < 19.0; x += 0.5) {
    CHECK(std::tanh(x) < 1.0);
    CHECK(std::tanh(-x) > -1.0);
    CHECK(std::tanh(x) > 0.99 * (1.0 - 2.0 * std::exp(-2.0 * x)));  // reference approximation
  }
}

TEST_CASE("l2_normalize") {
  double y[2];
  bool clamped = grad::kernels::l2_normalize((const double[]){3.0, 4.0}, 2, y);
  CHECK(!clamped);
  CHECK(y[0] == doctest::Approx(0.6));
  CHECK(y[1] == doctest::Approx(0.8));

  double unit[3] = {0.0, 1.0, 0.0};
  double out3[3];
  CHECK(!grad::kernels::l2_normalize(unit, 3, out3));
  CHECK(out3[1] == 1.0);

  double z[4] = {0, 0, 0, 0};
  double out4[4];
  CHECK(grad::kernels::l2_normalize(z, 4, out4));
  double norm = 0;
  for (double e : out4) norm += e * e;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("l2_normalize output norm property") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    int n = 1 + rng.uniform_int(16);
    std::vector<double> x(n), y(n);
    for (double& e : x) e = rng.uniform(-10, 10);
    if (!grad::kernels::l2_normalize(x.data(), n, y.data())) {
      double norm = 0;
      for (double e : y) norm += e * e;
      norm = std::sqrt(norm);
      CHECK(norm > 1.0 - 1e-12);
      CHECK(norm < 1.0 + 1e-12);
    }
  }
}

TEST_CASE("logsumexp basics and stability") {
  double one[1] = {3.25};
  CHECK(grad::kernels::logsumexp(one, 1) == 3.25);
  double two[2] = {0.0, 0.0};
  CHECK(grad::kernels::logsumexp(two, 2) == doctest::Approx(std::log(2.0)));
  double big[2] = {1000.0, 1000.0};
  CHECK(grad::kernels::logsumexp(big, 2) == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("logsumexp shift invariance") {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    int n = 1 + rng.uniform_int(8);
    std::vector<double> x(n);
    for (double& e : x) e = rng.uniform(-5, 5);
    const double c = rng.uniform(-100, 100);
    std::vector<double> xc = x;
    for (double& e : xc) e += c;
    CHECK(grad::kernels::logsumexp(xc.data(), n) ==
          doctest::Approx(grad::kernels::logsumexp(x.data(), n) + c).epsilon(1e-12));
  }
}

TEST_CASE("backward: sum gives all-ones, unused leaf gets zero") {
  Tape tape;
  Tape::Id x = tape.leaf(Tensor::vec({1.0, -2.0, 0.5}));
  Tape::Id unused = tape.leaf(Tensor::vec({7.0}));
  Tape::Id loss = tape.sum(x);
  tape.backward(loss);
  CHECK(tape.grad(x).v == std::vector<double>{1.0, 1.0, 1.0});
  CHECK(tape.grad(unused).v == std::vector<double>{0.0});
}

TEST_CASE("backward: non-scalar loss throws") {
  Tape tape;
  Tape::Id x = tape.leaf(Tensor::vec({1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(x), grad::shape_error);
}

TEST_CASE("backward matches finite differences for ||Wx - y||^2 on W") {
  Rng rng(13);
  Tensor w = random_tensor({4, 3}, rng);
  Tensor xv = random_tensor({3, 1}, rng);
  Tensor yv = random_tensor({4, 1}, rng);
  check_gradient(w, [&](Tape& t, Tape::Id wid) {
    Tape::Id pred = t.matmul(wid, t.constant(xv));
    return t.sum(t.square(t.sub(pred, t.constant(yv))));
  });
}

TEST_CASE("backward matches finite differences across op set") {
  Rng rng(17);
  SUBCASE("conv2d + relu") {
    Tensor ker = random_tensor({2, 2, 3, 3}, rng);
    Tensor img = random_tensor({2, 5, 4}, rng);
    Tensor bias = random_tensor({2}, rng);
    check_gradient(ker, [&](Tape& t, Tape::Id kid) {
      return t.sum(t.square(t.relu(t.conv2d(t.constant(img), kid, t.constant(bias)))));
    });
    check_gradient(img, [&](Tape& t, Tape::Id iid) {
      return t.sum(t.square(t.relu(t.conv2d(iid, t.constant(ker), t.constant(bias)))));
    });
  }
  SUBCASE("tanh + affine + dot") {
    Tensor w = random_tensor({3, 5}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor x = random_tensor({5}, rng);
    check_gradient(x, [&](Tape& t, Tape::Id xid) {
      Tape::Id h = t.tanh(t.affine(t.constant(w), t.constant(b), xid));
      return t.dot(h, h);
    });
  }
  SUBCASE("l2_normalize + logsumexp") {
    Tensor x = random_tensor({6}, rng, 0.2, 1.0);
    check_gradient(x, [&](Tape& t, Tape::Id xid) {
      return t.logsumexp(t.l2_normalize(xid));
    });
  }
  SUBCASE("logsumexp_rows + diag + mean through matmul_nt") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    check_gradient(a, [&](Tape& t, Tape::Id aid) {
      Tape::Id s = t.matmul_nt(aid, t.constant(b));
      return t.mean(t.sub(t.diag(s), t.logsumexp_rows(s)));
    });
  }
}

TEST_CASE("stopgrad blocks the backward path") {
  Tape tape;
  Tape::Id x = tape.leaf(Tensor::vec({2.0, -1.0}));
  Tape::Id loss = tape.sum(tape.square(tape.stopgrad(x)));
  tape.backward(loss);
  CHECK(tape.grad(x).v == std::vector<double>{0.0, 0.0});
}

TEST_CASE("adam: zero gradient leaves params, first step approximates -lr*sign(g)") {
  Tensor p = Tensor::vec({1.0, -2.0});
  grad::AdamState st;
  st.lr = 1e-2;
  st.init({&p});
  adam_step({&p}, {Tensor({2})}, st);
  CHECK(p.v == std::vector<double>{1.0, -2.0});
  CHECK(st.step == 1);

  Tensor q = Tensor::vec({0.0, 0.0});
  grad::AdamState st2;
  st2.lr = 1e-2;
  st2.init({&q});
  adam_step({&q}, {Tensor::vec({0.3, -0.7})}, st2);
  // first Adam step is -lr * g/(|g| + eps') ~= -lr * sign(g)
  CHECK(q.v[0] == doctest::Approx(-1e-2).epsilon(1e-3));
  CHECK(q.v[1] == doctest::Approx(1e-2).epsilon(1e-3));
}

TEST_CASE("adam: constant gradient descends monotonically") {
  // scalar simulation: parameter driven by a constant positive gradient
  Tensor p = Tensor::vec({5.0});
  grad::AdamState st;
  st.lr = 1e-2;
  st.init({&p});
  double prev = p.v[0];
  for (int i = 0; i < 50; ++i) {
    adam_step({&p}, {Tensor::vec({1.0})}, st);
    CHECK(p.v[0] < prev);
    prev = p.v[0];
  }
}

TEST_CASE("adam: NaN gradient rejected, params untouched") {
  Tensor p = Tensor::vec({1.0});
  grad::AdamState st;
  st.init({&p});
  CHECK_THROWS_AS(adam_step({&p}, {Tensor::vec({std::nan("")})}, st), std::runtime_error);
  CHECK(p.v[0] == 1.0);
  CHECK(st.step == 0);
}

TEST_CASE("taped forward equals direct kernel evaluation exactly") {
  Rng rng(21);
  Tensor img = random_tensor({1, 6, 8}, rng);
  Tensor ker = random_tensor({3, 1, 3, 3}, rng);
  Tensor bias = random_tensor({3}, rng);
  Tensor direct;
  grad::kernels::conv2d(img, ker, bias, direct);
  for (double& e : direct.v) e = e > 0 ? e : 0;

  Tape tape;
  Tape::Id out = tape.relu(tape.conv2d(tape.leaf(img), tape.leaf(ker), tape.leaf(bias)));
  CHECK(tape.val(out).v == direct.v);
}
