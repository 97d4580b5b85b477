#include <cmath>
#include <vector>

#include "doctest.h"
#include "duet/rng.hpp"
#include "duet/tensor.hpp"

using namespace duet;

TEST_CASE("matmul identity and scalar cases") {
  Tensor id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  Tensor out = matmul(id, m);
  CHECK(out.data() == std::vector<double>{3, 4, 5, 6});

  Tensor a = Tensor::from_data({1, 1}, {2});
  Tensor b = Tensor::from_data({1, 1}, {3});
  CHECK(matmul(a, b).item() == doctest::Approx(6.0));

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})),
                  std::invalid_argument);
}

TEST_CASE("matmul gradient of sum equals ones times b transpose") {
  Rng rng(7);
  Tensor a = Tensor::randn({4, 5}, rng, 1.0, true);
  Tensor b = Tensor::randn({5, 3}, rng, 1.0, true);

  GradTape tape;
  Tensor out = sum(matmul(a, b));
  tape.backward(out);
  auto ga = tape.grad(a);
  REQUIRE(ga.size() == 20);
  // d(sum(a.b))/da[i,k] = sum_j b[k,j]
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 5; ++k) {
      double expect = 0.0;
      for (int j = 0; j < 3; ++j) expect += b.at(k, j);
      CHECK(ga[i * 5 + k] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("matmul finite-difference check") {
  Rng rng(11);
  Tensor a = Tensor::randn({4, 5}, rng, 1.0, true);
  Tensor b = Tensor::randn({5, 3}, rng, 1.0, true);
  std::vector<Tensor> leaves{a, b};
  double err = grad_check([&] { return sum(matmul(a, b)); }, leaves);
  CHECK(err < 1e-7);
}

TEST_CASE("layernorm_nogain basic rows") {
  Tensor ones = Tensor::from_data({1, 4}, {1, 1, 1, 1});
  Tensor out = layernorm_nogain(ones, 1e-5);
  for (double v : out.data()) CHECK(v == doctest::Approx(0.0));

  Tensor two = Tensor::from_data({1, 2}, {0, 2});
  Tensor norm = layernorm_nogain(two, 1e-12);
  CHECK(norm.at(0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(norm.at(1) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("layernorm_nogain statistics on random rows") {
  Rng rng(3);
  Tensor x = Tensor::randn({3, 8}, rng, 10.0);
  Tensor out = layernorm_nogain(x, 1e-5);
  for (int i = 0; i < 3; ++i) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < 8; ++j) mean += out.at(i, j);
    mean /= 8;
    for (int j = 0; j < 8; ++j) {
      double d = out.at(i, j) - mean;
      var += d * d;
    }
    var /= 8;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("activation closed forms") {
  CHECK(silu(Tensor::scalar(0.0)).item() == doctest::Approx(0.0));
  CHECK(softplus(Tensor::scalar(0.0)).item() ==
        doctest::Approx(0.6931471805599453).epsilon(1e-14));
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));
}

TEST_CASE("concat then slice recovers operands bit-exactly") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    int L = 1 + rng.uniform_int(6);
    int ha = 1 + rng.uniform_int(5);
    int hb = 1 + rng.uniform_int(5);
    Tensor a = Tensor::randn({L, ha}, rng);
    Tensor b = Tensor::randn({L, hb}, rng);
    Tensor cat = concat_lastdim(a, b);
    CHECK(cat.rows() == L);
    CHECK(cat.cols() == ha + hb);
    Tensor ra = slice_cols(cat, 0, ha);
    Tensor rb = slice_cols(cat, ha, hb);
    CHECK(ra.data() == a.data());
    CHECK(rb.data() == b.data());
  }
}

TEST_CASE("depthwise_conv1d identity and impulse") {
  Rng rng(23);
  Tensor x = Tensor::randn({6, 3}, rng);
  Tensor k1 = Tensor::from_data({1, 3}, {1, 1, 1});
  CHECK(depthwise_conv1d(x, k1).data() == x.data());

  // impulse at frame 0 reproduces the kernel taps at frames 0..3
  Tensor imp = Tensor::zeros({6, 2});
  imp.mutable_data()[0] = 1.0;
  imp.mutable_data()[1] = 1.0;
  Tensor ker = Tensor::from_data({4, 2}, {.1, .5, .2, .6, .3, .7, .4, .8});
  Tensor out = depthwise_conv1d(imp, ker);
  for (int j = 0; j < 4; ++j) {
    CHECK(out.at(j, 0) == doctest::Approx(ker.at(j, 0)));
    CHECK(out.at(j, 1) == doctest::Approx(ker.at(j, 1)));
  }
  CHECK(out.at(4, 0) == 0.0);
  CHECK(out.at(5, 1) == 0.0);
}

TEST_CASE("depthwise_conv1d causality: future frames do not leak") {
  Rng rng(29);
  Tensor x = Tensor::randn({16, 6}, rng);
  Tensor ker = Tensor::randn({4, 6}, rng);
  Tensor base = depthwise_conv1d(x, ker);

  Tensor perturbed = Tensor::from_data(x.shape(), x.data());
  for (int j = 0; j < 6; ++j) perturbed.mutable_data()[9 * 6 + j] += 3.0;
  Tensor out = depthwise_conv1d(perturbed, ker);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 6; ++j) CHECK(out.at(i, j) == base.at(i, j));
  bool changed = false;
  for (int i = 9; i < 16; ++i)
    for (int j = 0; j < 6; ++j) changed |= out.at(i, j) != base.at(i, j);
  CHECK(changed);
}

TEST_CASE("grad_check quadratic") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  std::vector<Tensor> leaves{x};
  {
    GradTape tape;
    Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    auto g = tape.grad(x);
    CHECK(g[0] == doctest::Approx(2.0));
    CHECK(g[1] == doctest::Approx(4.0));
  }
  double err = grad_check([&] { return sum(mul(x, x)); }, leaves);
  CHECK(err < 1e-7);
}

TEST_CASE("grad_check silu of linear") {
  Rng rng(31);
  Tensor x = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor w = Tensor::randn({4, 5}, rng, 1.0, true);
  Tensor b = Tensor::randn({5}, rng, 1.0, true);
  std::vector<Tensor> leaves{x, w, b};
  double err = grad_check([&] { return sum(silu(linear(x, w, b))); }, leaves);
  CHECK(err < 1e-4);
}

TEST_CASE("gradient accumulates across fan-out exactly once per use") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  GradTape tape;
  Tensor y = add(x, x);
  tape.backward(sum(y));
  auto g = tape.grad(x);
  for (int i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(2.0));
}

TEST_CASE("ops reject non-finite results") {
  CHECK_THROWS_AS(exp(Tensor::scalar(1000.0)), numeric_error);
  CHECK_THROWS_AS(
      Tensor::from_data({1}, {std::numeric_limits<double>::quiet_NaN()}),
      numeric_error);
  Tensor big = Tensor::scalar(1e308);
  CHECK_THROWS_AS(mul(big, big), numeric_error);
}

TEST_CASE("determinism: same seed gives bit-identical pipelines") {
  auto run = [] {
    Rng rng(123);
    Tensor x = Tensor::randn({5, 4}, rng);
    Tensor w = Tensor::randn({4, 4}, rng);
    return silu(layernorm_nogain(matmul(x, w), 1e-5)).data();
  };
  CHECK(run() == run());
}

TEST_CASE("rowvec broadcasts and their gradients") {
  Rng rng(37);
  Tensor x = Tensor::randn({4, 3}, rng, 1.0, true);
  Tensor v = Tensor::randn({3}, rng, 1.0, true);
  std::vector<Tensor> leaves{x, v};
  double e1 = grad_check([&] { return sum(add_rowvec(x, v)); }, leaves);
  double e2 = grad_check([&] { return sum(mul_rowvec(x, v)); }, leaves);
  CHECK(e1 < 1e-6);
  CHECK(e2 < 1e-6);
}

TEST_CASE("rank-3 tensors hold data and elementwise ops work") {
  Rng rng(41);
  Tensor a = Tensor::randn({2, 3, 4}, rng);
  Tensor b = Tensor::randn({2, 3, 4}, rng);
  Tensor c = add(a, b);
  CHECK(c.size() == 24);
  CHECK_THROWS_AS(Tensor::zeros({1, 1, 1, 1}), std::invalid_argument);
}
