#include <doctest.h>

#include <cmath>
#include <limits>

#include "scanssc/autodiff.hpp"
#include "scanssc/rng.hpp"
#include "test_helpers.hpp"

using namespace scanssc;
using ad::Tensor;
using ad::Tape;
using scanssc::testing::rand_tensor;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("matmul identity and scalar cases") {
  const Tensor eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::constant({2, 2}, {3, 4, 5, 6});
  const Tensor c = ad::matmul(eye, b);
  CHECK(c.data() == std::vector<double>{3, 4, 5, 6});

  // 1x1: [2]*[3] = [6], dA = 3, dB = 2
  Tape tape;
  const Tensor a1 = tape.leaf({1, 1}, {2.0});
  const Tensor b1 = tape.leaf({1, 1}, {3.0});
  const Tensor c1 = ad::matmul(a1, b1);
  CHECK(c1.value() == doctest::Approx(6.0));
  tape.backward(ad::sum_all(c1));
  CHECK(tape.grad(a1)[0] == doctest::Approx(3.0));
  CHECK(tape.grad(b1)[0] == doctest::Approx(2.0));
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  const Tensor a = rand_tensor({3, 4}, rng);
  const Tensor b = rand_tensor({4, 2}, rng);
  const auto rep = ad::grad_check(
      [](Tape&, const std::vector<Tensor>& p) { return ad::sum_all(ad::matmul(p[0], p[1])); },
      {a, b});
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("matmul shape errors name both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 2});
  try {
    ad::matmul(a, b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  const Tensor x = Tensor::constant({3}, {0, 0, 0});
  const Tensor s = ad::softmax(x, 0);
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

  const Tensor blocked = Tensor::constant({3}, {0.0, -kInf, 0.0});
  const Tensor sb = ad::softmax(blocked, 0);
  CHECK(sb.data()[0] == doctest::Approx(0.5));
  CHECK(sb.data()[1] == 0.0);  // exactly zero
  CHECK(sb.data()[2] == doctest::Approx(0.5));

  const Tensor dead = Tensor::constant({2}, {-kInf, -kInf});
  CHECK_THROWS_AS(ad::softmax(dead, 0), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one and Jacobian matches finite differences") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = rand_tensor({4, 5}, rng);
    const Tensor s = ad::softmax(x, 1);
    for (int64_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (int64_t c = 0; c < 5; ++c) sum += s.data()[static_cast<size_t>(r * 5 + c)];
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }

  // random length-5 vector: full Jacobian via per-output grad checks
  const Tensor x = rand_tensor({5}, rng);
  for (int64_t out = 0; out < 5; ++out) {
    const auto rep = ad::grad_check(
        [out](Tape&, const std::vector<Tensor>& p) {
          return ad::narrow(ad::softmax(p[0], 0), 0, out, 1);
        },
        {x});
    CHECK(rep.max_rel_error < 1e-6);
  }
}

TEST_CASE("layer_norm examples") {
  const Tensor gamma = Tensor::full({4}, 1.0);
  const Tensor beta = Tensor::zeros({4});

  // constant channel vector -> zeros (epsilon handles the zero variance)
  const Tensor c = Tensor::full({1, 4}, 3.25);
  const Tensor out = ad::layer_norm(c, gamma, beta, 1e-5);
  for (double v : out.data()) CHECK(std::abs(v) < 1e-9);

  // x=[1,3] standardizes to [-1,1] as epsilon -> 0
  const Tensor two = Tensor::constant({1, 2}, {1.0, 3.0});
  const Tensor g2 = Tensor::full({2}, 1.0);
  const Tensor b2 = Tensor::zeros({2});
  const Tensor out2 = ad::layer_norm(two, g2, b2, 1e-12);
  CHECK(out2.data()[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(out2.data()[1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("layer_norm normalizes random rows") {
  Rng rng(13);
  const Tensor x = rand_tensor({2, 4}, rng);
  const Tensor out = ad::layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}), 1e-5);
  for (int64_t r = 0; r < 2; ++r) {
    double mu = 0.0, var = 0.0;
    for (int64_t c = 0; c < 4; ++c) mu += out.data()[static_cast<size_t>(r * 4 + c)];
    mu /= 4.0;
    for (int64_t c = 0; c < 4; ++c) {
      const double d = out.data()[static_cast<size_t>(r * 4 + c)] - mu;
      var += d * d;
    }
    var /= 4.0;
    CHECK(std::abs(mu) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-4);  // epsilon=1e-5 shrinks variance slightly
  }
}

TEST_CASE("elementwise primitive examples") {
  CHECK(ad::relu(Tensor::constant({2}, {-1.0, 2.0})).data() == std::vector<double>{0.0, 2.0});
  const Tensor ones = Tensor::full({3, 4}, 1.0);
  CHECK(ad::mean(ones, 1).data() == std::vector<double>(3, 1.0));
}

TEST_CASE("every primitive gradient survives finite differences") {
  Rng rng(14);
  auto fd = [](const ad::ScalarFn& f, const std::vector<Tensor>& p) {
    return ad::grad_check(f, p).max_rel_error;
  };

  const Tensor a = rand_tensor({2, 3}, rng), b = rand_tensor({2, 3}, rng);
  CHECK(fd([](Tape&, const std::vector<Tensor>& p) { return ad::sum_all(ad::add(p[0], p[1])); },
           {a, b}) < 1e-6);
  CHECK(fd([](Tape&, const std::vector<Tensor>& p) { return ad::sum_all(ad::mul(p[0], p[1])); },
           {a, b}) < 1e-6);
  const Tensor pos = rand_tensor({2, 3}, rng, 0.5, 2.5);
  CHECK(fd([](Tape&, const std::vector<Tensor>& p) { return ad::sum_all(ad::log(p[0])); }, {pos}) <
        1e-6);
  CHECK(fd([](Tape&, const std::vector<Tensor>& p) { return ad::sum_all(ad::div(p[0], p[1])); },
           {a, pos}) < 1e-6);

  const Tensor off = scanssc::testing::rand_tensor({3, 3}, rng, 0.1, 2.0);
  CHECK(fd([](Tape&, const std::vector<Tensor>& p) { return ad::sum_all(ad::relu(p[0])); },
           {off}) < 1e-6);

  const Tensor x = rand_tensor({2, 2, 3}, rng), w = rand_tensor({3, 4}, rng),
               bias = rand_tensor({4}, rng);
  CHECK(fd([](Tape&, const std::vector<Tensor>& p) {
          return ad::sum_all(ad::mul(ad::linear(p[0], p[1], p[2]),
                                     Tensor::constant({2, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10,
                                                                  11, 12, 13, 14, 15, 16})));
        },
           {x, w, bias}) < 1e-6);
}

TEST_CASE("grad_check worked examples") {
  // f(x) = x^2 at x=3: analytic 6, central difference 6
  const auto sq = ad::grad_check(
      [](Tape&, const std::vector<Tensor>& p) { return ad::sum_all(ad::mul(p[0], p[0])); },
      {Tensor::scalar(3.0)});
  CHECK(sq.max_rel_error < 1e-9);

  // f = sum(softmax(x)) == 1, gradient identically zero
  Rng rng(15);
  const auto sm = ad::grad_check(
      [](Tape&, const std::vector<Tensor>& p) { return ad::sum_all(ad::softmax(p[0], 0)); },
      {rand_tensor({6}, rng)});
  CHECK(sm.max_rel_error < 1e-8);
}

TEST_CASE("grad_check rejects out-of-range step sizes") {
  const auto f = [](Tape&, const std::vector<Tensor>& p) { return ad::sum_all(p[0]); };
  CHECK_THROWS_AS(ad::grad_check(f, {Tensor::scalar(1.0)}, 1e-8), std::invalid_argument);
  CHECK_THROWS_AS(ad::grad_check(f, {Tensor::scalar(1.0)}, 1e-2), std::invalid_argument);
}

TEST_CASE("detached tensors contribute no gradients") {
  Tape tape;
  const Tensor x = tape.leaf({2}, {1.0, 2.0});
  const Tensor c = Tensor::constant({2}, {5.0, 7.0});  // not on the tape
  const Tensor out = ad::sum_all(ad::mul(x, c));
  tape.backward(out);
  CHECK(tape.grad(x) == std::vector<double>{5.0, 7.0});
}

TEST_CASE("random composition DAGs pass grad_check") {
  // compositions of <=6 primitives with shared intermediates
  Rng rng(16);
  for (uint64_t trial = 0; trial < 8; ++trial) {
    const Tensor a = rand_tensor({3, 4}, rng, 0.2, 1.5);
    const Tensor b = rand_tensor({3, 4}, rng, 0.2, 1.5);
    const uint64_t which = rng.next_u64() % 3;
    const auto f = [which](Tape&, const std::vector<Tensor>& p) -> Tensor {
      const Tensor h = ad::mul(p[0], p[1]);
      switch (which) {
        case 0: {
          const Tensor s = ad::softmax(ad::add(h, p[0]), 1);
          return ad::mean_all(ad::mul(s, h));
        }
        case 1: {
          const Tensor ln =
              ad::layer_norm(h, Tensor::full({4}, 1.0), Tensor::zeros({4}), 1e-5);
          return ad::sum_all(ad::relu(ad::add_scalar(ln, 0.1)));
        }
        default: {
          const Tensor m = ad::matmul(h, ad::permute(p[1], {1, 0}));
          return ad::mean_all(ad::log(ad::add_scalar(ad::mul(m, m), 1.0)));
        }
      }
    };
    CHECK(ad::grad_check(f, {a, b}).max_rel_error < 1e-4);
  }
}

TEST_CASE("backward walks the tape exactly once per node") {
  // double-use of an intermediate must accumulate, not overwrite
  Tape tape;
  const Tensor x = tape.leaf({1}, {2.0});
  const Tensor y = ad::mul(x, x);          // x^2
  const Tensor z = ad::add(y, y);          // 2 x^2
  tape.backward(ad::sum_all(z));
  CHECK(tape.grad(x)[0] == doctest::Approx(8.0));  // d/dx 2x^2 = 4x
}

TEST_CASE("gradients through blocked attention slots are exactly zero") {
  Rng rng(18);
  const int64_t L = 4;
  std::vector<uint8_t> blocked(static_cast<size_t>(L * L), 0);
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = i + 1; j < L; ++j) blocked[static_cast<size_t>(i * L + j)] = 1;

  Tape tape;
  const Tensor scores = tape.leaf(rand_tensor({L, L}, rng));
  const Tensor att = ad::softmax(ad::masked_fill_blocked(scores, blocked, L), 1);
  tape.backward(ad::sum_all(ad::mul(att, rand_tensor({L, L}, rng))));
  const auto g = tape.grad(scores);
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = 0; j < L; ++j)
      if (blocked[static_cast<size_t>(i * L + j)])
        CHECK(g[static_cast<size_t>(i * L + j)] == 0.0);  // exact, not approximate
}

TEST_CASE("tape misuse is rejected") {
  Tape a, b;
  const Tensor xa = a.leaf({2}, {1.0, 2.0});
  const Tensor xb = b.leaf({2}, {3.0, 4.0});
  CHECK_THROWS_AS(ad::add(xa, xb), std::invalid_argument);          // two tapes
  CHECK_THROWS_AS(a.backward(xa), std::invalid_argument);           // non-scalar root
  CHECK_THROWS_AS(b.backward(ad::sum_all(xa)), std::invalid_argument);  // foreign root
  CHECK_THROWS_AS(b.grad(xa), std::invalid_argument);
}

TEST_CASE("reshape and permute round trips") {
  Rng rng(17);
  const Tensor x = rand_tensor({2, 3, 4}, rng);
  const Tensor rt = ad::permute(ad::permute(x, {2, 0, 1}), {1, 2, 0});
  CHECK(scanssc::testing::max_abs_diff(x.data(), rt.data()) == 0.0);
  const Tensor rs = ad::reshape(ad::reshape(x, {6, 4}), {2, 3, 4});
  CHECK(scanssc::testing::max_abs_diff(x.data(), rs.data()) == 0.0);
}
