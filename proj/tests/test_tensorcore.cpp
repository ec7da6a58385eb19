#include <cmath>

#include "doctest.h"
#include "moeamc/gradcheck.hpp"
#include "moeamc/ops.hpp"
#include "moeamc/rng.hpp"

using namespace moeamc;

namespace {

using TD = Tensor<double>;

TD rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TD t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// away from the relu kink so finite differences stay clean
TD rand_away_from_zero(Shape shape, Rng& rng) {
  TD t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = rng.uniform(0.2, 1.0);
    t[i] = rng.next_bit() ? v : -v;
  }
  return t;
}

double check_scalarized(std::function<TD(Tape<double>*, std::vector<TD>&)> f,
                        std::vector<TD> inputs) {
  return grad_check(std::move(f), std::move(inputs)).max_rel_err;
}

}  // namespace

TEST_SUITE("tensorcore") {

TEST_CASE("softmax rows sum to one and shifting logits changes nothing") {
  Rng rng(50);
  TD x = rand_t({6, 9}, rng, -4.0, 4.0);
  TD y = softmax<double>(nullptr, x);
  for (std::size_t b = 0; b < 6; ++b) {
    double s = 0.0;
    for (std::size_t k = 0; k < 9; ++k) {
      double v = y[b * 9 + k];
      CHECK(v > 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  TD shifted = x;
  for (std::size_t b = 0; b < 6; ++b) {
    for (std::size_t k = 0; k < 9; ++k) shifted[b * 9 + k] += 37.5;
  }
  TD y2 = softmax<double>(nullptr, shifted);
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(y2[i] == doctest::Approx(y[i]).epsilon(1e-12));
  }
}

TEST_CASE("softmax along an inner axis normalizes that axis") {
  Rng rng(51);
  TD x = rand_t({2, 3, 4}, rng);
  TD y = softmax<double>(nullptr, x, 1);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t k = 0; k < 4; ++k) {
      double s = 0.0;
      for (std::size_t t = 0; t < 3; ++t) s += y[(b * 3 + t) * 4 + k];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention outputs are convex mixtures of the values") {
  Rng rng(52);
  TD q = rand_t({5, 3}, rng), k = rand_t({7, 3}, rng), v = rand_t({7, 4}, rng);
  TD out = attention<double>(nullptr, q, k, v);
  REQUIRE(out.shape() == (Shape{5, 4}));
  for (std::size_t c = 0; c < 4; ++c) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t r = 0; r < 7; ++r) {
      lo = std::min(lo, v[r * 4 + c]);
      hi = std::max(hi, v[r * 4 + c]);
    }
    for (std::size_t r = 0; r < 5; ++r) {
      CHECK(out[r * 4 + c] >= lo - 1e-12);
      CHECK(out[r * 4 + c] <= hi + 1e-12);
    }
  }
}

TEST_CASE("batched matmul broadcasts a rank-2 operand") {
  Rng rng(53);
  TD a = rand_t({3, 2, 4}, rng);
  TD b = rand_t({4, 5}, rng);
  TD out = matmul<double>(nullptr, a, b);
  REQUIRE(out.shape() == (Shape{3, 2, 5}));
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) acc += a[(s * 2 + i) * 4 + k] * b[k * 5 + j];
        CHECK(out[(s * 2 + i) * 5 + j] == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("shape mismatches are rejected") {
  Rng rng(54);
  TD a = rand_t({2, 3}, rng), b = rand_t({4, 2}, rng);
  CHECK_THROWS_AS(matmul<double>(nullptr, a, b), ValidationError);
  TD x = rand_t({2, 3, 8}, rng), w = rand_t({4, 2, 3}, rng), bias = rand_t({4}, rng);
  CHECK_THROWS_AS(conv1d<double>(nullptr, x, w, bias, 1, 0), ValidationError);
  CHECK_THROWS_AS(cross_entropy<double>(nullptr, rand_t({2, 3}, rng), {0}), ValidationError);
}

TEST_CASE("cross entropy validates rows and labels") {
  TD bad = TD::from({1, 2}, {0.9, 0.3});  // sums to 1.2
  CHECK_THROWS_AS(cross_entropy<double>(nullptr, bad, {0}), ValidationError);
  TD ok = TD::from({1, 2}, {0.5, 0.5});
  CHECK_THROWS_AS(cross_entropy<double>(nullptr, ok, {2}), ValidationError);
}

TEST_CASE("max pool ties route gradient to the first maximum") {
  TD x = TD::from({1, 1, 2}, {0.7, 0.7});
  x.set_requires_grad(true);
  Tape<double> tape;
  TD y = max_pool1d(&tape, x, 2, 2);
  TD loss = sum_all(&tape, y);
  tape.backward(loss);
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("gradients accumulate until cleared") {
  TD w = TD::from({2}, {0.3, -0.8});
  TD c = TD::from({2}, {2.0, 5.0});
  w.set_requires_grad(true);
  for (int pass = 1; pass <= 2; ++pass) {
    Tape<double> tape;
    TD loss = sum_all(&tape, mul(&tape, w, c));
    tape.backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(2.0 * pass).epsilon(1e-12));
    CHECK(w.grad()[1] == doctest::Approx(5.0 * pass).epsilon(1e-12));
  }
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("a parameter used twice collects both contributions") {
  TD w = TD::from({3}, {0.4, -0.2, 0.9});
  TD a = TD::from({3}, {1.0, 2.0, 3.0});
  TD b = TD::from({3}, {-4.0, 5.0, -6.0});
  w.set_requires_grad(true);
  Tape<double> tape;
  TD loss = sum_all(&tape, add(&tape, mul(&tape, w, a), mul(&tape, w, b)));
  tape.backward(loss);
  for (int i = 0; i < 3; ++i) {
    CHECK(w.grad()[i] == doctest::Approx(a[i] + b[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward requires a scalar loss") {
  TD w = TD::from({2}, {1.0, 2.0});
  w.set_requires_grad(true);
  Tape<double> tape;
  TD y = mul(&tape, w, w);
  CHECK_THROWS_AS(tape.backward(y), ValidationError);
}

TEST_CASE("batch norm in train mode matches the textbook formula") {
  Rng rng(55);
  std::size_t B = 3, C = 2, L = 4;
  TD x = rand_t({B, C, L}, rng, -2.0, 2.0);
  TD gamma({C});
  gamma[0] = 1.7;
  gamma[1] = 0.6;
  TD beta({C});
  beta[0] = -0.3;
  beta[1] = 1.1;
  TD rm({C}), rv({C}, 1.0);
  TD y = batch_norm<double>(nullptr, x, gamma, beta, rm, rv, Mode::kTrain, 0.1, 1e-5);
  for (std::size_t ch = 0; ch < C; ++ch) {
    double mean = 0.0, var = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t l = 0; l < L; ++l) mean += x[(b * C + ch) * L + l];
    }
    mean /= static_cast<double>(B * L);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t l = 0; l < L; ++l) {
        double d = x[(b * C + ch) * L + l] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(B * L);
    // the running estimates move toward the batch statistics
    CHECK(rm[ch] == doctest::Approx(0.1 * mean).epsilon(1e-12));
    CHECK(rv[ch] == doctest::Approx(0.9 + 0.1 * var).epsilon(1e-12));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t l = 0; l < L; ++l) {
        std::size_t i = (b * C + ch) * L + l;
        double want = gamma[ch] * (x[i] - mean) / std::sqrt(var + 1e-5) + beta[ch];
        CHECK(y[i] == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("layer norm matches a per-row reference") {
  Rng rng(56);
  TD x = rand_t({4, 6}, rng, -3.0, 3.0);
  TD gamma({6});
  TD beta({6});
  for (std::size_t i = 0; i < 6; ++i) {
    gamma[i] = 0.5 + 0.2 * static_cast<double>(i);
    beta[i] = -1.0 + 0.3 * static_cast<double>(i);
  }
  TD y = layer_norm<double>(nullptr, x, gamma, beta, 1e-5);
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 6; ++i) mean += x[r * 6 + i];
    mean /= 6.0;
    for (std::size_t i = 0; i < 6; ++i) {
      double d = x[r * 6 + i] - mean;
      var += d * d;
    }
    var /= 6.0;
    for (std::size_t i = 0; i < 6; ++i) {
      double want = gamma[i] * (x[r * 6 + i] - mean) / std::sqrt(var + 1e-5) + beta[i];
      CHECK(y[r * 6 + i] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("permute and patchify round-trip their data") {
  Rng rng(57);
  TD x = rand_t({2, 3, 4}, rng);
  TD p = permute<double>(nullptr, x, {2, 0, 1});
  REQUIRE(p.shape() == (Shape{4, 2, 3}));
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 4; ++k) {
        CHECK(p[(k * 2 + i) * 3 + j] == x[(i * 3 + j) * 4 + k]);
      }
    }
  }
  TD f = rand_t({1, 2, 8}, rng);
  TD patches = patchify<double>(nullptr, f, 4);
  REQUIRE(patches.shape() == (Shape{1, 2, 8}));  // [B, L/p, C*p]
  // each token carries the I block then the Q block of its window
  for (std::size_t tok = 0; tok < 2; ++tok) {
    for (std::size_t t = 0; t < 4; ++t) {
      CHECK(patches[tok * 8 + t] == f[tok * 4 + t]);
      CHECK(patches[tok * 8 + 4 + t] == f[8 + tok * 4 + t]);
    }
  }
}

TEST_CASE("gradient checks pass for every differentiable op") {
  Rng rng(58);

  SUBCASE("matmul") {
    TD c = rand_t({2, 3}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(t, mul(t, matmul(t, in[0], in[1]), c));
              },
              {rand_t({2, 4}, rng), rand_t({4, 3}, rng)}) < 1e-6);
  }

  SUBCASE("batched matmul with broadcast") {
    TD c = rand_t({2, 2, 3}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(t, mul(t, matmul(t, in[0], in[1]), c));
              },
              {rand_t({2, 2, 4}, rng), rand_t({4, 3}, rng)}) < 1e-6);
  }

  SUBCASE("conv1d") {
    TD c = rand_t({2, 3, 4}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(t, mul(t, conv1d(t, in[0], in[1], in[2], 2, 1), c));
              },
              {rand_t({2, 2, 8}, rng), rand_t({3, 2, 3}, rng), rand_t({3}, rng)}) < 1e-6);
  }

  SUBCASE("batch norm train and eval") {
    for (Mode mode : {Mode::kTrain, Mode::kEval}) {
      TD c = rand_t({2, 3, 4}, rng);
      CHECK(check_scalarized(
                [c, mode](Tape<double>* t, std::vector<TD>& in) {
                  TD rm({3}), rv({3}, 1.0);
                  rm[0] = 0.1;
                  rv[1] = 0.7;
                  return sum_all(
                      t, mul(t, batch_norm(t, in[0], in[1], in[2], rm, rv, mode, 0.1, 1e-5), c));
                },
                {rand_t({2, 3, 4}, rng), rand_t({3}, rng, 0.5, 1.5), rand_t({3}, rng)}) < 1e-6);
    }
  }

  SUBCASE("layer norm") {
    TD c = rand_t({3, 5}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(t, mul(t, layer_norm(t, in[0], in[1], in[2], 1e-5), c));
              },
              {rand_t({3, 5}, rng), rand_t({5}, rng, 0.5, 1.5), rand_t({5}, rng)}) < 1e-6);
  }

  SUBCASE("relu away from the kink") {
    TD c = rand_t({4, 4}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(t, mul(t, relu(t, in[0]), c));
              },
              {rand_away_from_zero({4, 4}, rng)}) < 1e-6);
  }

  SUBCASE("sigmoid") {
    TD c = rand_t({3, 3}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(t, mul(t, sigmoid(t, in[0]), c));
              },
              {rand_t({3, 3}, rng, -2.0, 2.0)}) < 1e-6);
  }

  SUBCASE("softmax") {
    TD c = rand_t({3, 5}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(t, mul(t, softmax(t, in[0]), c));
              },
              {rand_t({3, 5}, rng, -2.0, 2.0)}) < 1e-6);
  }

  SUBCASE("max pool with distinct values") {
    TD x({1, 2, 6});
    for (std::size_t i = 0; i < 12; ++i) x[i] = 0.37 * static_cast<double>(i % 7) - 1.1;
    for (std::size_t i = 0; i < 12; ++i) x[i] += 1e-3 * static_cast<double>(i);
    TD c = rand_t({1, 2, 3}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(t, mul(t, max_pool1d(t, in[0], 2, 2), c));
              },
              {x}) < 1e-6);
  }

  SUBCASE("global average pool") {
    TD c = rand_t({2, 3}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(t, mul(t, global_avg_pool(t, in[0]), c));
              },
              {rand_t({2, 4, 3}, rng)}) < 1e-6);
  }

  SUBCASE("linear") {
    TD c = rand_t({3, 4}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(t, mul(t, linear(t, in[0], in[1], in[2]), c));
              },
              {rand_t({3, 5}, rng), rand_t({5, 4}, rng), rand_t({4}, rng)}) < 1e-6);
  }

  SUBCASE("attention") {
    TD c = rand_t({3, 4}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(t, mul(t, attention(t, in[0], in[1], in[2]), c));
              },
              {rand_t({3, 2}, rng), rand_t({5, 2}, rng), rand_t({5, 4}, rng)}) < 1e-6);
  }

  SUBCASE("multi-head attention") {
    TD c = rand_t({2, 3, 4}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                return sum_all(
                    t, mul(t, multi_head_attention(t, in[0], in[1], in[2], in[3], in[4], 2), c));
              },
              {rand_t({2, 3, 4}, rng), rand_t({4, 4}, rng), rand_t({4, 4}, rng),
               rand_t({4, 4}, rng), rand_t({4, 4}, rng)}) < 1e-6);
  }

  SUBCASE("softmax into cross entropy") {
    CHECK(check_scalarized(
              [](Tape<double>* t, std::vector<TD>& in) {
                return cross_entropy(t, softmax(t, in[0]), {1, 0, 2});
              },
              {rand_t({3, 4}, rng, -2.0, 2.0)}) < 1e-6);
  }

  SUBCASE("patchify, permute, reshape, pools of glue") {
    TD c = rand_t({2, 2, 8}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                TD p = patchify(t, in[0], 4);
                TD r = reshape(t, p, {2, 2, 8});
                TD q = permute(t, r, {0, 2, 1});
                return sum_all(t, mul(t, transpose_last2(t, q), c));
              },
              {rand_t({2, 2, 8}, rng)}) < 1e-6);
  }

  SUBCASE("arithmetic glue") {
    TD c = rand_t({2, 3}, rng);
    CHECK(check_scalarized(
              [c](Tape<double>* t, std::vector<TD>& in) {
                TD g = sigmoid(t, in[2]);
                TD mixed = add(t, mul_gate(t, in[0], g),
                               mul_gate(t, in[1], one_minus(t, g)));
                return sum_all(t, mul(t, scale(t, mixed, 1.7), c));
              },
              {rand_t({2, 3}, rng), rand_t({2, 3}, rng), rand_t({2}, rng)}) < 1e-6);
  }
}

TEST_CASE("check_finite raises on poisoned values") {
  TD x = TD::from({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(check_finite(x, "unit"), NumericError);
}

}  // TEST_SUITE
