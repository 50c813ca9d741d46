#include <doctest.h>

#include <cmath>
#include <random>

#include "msptr/tensor.hpp"

using namespace msptr;

TEST_CASE("linear_map handles identity and a hand sum") {
  const Tensor I = Tensor::from_matrix({{1, 0}, {0, 1}});
  const Tensor x = Tensor::from_vector({2, 3});
  const Tensor out = linear_map(x, I, Tensor::from_vector({0, 0}));
  CHECK(out[0] == 2.0);
  CHECK(out[1] == 3.0);

  const Tensor sum = linear_map(x, Tensor::from_matrix({{1, 1}}), Tensor::from_vector({1}));
  REQUIRE(sum.size() == 1);
  CHECK(sum[0] == 6.0);
}

TEST_CASE("linear_map agrees with a naive triple loop") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor W({4, 4}), b({4}), x({4});
  for (double& v : W.values()) v = u(rng);
  for (double& v : b.values()) v = u(rng);
  for (double& v : x.values()) v = u(rng);
  const Tensor out = linear_map(x, W, b);
  for (int r = 0; r < 4; ++r) {
    double acc = b[r];
    for (int k = 0; k < 4; ++k) acc += W.values()[r * 4 + k] * x[k];
    CHECK(out[r] == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("linear_map names both shapes on mismatch") {
  const Tensor W({2, 3}), x({2}), b({2});
  try {
    linear_map(x, W, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
  }
}

TEST_CASE("activations") {
  CHECK(sigmoid(0.0) == 0.5);
  const Tensor x = Tensor::from_vector({-1.5, 0.3});
  CHECK(activation(x, Activation::kRelu)[0] == 0.0);
  // Taylor series of tanh around 0 up to x^11.
  const double t = 0.3;
  const double series = t - std::pow(t, 3) / 3 + 2 * std::pow(t, 5) / 15 - 17 * std::pow(t, 7) / 315 +
                        62 * std::pow(t, 9) / 2835 - 1382 * std::pow(t, 11) / 155925;
  const double got = activation(x, Activation::kTanh)[1];
  CHECK(got == doctest::Approx(series).epsilon(1e-8));
  CHECK(got == doctest::Approx(0.291312612).epsilon(1e-9));
  const Tensor big = Tensor::from_vector({-800, 800});
  const Tensor s = activation(big, Activation::kSigmoid);
  CHECK(s[0] >= 0.0);
  CHECK(s[1] <= 1.0);
  CHECK(std::isfinite(s[0]));
}

TEST_CASE("masked softmax") {
  const std::vector<double> flat{0, 0, 0};
  for (double p : masked_softmax(flat)) CHECK(p == doctest::Approx(1.0 / 3.0));

  const std::vector<double> two{1, 1};
  const std::vector<unsigned char> mask{1, 0};
  const auto single = masked_softmax(two, mask);
  CHECK(single[0] == 1.0);
  CHECK(single[1] == 0.0);

  const std::vector<double> large{1000, 1001};
  const auto p = masked_softmax(large);
  CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.2689).epsilon(1e-4));

  const std::vector<unsigned char> none{0, 0};
  CHECK_THROWS(masked_softmax(two, none));
}

TEST_CASE("softmax sums to one for magnitudes up to 1e3") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1000, 1000);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + trial % 9);
    std::vector<unsigned char> m(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = u(rng);
      m[i] = (i == 0 || rng() % 3 != 0) ? 1 : 0;
    }
    const auto p = masked_softmax(v, m);
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!m[i]) CHECK(p[i] == 0.0);
      sum += p[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("l2 norm") {
  const std::vector<std::vector<double>> g{{3.0}, {4.0}};
  CHECK(l2_norm(g) == 5.0);
  const std::vector<std::vector<double>> z{{0.0, 0.0}};
  CHECK(l2_norm(z) == 0.0);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  std::vector<std::vector<double>> r(3, std::vector<double>(17));
  double sq = 0.0;
  for (auto& b : r)
    for (double& v : b) {
      v = n(rng);
      sq += v * v;
    }
  CHECK(l2_norm(r) == doctest::Approx(std::sqrt(sq)).epsilon(1e-9));
}

TEST_CASE("tensor shape validation and float32 rounding") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({0}), ShapeError);
  Tensor t = Tensor::from_vector({0.1});
  t.round_to_float32();
  CHECK(t[0] == static_cast<double>(0.1f));
  CHECK(t.all_finite());
}
