#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "msptr/grad_check.hpp"
#include "msptr/tape.hpp"

using namespace msptr;

namespace {

ParameterSet random_params(std::initializer_list<std::pair<const char*, std::vector<std::size_t>>> specs,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  ParameterSet ps;
  for (const auto& [name, shape] : specs) {
    Tensor t(shape);
    for (double& v : t.values()) v = u(rng);
    ps.add(name, std::move(t));
  }
  return ps;
}

// Wraps a graph builder into a LossFunction that records a fresh tape per call.
LossFunction as_loss(std::function<Var(Tape&, const ParameterSet&)> build) {
  return [build](const ParameterSet& ps, Gradients* grads) {
    Tape tape;
    const Var loss = build(tape, ps);
    if (grads) tape.backward(loss, *grads);
    return tape.scalar_value(loss);
  };
}

void check_gradients(const std::function<Var(Tape&, const ParameterSet&)>& build, ParameterSet ps) {
  GradCheckOptions opt;
  opt.eps = 1e-5;
  const auto r = grad_check(as_loss(build), ps, opt);
  INFO("worst ", r.worst_parameter, "[", r.worst_index, "] analytic ", r.worst_analytic, " numeric ",
       r.worst_numeric);
  CHECK(r.max_relative_error < 1e-6);
  CHECK(r.entries_checked == ps.total_elements());
}

}  // namespace

TEST_CASE("grad_check on a quadratic is exact") {
  ParameterSet ps;
  ps.add("x", Tensor::from_vector({1.0, 2.0}));
  auto loss = as_loss([](Tape& t, const ParameterSet& p) {
    const Var x = t.param(param_ref(p, 0));
    return t.dot(x, x);
  });
  Gradients g(ps);
  loss(ps, &g);
  CHECK(g[0][0] == 2.0);
  CHECK(g[0][1] == 4.0);
  const auto r = grad_check(loss, ps);
  CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("the five-point stencil removes the cubic truncation term") {
  ParameterSet ps;
  ps.add("x", Tensor::from_vector({0.7}));
  auto loss = as_loss([](Tape& t, const ParameterSet& p) {
    const Var x = t.param(param_ref(p, 0));
    return t.dot(t.tanh(x), x);
  });
  GradCheckOptions two;
  two.eps = 1e-2;
  GradCheckOptions five = two;
  five.fourth_order = true;
  const double coarse = grad_check(loss, ps, two).max_relative_error;
  const double fine = grad_check(loss, ps, five).max_relative_error;
  CHECK(coarse > 1e-6);
  CHECK(fine < coarse * 1e-2);
  CHECK(ps[0][0] == 0.7);
}

TEST_CASE("grad_check on a constant loss sees zero gradients") {
  ParameterSet ps;
  ps.add("x", Tensor::from_vector({1.0, -3.0}));
  auto loss = as_loss([](Tape& t, const ParameterSet&) { return t.scalar(7.0); });
  Gradients g(ps);
  loss(ps, &g);
  CHECK(g[0][0] == 0.0);
  CHECK(g[0][1] == 0.0);
  CHECK(grad_check(loss, ps).max_relative_error == 0.0);
}

TEST_CASE("grad_check rejects non-finite losses") {
  ParameterSet ps;
  ps.add("x", Tensor::from_vector({1.0}));
  auto loss = [](const ParameterSet&, Gradients*) { return std::nan(""); };
  CHECK_THROWS(grad_check(loss, ps));
}

TEST_CASE("affine, elementwise and reductions backpropagate correctly") {
  auto ps = random_params({{"W", {3, 4}}, {"b", {3}}, {"x", {4}}, {"y", {3}}}, 1);
  check_gradients(
      [](Tape& t, const ParameterSet& p) {
        const Var x = t.param(param_ref(p, 2));
        const Var h = t.affine(param_ref(p, 0), x, param_ref(p, 1));
        const Var y = t.param(param_ref(p, 3));
        const Var a = t.mul(t.sigmoid(h), t.tanh(t.sub(h, y)));
        const Var b = t.add(t.relu(t.scale(h, 1.7)), t.one_minus(a));
        const Var terms[] = {t.dot(a, b), t.dot_param(param_ref(p, 3), b)};
        return t.sum(terms);
      },
      ps);
}

TEST_CASE("structural ops backpropagate correctly") {
  auto ps = random_params({{"a", {3}}, {"b", {2}}, {"W", {2, 3}}, {"E", {5, 3}}}, 2);
  check_gradients(
      [](Tape& t, const ParameterSet& p) {
        const Var a = t.param(param_ref(p, 0));
        const Var b = t.param(param_ref(p, 1));
        const Var ab = t.concat({a, b});
        const Var s = t.slice(ab, 1, 3);
        const Var e = t.embed(param_ref(p, 3), 4);
        const Var rows[] = {s, e, a};
        const Var m = t.stack(rows);
        const Var r1 = t.row(m, 1);
        const Var proj = t.affine_rows(param_ref(p, 2), m);  // 3 x 2
        const Var flat = t.row(proj, 2);
        return t.add(t.dot(r1, s), t.dot(flat, b));
      },
      ps);
}

TEST_CASE("attention pieces backpropagate correctly") {
  auto ps = random_params({{"states", {4, 3}}, {"W_h", {3, 3}}, {"q", {3}}, {"v", {3}}}, 3);
  check_gradients(
      [](Tape& t, const ParameterSet& p) {
        const Tensor& st = p[0];
        std::vector<Var> rows;
        for (std::size_t r = 0; r < 4; ++r) rows.push_back(t.embed(param_ref(p, 0), r));
        (void)st;
        const Var states = t.stack(rows);
        const Var keys = t.affine_rows(param_ref(p, 1), states);
        const Var u = t.attention_scores(keys, t.param(param_ref(p, 2)), param_ref(p, 3));
        const std::vector<unsigned char> mask{1, 0, 1, 1};
        const Var a = t.masked_softmax(u, mask);
        const Var c = t.weighted_sum(a, states);
        const std::vector<int> pos{0, 3};
        const Var g = t.gather_sum(a, pos);
        const Var nl = t.neg_log(g, 1e-12);
        return t.add(nl, t.dot(c, c));
      },
      ps);
}

TEST_CASE("masked softmax on the tape gives zero mass and zero gradient to masked slots") {
  ParameterSet ps;
  ps.add("u", Tensor::from_vector({0.3, 5.0, -0.2}));
  Tape t;
  const Var u = t.param(param_ref(ps, 0));
  const std::vector<unsigned char> mask{1, 0, 1};
  const Var a = t.masked_softmax(u, mask);
  CHECK(t.value(a)[1] == 0.0);
  const std::vector<int> pos{0};
  const Var loss = t.neg_log(t.gather_sum(a, pos), 1e-12);
  Gradients g(ps);
  t.backward(loss, g);
  CHECK(g[0][1] == 0.0);
  CHECK(g[0][0] < 0.0);
}

TEST_CASE("neg_log floors tiny probabilities") {
  Tape t;
  const Var p = t.scalar(0.0);
  CHECK(t.scalar_value(t.neg_log(p, 1e-12)) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("unused parameters get zero gradient and tape reuse is clean") {
  auto ps = random_params({{"used", {2}}, {"unused", {2}}}, 4);
  Tape t;
  for (int pass = 0; pass < 2; ++pass) {
    t.clear();
    const Var x = t.param(param_ref(ps, 0));
    const Var loss = t.dot(x, x);
    Gradients g(ps);
    t.backward(loss, g);
    CHECK(g[1][0] == 0.0);
    CHECK(g[1][1] == 0.0);
    CHECK(g[0][0] == doctest::Approx(2 * ps[0][0]));
  }
}

TEST_CASE("tape rejects size mismatches") {
  Tape t;
  const Var a = t.zeros(2), b = t.zeros(3);
  CHECK_THROWS_AS(t.add(a, b), ShapeError);
}

TEST_CASE("gradients container arithmetic") {
  ParameterSet ps;
  ps.add("a", Tensor::from_vector({0, 0}));
  Gradients g(ps), h(ps);
  g[0] = {3.0, 0.0};
  h[0] = {0.0, 4.0};
  g.add(h);
  CHECK(g.norm() == 5.0);
  g.scale(0.5);
  CHECK(g[0][1] == 2.0);
  g.zero();
  CHECK(g.norm() == 0.0);
}
