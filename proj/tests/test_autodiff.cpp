#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "hgrec/autodiff.hpp"
#include "hgrec/error.hpp"
#include "hgrec/random.hpp"
#include "support.hpp"

using namespace hgrec;
namespace ad = hgrec::ad;

namespace {

using Builder = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

// Scalar probe: sum(out * W) for a fixed random W, so every output entry has its own weight.
double probe(const Builder& build, std::vector<Matrix>& inputs, std::vector<Matrix>* grads) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    vars.push_back(tape.parameter(inputs[i], grads ? &(*grads)[i] : nullptr));
  }
  ad::Var out = build(tape, vars);
  Rng rng(99);
  Matrix w = testing::random_matrix(out.cols(), 1, rng);
  ad::Var loss = ad::sum(ad::matmul(out, tape.constant(w)));
  if (grads) tape.backward(loss);
  return loss.value()(0, 0);
}

void check_gradients(const Builder& build, std::vector<Matrix> inputs, double tol = 1e-6) {
  std::vector<Matrix> grads;
  for (const auto& m : inputs) grads.emplace_back(m.rows(), m.cols());
  probe(build, inputs, &grads);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Matrix numeric = testing::numeric_gradient(inputs[i], [&] { return probe(build, inputs, nullptr); });
    CHECK(max_abs_diff(numeric, grads[i]) < tol);
  }
}

}  // namespace

TEST_CASE("quadratic probe: d(w^2)/dw at 3 is 6") {
  Matrix w = Matrix::from_rows({{3.0}});
  Matrix g(1, 1);
  ad::Tape tape;
  ad::Var x = tape.parameter(w, &g);
  tape.backward(ad::matmul(x, x));
  CHECK(g(0, 0) == 6.0);
}

TEST_CASE("independent block gets zero gradient; frozen leaf gets none") {
  Matrix a = Matrix::from_rows({{1, 2}});
  Matrix b = Matrix::from_rows({{5, 6}});
  Matrix ga(1, 2), gb(1, 2);
  ad::Tape tape;
  ad::Var va = tape.parameter(a, &ga);
  tape.parameter(b, &gb);
  tape.backward(ad::sum(va));
  CHECK(ga == Matrix(1, 2, 1.0));
  CHECK(gb == Matrix(1, 2));
}

TEST_CASE("stop_gradient blocks flow") {
  Matrix a = Matrix::from_rows({{2}});
  Matrix g(1, 1);
  ad::Tape tape;
  ad::Var x = tape.parameter(a, &g);
  tape.backward(ad::add(x, ad::stop_gradient(ad::scale(x, 10.0))));
  CHECK(g(0, 0) == 1.0);
}

TEST_CASE("finite differences for every primitive") {
  Rng rng(7);
  const Matrix a = testing::random_matrix(3, 4, rng);
  const Matrix b = testing::random_matrix(4, 2, rng);
  const Matrix c = testing::random_matrix(3, 4, rng);
  const Matrix row = testing::random_matrix(1, 4, rng);
  const Matrix gain = testing::random_matrix(1, 4, rng);
  const Matrix bias = testing::random_matrix(1, 4, rng);

  SUBCASE("matmul") { check_gradients([](ad::Tape&, auto& v) { return ad::matmul(v[0], v[1]); }, {a, b}); }
  SUBCASE("matmul_nt") { check_gradients([](ad::Tape&, auto& v) { return ad::matmul_nt(v[0], v[1]); }, {a, c}); }
  SUBCASE("add / sub") {
    check_gradients([](ad::Tape&, auto& v) { return ad::sub(ad::add(v[0], v[1]), ad::scale(v[1], 3.0)); }, {a, c});
  }
  SUBCASE("add_row") { check_gradients([](ad::Tape&, auto& v) { return ad::add_row(v[0], v[1]); }, {a, row}); }
  SUBCASE("relu away from kinks") {
    Matrix x = a;
    for (double& e : x.values()) e += e > 0 ? 0.1 : -0.1;
    check_gradients([](ad::Tape&, auto& v) { return ad::relu(v[0]); }, {x});
  }
  SUBCASE("tanh / sigmoid") {
    check_gradients([](ad::Tape&, auto& v) { return ad::sigmoid(ad::tanh(v[0])); }, {a});
  }
  SUBCASE("softmax_rows") { check_gradients([](ad::Tape&, auto& v) { return ad::softmax_rows(v[0]); }, {a}); }
  SUBCASE("layer_norm_rows") {
    check_gradients([](ad::Tape&, auto& v) { return ad::layer_norm_rows(v[0], v[1], v[2], 1e-5); },
                    {a, gain, bias}, 1e-5);
  }
  SUBCASE("mean_rows / concat / gather") {
    check_gradients(
        [](ad::Tape&, auto& v) {
          const ad::Var parts[2] = {v[0], ad::mean_rows(v[1])};
          const std::size_t idx[] = {3, 0, 0, 2};
          return ad::gather_rows(ad::concat_rows(parts), idx);
        },
        {a, c});
  }
}

TEST_CASE("softmax is stable for large logits and rows sum to 1") {
  ad::Tape tape;
  ad::Var s = ad::softmax_rows(tape.constant(Matrix::from_rows({{1000, 1001, 999}, {-5, -5, -5}})));
  for (std::size_t r = 0; r < 2; ++r) {
    double total = 0;
    for (double v : s.value().row(r)) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.value().all_finite());
  }
}

TEST_CASE("shape errors and tape mixing are rejected") {
  ad::Tape t1, t2;
  ad::Var x = t1.constant(Matrix(2, 3));
  CHECK_THROWS(ad::add(x, t1.constant(Matrix(3, 2))));
  CHECK_THROWS_AS(ad::add_row(x, t1.constant(Matrix(1, 2))), ShapeError);
  CHECK_THROWS_AS(ad::add(x, t2.constant(Matrix(2, 3))), InvalidArgument);
}

TEST_CASE("kink probe records relu input signs in order") {
  ad::Tape tape;
  ad::KinkProbe probe;
  ad::relu(tape.constant(Matrix::from_rows({{1.0, -2.0}})));
  {
    ad::KinkProbe inner;
    ad::relu(tape.constant(Matrix::from_rows({{3.0}})));
    CHECK(inner.signs() == std::vector<bool>{true});
  }
  ad::relu(tape.constant(Matrix::from_rows({{0.0}})));
  CHECK(probe.signs() == std::vector<bool>{true, false, false});
}
