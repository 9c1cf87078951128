#include "rolegen/tape.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

using namespace rolegen;
using Eigen::MatrixXd;

namespace {

MatrixXd random_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

// Central finite differences of a scalar-valued graph against the analytic
// gradient of every input. build() must consume inputs in order and return a
// 1x1 root.
void gradcheck(std::vector<MatrixXd> inputs,
               const std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>& build,
               double tol = 1e-6) {
  Tape tape;
  std::vector<Tape::Id> ids;
  for (const auto& m : inputs) ids.push_back(tape.input(m));
  Tape::Id root = build(tape, ids);
  REQUIRE(tape.value(root).size() == 1);
  tape.backward(root);

  const double h = 1e-5;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const MatrixXd analytic = tape.grad(ids[k]);
    for (int i = 0; i < inputs[k].rows(); ++i) {
      for (int j = 0; j < inputs[k].cols(); ++j) {
        auto eval = [&](double delta) {
          Tape t;
          std::vector<Tape::Id> xs;
          for (std::size_t m = 0; m < inputs.size(); ++m) {
            MatrixXd v = inputs[m];
            if (m == k) v(i, j) += delta;
            xs.push_back(t.input(v));
          }
          return t.value(build(t, xs))(0, 0);
        };
        const double numeric = (eval(h) - eval(-h)) / (2 * h);
        CHECK(std::abs(analytic(i, j) - numeric) <=
              tol * std::max(1.0, std::abs(numeric)));
      }
    }
  }
}

Tape::Id reduce(Tape& t, Tape::Id a) {
  // Squash any matrix to 1x1 via sum of rows then matmul with ones.
  Tape::Id row = t.sum_rows(a);
  Tape::Id ones = t.input(MatrixXd::Ones(t.value(row).cols(), 1));
  return t.matmul(row, ones);
}

}  // namespace

TEST_CASE("matmul, add and scale gradients match finite differences") {
  std::mt19937_64 rng(11);
  gradcheck({random_matrix(3, 4, rng), random_matrix(4, 2, rng)},
            [](Tape& t, const std::vector<Tape::Id>& x) {
              return reduce(t, t.matmul(x[0], x[1]));
            });
  gradcheck({random_matrix(3, 3, rng), random_matrix(3, 3, rng)},
            [](Tape& t, const std::vector<Tape::Id>& x) {
              return reduce(t, t.add(t.scale(x[0], 2.5), x[1]));
            });
  gradcheck({random_matrix(2, 3, rng)},
            [](Tape& t, const std::vector<Tape::Id>& x) {
              return reduce(t, t.transpose(x[0]));
            });
}

TEST_CASE("broadcast ops propagate gradients to the row operand") {
  std::mt19937_64 rng(13);
  gradcheck({random_matrix(4, 3, rng), random_matrix(1, 3, rng)},
            [](Tape& t, const std::vector<Tape::Id>& x) {
              return reduce(t, t.add_row_broadcast(x[0], x[1]));
            });
  gradcheck({random_matrix(4, 3, rng), random_matrix(1, 3, rng)},
            [](Tape& t, const std::vector<Tape::Id>& x) {
              return reduce(t, t.cwise_mul_row_broadcast(x[0], x[1]));
            });
}

TEST_CASE("slice and concat round-trip values and gradients") {
  std::mt19937_64 rng(17);
  gradcheck({random_matrix(3, 6, rng)},
            [](Tape& t, const std::vector<Tape::Id>& x) {
              Tape::Id left = t.slice_cols(x[0], 0, 2);
              Tape::Id right = t.slice_cols(x[0], 2, 4);
              return reduce(t, t.concat_cols({right, left}));
            });

  Tape t;
  MatrixXd m = random_matrix(2, 5, rng);
  Tape::Id id = t.input(m);
  Tape::Id joined = t.concat_cols({t.slice_cols(id, 0, 3), t.slice_cols(id, 3, 2)});
  CHECK((t.value(joined) - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gather_rows scatter-adds duplicate rows") {
  std::mt19937_64 rng(19);
  gradcheck({random_matrix(5, 3, rng)},
            [](Tape& t, const std::vector<Tape::Id>& x) {
              return reduce(t, t.gather_rows(x[0], {4, 0, 4, 2}));
            });

  Tape t;
  MatrixXd table = random_matrix(4, 2, rng);
  Tape::Id id = t.input(table);
  Tape::Id picked = t.gather_rows(id, {1, 1, 3});
  t.backward(reduce(t, picked));
  CHECK(t.grad(id).row(1).isApprox(MatrixXd::Constant(1, 2, 2.0)));
  CHECK(t.grad(id).row(0).isZero());
}

TEST_CASE("rmsnorm, gelu and softmax gradients match finite differences") {
  std::mt19937_64 rng(23);
  gradcheck({random_matrix(3, 4, rng)},
            [](Tape& t, const std::vector<Tape::Id>& x) {
              return reduce(t, t.rmsnorm(x[0]));
            },
            1e-5);
  gradcheck({random_matrix(3, 4, rng)},
            [](Tape& t, const std::vector<Tape::Id>& x) {
              return reduce(t, t.gelu(x[0]));
            },
            1e-5);
  gradcheck({random_matrix(3, 4, rng)},
            [](Tape& t, const std::vector<Tape::Id>& x) {
              return reduce(t, t.softmax_rows(x[0]));
            },
            1e-5);

  // With an additive mask the masked columns gain no probability mass.
  Tape t;
  MatrixXd logits = random_matrix(2, 4, rng);
  MatrixXd mask = MatrixXd::Zero(2, 4);
  mask(0, 3) = -1e30;
  Tape::Id sm = t.softmax_rows(t.input(logits), t.input(mask));
  CHECK(t.value(sm)(0, 3) == 0.0);
  CHECK(t.value(sm).rowwise().sum().isApproxToConstant(1.0));
}

TEST_CASE("cross entropy equals mean negative log softmax probability") {
  std::mt19937_64 rng(29);
  MatrixXd logits = random_matrix(4, 5, rng);
  std::vector<int> targets = {2, 0, 4, 1};

  Tape t;
  Tape::Id id = t.input(logits);
  Tape::Id loss = t.cross_entropy(id, targets);

  double expect = 0.0;
  for (int r = 0; r < 4; ++r) {
    Eigen::VectorXd row = logits.row(r);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    expect += lse - row(targets[static_cast<std::size_t>(r)]);
  }
  expect /= 4.0;
  CHECK(t.value(loss)(0, 0) == doctest::Approx(expect).epsilon(1e-12));

  gradcheck({logits},
            [&](Tape& tt, const std::vector<Tape::Id>& x) {
              return tt.cross_entropy(x[0], targets);
            },
            1e-5);
}

TEST_CASE("mean of scalars averages values and splits gradients") {
  std::mt19937_64 rng(31);
  gradcheck({random_matrix(1, 1, rng), random_matrix(1, 1, rng),
             random_matrix(1, 1, rng)},
            [](Tape& t, const std::vector<Tape::Id>& x) {
              return t.mean({x[0], x[1], x[2]});
            });
}

TEST_CASE("backward accumulates through shared subexpressions") {
  // y = (x + x) summed: dy/dx = 2 everywhere.
  Tape t;
  Tape::Id x = t.input(MatrixXd::Ones(2, 2));
  t.backward(reduce(t, t.add(x, x)));
  CHECK(t.grad(x).isApproxToConstant(2.0));
}
