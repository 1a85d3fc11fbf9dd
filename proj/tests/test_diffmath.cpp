#include <cmath>
#include <functional>
#include <vector>

#include "amirgrpo/diffmath.hpp"
#include "amirgrpo/optim.hpp"
#include "amirgrpo/rng.hpp"
#include "doctest.h"

using namespace amirgrpo;
using diffmath::Shape;
using diffmath::Tape;
using diffmath::Tensor;

namespace {

std::vector<double> normals(Rng& rng, std::size_t n, double offset = 0.0) {
  std::vector<double> v(n);
  for (double& x : v) x = offset + rng.normal(0.0, 1.0);
  return v;
}

// Max relative error between tape and central-difference gradients of
// sum(w * f(leaves)) for a fixed random weighting w.
double op_grad_error(std::vector<Tensor> leaves, const std::function<Tensor(Tape&, std::vector<Tensor>&)>& f,
                     std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w;
  auto objective = [&](Tape& tape) {
    Tensor out = f(tape, leaves);
    if (w.empty()) w = normals(rng, out.size());
    return tape.sum(tape.mul(out, Tensor::constant(out.shape(), w)));
  };
  {
    Tape tape;
    tape.backward(objective(tape));
  }
  double worst = 0.0;
  const double h = 1e-6;
  for (auto& leaf : leaves) {
    auto values = leaf.mutable_values();
    std::vector<double> g(leaf.grad().begin(), leaf.grad().end());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + h;
      double up;
      {
        auto t = Tape::inference();
        up = objective(t).item();
      }
      values[i] = keep - h;
      double down;
      {
        auto t = Tape::inference();
        down = objective(t).item();
      }
      values[i] = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

Tensor param(Rng& rng, Shape shape, double offset = 0.0) {
  return Tensor::parameter(shape, normals(rng, diffmath::shape_size(shape), offset));
}

}  // namespace

TEST_CASE("every primitive matches central differences") {
  Rng rng(7);
  using Leaves = std::vector<Tensor>;
  const double tol = 1e-7;
  CHECK(op_grad_error({param(rng, {3, 4}), param(rng, {3, 4})},
                      [](Tape& t, Leaves& l) { return t.add(l[0], l[1]); }, 1) < tol);
  CHECK(op_grad_error({param(rng, {3, 4}), param(rng, {4})},
                      [](Tape& t, Leaves& l) { return t.sub(l[0], l[1]); }, 2) < tol);
  CHECK(op_grad_error({param(rng, {5}), param(rng, {5})},
                      [](Tape& t, Leaves& l) { return t.mul(l[0], l[1]); }, 3) < tol);
  CHECK(op_grad_error({param(rng, {5})}, [](Tape& t, Leaves& l) { return t.exp(t.scale(l[0], 0.5)); }, 4) < tol);
  CHECK(op_grad_error({param(rng, {5}, 6.0)}, [](Tape& t, Leaves& l) { return t.log(l[0]); }, 5) < tol);
  CHECK(op_grad_error({param(rng, {5})}, [](Tape& t, Leaves& l) { return t.tanh(l[0]); }, 6) < tol);
  CHECK(op_grad_error({param(rng, {5})}, [](Tape& t, Leaves& l) { return t.sigmoid(l[0]); }, 7) < tol);
  CHECK(op_grad_error({param(rng, {5})}, [](Tape& t, Leaves& l) { return t.log_sigmoid(t.scale(l[0], 3)); }, 8) <
        tol);
  CHECK(op_grad_error({param(rng, {3, 4}), param(rng, {4, 2})},
                      [](Tape& t, Leaves& l) { return t.matmul(l[0], l[1]); }, 9) < tol);
  CHECK(op_grad_error({param(rng, {3, 6})}, [](Tape& t, Leaves& l) { return t.softmax(l[0]); }, 10) < tol);
  CHECK(op_grad_error({param(rng, {3, 6})}, [](Tape& t, Leaves& l) { return t.log_softmax(l[0]); }, 11) < tol);
  CHECK(op_grad_error({param(rng, {5, 3})}, [](Tape& t, Leaves& l) { return t.causal_mean(l[0]); }, 12) < tol);
  CHECK(op_grad_error({param(rng, {4, 3})},
                      [](Tape& t, Leaves& l) {
                        const std::vector<int> ids{2, 0, 2, 3};
                        return t.gather_rows(l[0], ids);
                      },
                      13) < tol);
  CHECK(op_grad_error({param(rng, {4, 3})},
                      [](Tape& t, Leaves& l) {
                        const std::vector<std::size_t> r{0, 3, 3}, c{2, 1, 1};
                        return t.gather(l[0], r, c);
                      },
                      14) < tol);
  CHECK(op_grad_error({param(rng, {4}), param(rng, {4})},
                      [](Tape& t, Leaves& l) { return t.minimum(l[0], l[1]); }, 15) < tol);
  CHECK(op_grad_error({param(rng, {6})},
                      [](Tape& t, Leaves& l) {
                        std::vector<Tensor> s{t.mean(l[0]), t.sum(l[0])};
                        return t.stack(s);
                      },
                      16) < tol);
}

TEST_CASE("clip passes gradient only inside the interval") {
  auto x = Tensor::parameter({4}, {-2.0, 0.8, 1.2, 3.0});
  Tape tape;
  tape.backward(tape.sum(tape.clip(x, 0.8, 1.2)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 1.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("minimum routes ties to the first operand") {
  auto a = Tensor::parameter({1}, {2.0});
  auto b = Tensor::parameter({1}, {2.0});
  Tape tape;
  tape.backward(tape.sum(tape.minimum(a, b)));
  CHECK(a.grad()[0] == 1.0);
  CHECK((!b.has_grad() || b.grad()[0] == 0.0));
}

TEST_CASE("softmax rows sum to one and log_softmax is stable") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = Tensor::constant({4, 9}, normals(rng, 36));
    auto tape = Tape::inference();
    auto s = tape.softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 9; ++c) sum += s[r * 9 + c];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  auto big = Tensor::constant({1, 3}, {1000.0, 1001.0, 999.0});
  auto tape = Tape::inference();
  auto ls = tape.log_softmax(big);
  for (double v : ls.values()) CHECK(std::isfinite(v));
  CHECK(ls[1] > ls[0]);
}

TEST_CASE("a second backward doubles leaf gradients") {
  auto w = Tensor::parameter({3}, {0.5, -1.0, 2.0});
  Tape tape;
  auto y = tape.sum(tape.mul(tape.tanh(w), w));
  tape.backward(y);
  std::vector<double> once(w.grad().begin(), w.grad().end());
  tape.backward(y);
  for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == doctest::Approx(2 * once[i]).epsilon(1e-15));
}

TEST_CASE("shape and domain errors are reported") {
  Tape tape;
  auto a = Tensor::constant({2, 3}, std::vector<double>(6, 1.0));
  auto b = Tensor::constant({2, 2}, std::vector<double>(4, 1.0));
  CHECK_THROWS_AS(tape.add(a, b), diffmath::ShapeError);
  CHECK_THROWS_AS(tape.matmul(a, a), diffmath::ShapeError);
  CHECK_THROWS_AS(tape.backward(a), diffmath::ShapeError);
  CHECK_THROWS_AS(tape.log(Tensor::constant({1}, {0.0})), diffmath::DomainError);
  CHECK_THROWS_AS(Tensor::constant({2}, {1.0}), diffmath::ShapeError);
}

TEST_CASE("inference tape computes identical values without recording") {
  Rng rng(11);
  auto x = Tensor::parameter({3, 5}, normals(rng, 15));
  Tape rec;
  auto inf = Tape::inference();
  auto a = rec.log_softmax(rec.causal_mean(x));
  auto b = inf.log_softmax(inf.causal_mean(x));
  CHECK(inf.size() == 0);
  for (std::size_t i = 0; i < 15; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("AdamW first step matches the closed form") {
  auto p = Tensor::parameter({2}, {1.0, -2.0});
  p.mutable_grad()[0] = 0.5;
  p.mutable_grad()[1] = -3.0;
  diffmath::OptimizerState state({0.1, 0.9, 0.999, 1e-8, 0.01});
  std::vector<Tensor> params{p};
  diffmath::adamw_step(params, state);
  // Bias-corrected moments give m_hat = g and v_hat = g^2 on step one.
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.01 * 1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(-2.0 - 0.1 * 0.01 * -2.0 + 0.1 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));
  CHECK(p.grad()[0] == 0.0);
  CHECK(state.step == 1);
}

TEST_CASE("AdamW minimizes a quadratic") {
  auto p = Tensor::parameter({3}, {3.0, -1.0, 0.5});
  diffmath::OptimizerState state({0.05, 0.9, 0.999, 1e-8, 0.0});
  std::vector<Tensor> params{p};
  for (int step = 0; step < 2000; ++step) {
    Tape tape;
    auto target = Tensor::constant({3}, {1.0, 2.0, -1.0});
    auto d = tape.sub(p, target);
    tape.backward(tape.sum(tape.mul(d, d)));
    diffmath::adamw_step(params, state);
  }
  CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(p[1] == doctest::Approx(2.0).epsilon(1e-3));
  CHECK(p[2] == doctest::Approx(-1.0).epsilon(1e-3));
}

TEST_CASE("AdamW refuses parameters without gradients") {
  auto p = Tensor::parameter({1}, {1.0});
  diffmath::OptimizerState state;
  std::vector<Tensor> params{p};
  CHECK_THROWS_AS(diffmath::adamw_step(params, state), std::logic_error);
}

TEST_CASE("grad_norm is the global L2 norm") {
  auto a = Tensor::parameter({2}, {0.0, 0.0});
  auto b = Tensor::parameter({1}, {0.0});
  a.mutable_grad()[0] = 3.0;
  b.mutable_grad()[0] = 4.0;
  std::vector<Tensor> ps{a, b};
  CHECK(diffmath::grad_norm(ps) == doctest::Approx(5.0));
}

TEST_CASE("derived seeds are stable and domain separated") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
  auto a = stream_rng(9, Stream::rollout, {1, 2});
  auto b = stream_rng(9, Stream::rollout, {1, 2});
  auto c = stream_rng(9, Stream::eval, {1, 2});
  const double x = a.uniform();
  CHECK(x == b.uniform());
  CHECK(x != c.uniform());
  Rng r(5);
  for (int i = 0; i < 1000; ++i) {
    const auto k = r.integer(-2, 3);
    CHECK(k >= -2);
    CHECK(k <= 3);
  }
}
