#include <cmath>
#include <limits>
#include <vector>

#include "speedmode/error.hpp"
#include "speedmode/nn/optim.hpp"
#include "unit/support.hpp"

using namespace speedmode;
using namespace speedmode::nn;

TEST_CASE("AdamW fixed points") {
  std::vector<float> p{1.0f, -2.0f};
  const std::vector<float> g{0.0f, 0.0f};
  AdamState st;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_step<float>(p, g, st, cfg);
  CHECK(p == std::vector<float>{1.0f, -2.0f});

  std::vector<double> q{0.5};
  const std::vector<double> one{1.0};
  AdamState s2;
  cfg.lr = 1e-3;
  adamw_step<double>(q, one, s2, cfg);
  CHECK(q[0] - 0.5 == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("AdamW on a quadratic matches a scalar reference") {
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.01;
  std::vector<double> w{1.0};
  AdamState st;
  double rw = 1.0, m = 0, v = 0;
  double prev = 1.0;
  for (int t = 1; t <= 10; ++t) {
    const std::vector<double> g{2.0 * w[0]};
    adamw_step<double>(w, g, st, cfg);
    const double rg = 2.0 * rw;
    m = cfg.beta1 * m + (1 - cfg.beta1) * rg;
    v = cfg.beta2 * v + (1 - cfg.beta2) * rg * rg;
    const double mh = m / (1 - std::pow(cfg.beta1, t)), vh = v / (1 - std::pow(cfg.beta2, t));
    rw = rw * (1 - cfg.lr * cfg.weight_decay) - cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    CHECK(std::abs(w[0] - rw) <= 1e-10);
    CHECK(std::abs(w[0]) < prev);
    prev = std::abs(w[0]);
  }
  CHECK(st.step == 10);
}

TEST_CASE("AdamW refuses non-finite gradients without side effects") {
  std::vector<float> p{1.0f};
  const std::vector<float> g{std::numeric_limits<float>::quiet_NaN()};
  AdamState st;
  CHECK_THROWS_AS(adamw_step<float>(p, g, st, {}), NumericError);
  CHECK(p[0] == 1.0f);
  CHECK(st.step == 0);
}

TEST_CASE("gradient clipping") {
  std::vector<double> a{3.0, 4.0}, b{0.0};
  std::vector<std::span<double>> spans{a, b};
  CHECK(clip_gradients<double>(spans, 10.0) == doctest::Approx(5.0));
  CHECK(a == std::vector<double>{3.0, 4.0});

  std::vector<double> c{6.0, 8.0};
  std::vector<std::span<double>> one{c};
  CHECK(clip_gradients<double>(one, 1.0) == doctest::Approx(10.0));
  CHECK(global_norm<double>(one) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> x{1, 2, 3}, y{4, 5}, z{6};
  std::vector<std::span<double>> multi{x, y, z};
  clip_gradients<double>(multi, 2.5);
  CHECK(std::abs(global_norm<double>(multi) - 2.5) <= 1e-9);
}
