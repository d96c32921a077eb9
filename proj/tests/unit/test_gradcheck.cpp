#include "gradcheck_cases.hpp"
#include "unit/support.hpp"

using namespace speedmode;
using namespace speedmode::nn;

TEST_CASE("analytic gradients of every primitive match finite differences") {
  for (auto& c : gradcases::primitive_cases(21)) {
    CAPTURE(c.name);
    const auto r = gradient_check(c.fragment, c.inputs);
    CAPTURE(r.worst_input);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error <= c.tolerance);
  }
}

TEST_CASE("tiny model gradients") {
  for (bool legacy : {false, true}) {
    auto c = gradcases::tiny_model_case(legacy, 5);
    CAPTURE(c.name);
    const auto r = gradient_check(c.fragment, c.inputs);
    CAPTURE(r.worst_input);
    CHECK(r.max_rel_error <= c.tolerance);
  }
}

TEST_CASE("the harness flags a wrong backward") {
  Fragment broken = [](Tape<double>& tape, std::span<const Var> v) {
    Tensor<double> y = tape.value(v[0]);
    for (auto& x : y.values()) x = x * x;
    const Var in = v[0];
    return tape.record(
        std::move(y), true,
        [in](Tape<double>& t, const Tensor<double>& g) {
          // Should be 2x; 3x is the planted bug.
          for (std::size_t i = 0; i < g.size(); ++i) t.grad(in)[i] += 3.0 * t.value(in)[i] * g[i];
        },
        "square");
  };
  std::mt19937_64 rng(1);
  const auto r = gradient_check(broken, {{"x", gradcases::normal({5}, rng)}});
  CHECK(r.max_rel_error > 0.1);
  CHECK(r.worst_input == "x");
}

TEST_CASE("non-differentiable inputs are not checked") {
  std::mt19937_64 rng(2);
  Fragment f = [](Tape<double>& t, std::span<const Var> v) { return nn::mul(t, v[0], v[1]); };
  const auto r = gradient_check(f, {{"a", gradcases::normal({3}, rng)}, {"b", gradcases::normal({3}, rng), false}});
  CHECK(r.checked == 3);
}
