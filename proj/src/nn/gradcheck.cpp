#include "speedmode/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "speedmode/nn/ops.hpp"
#include "speedmode/util.hpp"

namespace speedmode::nn {
namespace {

struct Evaluation {
  Tape<double> tape;
  std::vector<Var> leaves;
  Var loss;
};

void evaluate(Evaluation& ev, const Fragment& fragment, const std::vector<GradInput>& inputs,
              std::optional<Tensor<double>>& projection, std::uint64_t seed) {
  ev.leaves.clear();
  for (const auto& in : inputs) ev.leaves.push_back(ev.tape.leaf(in.value, in.differentiable));
  Var out = fragment(ev.tape, ev.leaves);
  if (!projection) {
    Rng rng(seed);
    Tensor<double> r(ev.tape.shape(out));
    for (auto& v : r.values()) v = rng.normal();
    projection = std::move(r);
  }
  ev.loss = dot_constant(ev.tape, out, *projection);
}

double loss_at(const Fragment& fragment, const std::vector<GradInput>& inputs,
               std::optional<Tensor<double>>& projection, std::uint64_t seed) {
  Evaluation ev;
  evaluate(ev, fragment, inputs, projection, seed);
  return ev.tape.value(ev.loss)[0];
}

}  // namespace

GradCheckResult gradient_check(const Fragment& fragment, const std::vector<GradInput>& inputs,
                               const GradCheckOptions& options) {
  std::optional<Tensor<double>> projection;
  Evaluation base;
  evaluate(base, fragment, inputs, projection, options.seed);
  base.tape.backward(base.loss);

  GradCheckResult result;
  std::vector<GradInput> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].differentiable) continue;
    const Tensor<double> analytic = base.tape.has_grad(base.leaves[k])
                                        ? base.tape.grad(base.leaves[k])
                                        : Tensor<double>(inputs[k].value.shape());
    for (std::size_t i = 0; i < inputs[k].value.size(); ++i) {
      const double x0 = inputs[k].value[i];
      probe[k].value[i] = x0 + options.step;
      const double up = loss_at(fragment, probe, projection, options.seed);
      probe[k].value[i] = x0 - options.step;
      const double down = loss_at(fragment, probe, projection, options.seed);
      probe[k].value[i] = x0;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || result.checked == 1) {
        result.max_rel_error = rel;
        result.worst_input = inputs[k].name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace speedmode::nn
