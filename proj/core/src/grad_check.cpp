#include "saintplus/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "saintplus/errors.hpp"

namespace saintplus::tensor {

namespace {

struct Evaluation {
  double value;
  std::vector<std::uint8_t> pattern;
};

Evaluation evaluate(const ScalarFunction& f, std::span<const Tensor> inputs,
                    const GraphOptions& options) {
  Graph g(options);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.constant(t));
  const Var out = f(g, vars);
  if (out.size() != 1) throw ContractError("grad_check: function must be scalar-valued");
  return {out.value()[0], g.relu_pattern()};
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, std::span<const Tensor> inputs,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.per_input_max.assign(inputs.size(), 0.0);

  // Analytic pass.
  std::vector<std::vector<double>> analytic(inputs.size());
  std::vector<std::uint8_t> base_pattern;
  {
    Graph g(options.graph);
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.variable(t));
    const Var out = f(g, vars);
    base_pattern = g.relu_pattern();
    g.backward(out);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto grad = vars[i].grad();
      analytic[i] = grad.empty() ? std::vector<double>(inputs[i].size(), 0.0)
                                 : std::vector<double>(grad.begin(), grad.end());
    }
  }

  std::vector<Tensor> work(inputs.begin(), inputs.end());
  CounterRng rng(derive_key(options.sample_seed, 0x6772616463686bULL));
  const double h = options.step;
  for (std::size_t i = 0; i < work.size(); ++i) {
    std::vector<std::size_t> coords(work[i].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      for (std::size_t k = 0; k < options.max_coords_per_input; ++k)
        std::swap(coords[k], coords[k + rng.below(coords.size() - k)]);
      coords.resize(options.max_coords_per_input);
    }
    for (const auto c : coords) {
      const double original = work[i][c];
      work[i][c] = original + h;
      const auto plus = evaluate(f, work, options.graph);
      work[i][c] = original - h;
      const auto minus = evaluate(f, work, options.graph);
      work[i][c] = original;
      if (plus.pattern != base_pattern || minus.pattern != base_pattern) {
        ++report.excluded;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * h);
      const double a = analytic[i][c];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++report.checked;
      report.per_input_max[i] = std::max(report.per_input_max[i], err);
      if (err > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        report.worst_input = i;
        report.worst_index = c;
      }
    }
  }
  return report;
}

double grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double step) {
  GradCheckOptions options;
  options.step = step;
  const Tensor inputs[] = {x};
  return grad_check([&f](Graph& g, std::span<const Var> v) { return f(g, v[0]); }, inputs, options)
      .max_rel_error;
}

}  // namespace saintplus::tensor
