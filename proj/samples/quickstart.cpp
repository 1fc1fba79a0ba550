// Selects covariates for a simulated additive regression and prints the fitted model.

#include <iostream>

#include "dcorsel/dcorsel.hpp"

int main() {
  using namespace dcorsel;

  // Y = log(4 + sin(3 Z1) + sin(Z2) + Z3^2 + Z4 + 0.1 e) with four noise candidates.
  const auto split = generate(ScenarioSpec::defaults(ScenarioId::YR2), 2024);

  SelectorConfig cfg;
  cfg.seed = 2024;
  const auto result = run_selection(split.train, cfg);

  const auto summary = report::selection_summary(result, split.train, cfg);
  std::cout << report::model_report(summary) << '\n';

  for (const auto& row : result.state.trace)
    if (row.iteration == 1) std::cout << row.candidate << "  dcor " << report::fixed(row.dcor, 4) << "  p " << report::fixed(row.p_value, 3) << '\n';

  const auto pred = result.model.predict(split.test);
  std::cout << "\ntest RMSPE: " << report::fixed(rmspe(split.test.response_values(), pred), 4) << '\n';
}
