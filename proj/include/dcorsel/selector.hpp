#pragma once

// Forward selection driven by distance-correlation screening of the current
// residuals and gated by a nested-model acceptance test.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcorsel/additive.hpp"
#include "dcorsel/covariate.hpp"
#include "dcorsel/dcor.hpp"
#include "dcorsel/random.hpp"

namespace dcorsel {

struct SelectorConfig {
  double alpha_screen = kDefaultAlpha;
  double alpha_model = kDefaultModelAlpha;
  std::size_t n_perm = kDefaultPermutations;
  Catalog catalog = Catalog::linear_or_smooth;
  /// Maximum number of accepted updates; 0 means the number of candidates.
  std::size_t max_iterations = 0;
  std::uint64_t seed = 0;
  std::size_t memory_budget = kDefaultMemoryBudget;
  /// Tile edge for blockwise dCor; 0 lets the memory budget decide.
  std::size_t block_size = 0;
  double smooth_df = kDefaultSmoothDf;
  std::size_t fpca_k = kDefaultFpcaComponents;

  void validate() const {
    auto fail = [](const std::string& flag, const std::string& why) {
      throw std::invalid_argument(flag + ": " + why);
    };
    if (!(alpha_screen > 0.0 && alpha_screen < 1.0)) fail("alpha_screen", "must lie in (0,1)");
    if (!(alpha_model > 0.0 && alpha_model < 1.0)) fail("alpha_model", "must lie in (0,1)");
    if (n_perm == 0) fail("n_perm", "must be positive");
    if (memory_budget == 0) fail("memory_budget", "must be positive");
    if (!(smooth_df >= 2.0)) fail("smooth_df", "must be at least 2");
    if (fpca_k == 0) fail("fpca_k", "must be positive");
  }
};

/// One candidate screened in one round.
struct TraceRow {
  std::size_t iteration = 0;
  std::string candidate;
  double dcor = 0.0;
  double p_value = 1.0;
  double filtered = 0.0;
};

/// One attempted model update.
struct StepRecord {
  std::size_t iteration = 0;
  std::string candidate;
  TermSpec spec;
  bool accepted = false;
  Comparison test;
  std::optional<Comparison> form_test;
  double deviance_explained = 0.0;
  std::vector<std::string> flags;
};

struct SelectionState {
  /// Accepted covariates with their forms, in order of entry.
  std::vector<TermSpec> accepted;
  std::vector<std::string> remaining;
  std::vector<std::string> rejected;
  std::vector<double> residuals;
  AdditiveModel model;
  /// Number of screening rounds performed.
  std::size_t iteration = 0;
  std::vector<TraceRow> trace;
  std::vector<StepRecord> steps;
  std::string stop_reason;

  std::vector<std::string> selection_order() const {
    std::vector<std::string> out;
    for (const auto& t : accepted) out.push_back(t.covariate);
    return out;
  }
};

struct SelectionResult {
  AdditiveModel model;
  SelectionState state;
};

namespace detail {

/// What the candidates are screened against: the response itself before any
/// covariate enters a classification model, the residuals otherwise.
inline Covariate screening_target(const Dataset& data, const SelectionState& s) {
  if (data.is_classification() && s.accepted.empty()) return data.response();
  return Covariate::scalar("residuals", s.residuals);
}

inline TestOptions test_options(const SelectorConfig& cfg, std::uint64_t seed) {
  TestOptions opt;
  opt.n_perm = cfg.n_perm;
  opt.seed = seed;
  opt.alpha = cfg.alpha_screen;
  opt.memory_budget = cfg.memory_budget;
  opt.block_size = cfg.block_size;
  return opt;
}

}  // namespace detail

inline SelectionResult run_selection(const Dataset& data, const SelectorConfig& cfg) {
  cfg.validate();
  if (data.size() < 10) throw std::invalid_argument("run_selection: need at least 10 observations");
  if (data.candidates().empty()) throw std::invalid_argument("run_selection: no candidates");

  const Link link = data.is_classification() ? Link::logit : Link::identity;
  ContributionOptions copt;
  copt.alpha_model = cfg.alpha_model;
  copt.smooth_df = cfg.smooth_df;
  copt.fpca_k = cfg.fpca_k;
  const std::size_t max_updates = cfg.max_iterations ? cfg.max_iterations : data.candidates().size();

  SelectionState s;
  for (const auto& c : data.candidates()) s.remaining.push_back(c.name());
  s.model = fit_additive(data, {}, link);
  s.residuals = s.model.residuals;

  // Half of the budget holds cached candidate matrices across rounds, half serves each screening pass.
  DistanceCache cache(cfg.memory_budget / 2);
  SelectorConfig screen_cfg = cfg;
  screen_cfg.memory_budget = cfg.memory_budget - cfg.memory_budget / 2;
  while (true) {
    if (s.remaining.empty()) {
      s.stop_reason = "no candidates left";
      break;
    }
    if (s.accepted.size() >= max_updates) {
      s.stop_reason = "iteration limit reached";
      break;
    }
    ++s.iteration;
    const Covariate target = detail::screening_target(data, s);
    std::vector<const Covariate*> pool;
    for (const auto& name : s.remaining) pool.push_back(&data.candidate(name));
    const auto rows = screen_candidates(
        target, pool, detail::test_options(screen_cfg, substream_seed(cfg.seed, "screen", s.iteration)), &cache);

    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      s.trace.push_back({s.iteration, rows[j].name, rows[j].dcor, rows[j].p_value, rows[j].filtered});
      if (rows[j].p_value <= cfg.alpha_screen && rows[j].dcor > 0.0) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rows[a].dcor > rows[b].dcor; });
    if (order.empty()) {
      s.stop_reason = "no candidate is dependent on the residuals";
      break;
    }

    bool updated = false;
    for (std::size_t j : order) {
      const std::string name = rows[j].name;
      auto choice = choose_contribution(data, s.model, data.candidate(name), cfg.catalog, copt);
      StepRecord step;
      step.iteration = s.iteration;
      step.candidate = name;
      step.spec = choice.spec;
      step.accepted = choice.accepted;
      step.test = choice.test;
      step.form_test = choice.form_test;
      step.deviance_explained = choice.best.deviance_explained;
      step.flags = choice.best.flags;
      s.steps.push_back(std::move(step));
      s.remaining.erase(std::find(s.remaining.begin(), s.remaining.end(), name));
      if (choice.accepted) {
        s.accepted.push_back(choice.spec);
        s.model = std::move(choice.best);
        s.residuals = s.model.residuals;
        updated = true;
        break;
      }
      s.rejected.push_back(name);
    }
    if (!updated) {
      s.stop_reason = "no dependent candidate improved the model";
      break;
    }
  }
  return {s.model, std::move(s)};
}

struct SaturationRow {
  std::string name;
  double dcor = 0.0;
  double p_value = 1.0;
};

/// Independence test of every accepted covariate against the current residuals.
inline std::vector<SaturationRow> diagnose_saturation(const SelectionState& state, const Dataset& data,
                                                      const SelectorConfig& cfg) {
  if (state.accepted.empty()) throw std::invalid_argument("diagnose_saturation: no accepted covariates");
  const Covariate target = Covariate::scalar("residuals", state.residuals);
  std::vector<const Covariate*> pool;
  for (const auto& t : state.accepted) pool.push_back(&data.candidate(t.covariate));
  const auto rows =
      screen_candidates(target, pool, detail::test_options(cfg, substream_seed(cfg.seed, "saturation", 0)));
  std::vector<SaturationRow> out;
  for (const auto& r : rows) out.push_back({r.name, r.dcor, r.p_value});
  return out;
}

}  // namespace dcorsel
