#pragma once

// Text reports, CSV tables and JSON run summaries.

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcorsel/csv_io.hpp"
#include "dcorsel/scenarios.hpp"
#include "dcorsel/selector.hpp"

namespace dcorsel::report {

inline constexpr int kSummarySchemaVersion = 1;

using io::json;

inline std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  std::string s(buf);
  if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);  // no "-0.000"
  return s;
}

inline std::string pad(const std::string& s, std::size_t width, bool right = false) {
  if (s.size() >= width) return s;
  return right ? std::string(width - s.size(), ' ') + s : s + std::string(width - s.size(), ' ');
}

inline json config_json(const SelectorConfig& cfg) {
  return {{"alpha_screen", cfg.alpha_screen}, {"alpha_model", cfg.alpha_model},
          {"n_perm", cfg.n_perm},             {"catalog", std::string(to_string(cfg.catalog))},
          {"max_iterations", cfg.max_iterations}, {"seed", cfg.seed},
          {"memory_budget", cfg.memory_budget}, {"block_size", cfg.block_size},
          {"smooth_df", cfg.smooth_df},       {"fpca_k", cfg.fpca_k}};
}

/// sqrt(deviance / residual df) for an identity-link model, 0 otherwise.
inline double residual_sd(const AdditiveModel& m) {
  if (m.link != Link::identity) return 0.0;
  const double df = static_cast<double>(m.size()) - m.edf;
  return df > 0.0 ? std::sqrt(m.deviance / df) : 0.0;
}

inline const StepRecord* accepting_step(const SelectionState& s, const std::string& name) {
  for (const auto& step : s.steps)
    if (step.accepted && step.candidate == name) return &step;
  return nullptr;
}

inline json selection_summary(const SelectionResult& r, const Dataset& data, const SelectorConfig& cfg) {
  const auto& m = r.model;
  json terms = json::array();
  for (const auto& t : m.terms) {
    json row = {{"covariate", t.spec.covariate}, {"form", t.spec.describe()}, {"edf", t.edf}};
    if (const auto* step = accepting_step(r.state, t.spec.covariate)) {
      row["iteration"] = step->iteration;
      row["statistic"] = step->test.statistic;
      row["p_value"] = step->test.p_value;
      row["df_numerator"] = step->test.df_numerator;
      row["df_denominator"] = step->test.df_denominator;
    }
    terms.push_back(row);
  }
  json trace = json::array();
  for (const auto& t : r.state.trace)
    trace.push_back({{"iteration", t.iteration}, {"candidate", t.candidate}, {"dcor", t.dcor},
                     {"p_value", t.p_value}, {"filtered", t.filtered}});
  json steps = json::array();
  for (const auto& s : r.state.steps)
    steps.push_back({{"iteration", s.iteration}, {"candidate", s.candidate}, {"form", s.spec.describe()},
                     {"accepted", s.accepted}, {"statistic", s.test.statistic}, {"p_value", s.test.p_value}});
  return {{"schema_version", kSummarySchemaVersion},
          {"kind", "selection"},
          {"seed", cfg.seed},
          {"config", config_json(cfg)},
          {"response", data.response().name()},
          {"link", std::string(to_string(m.link))},
          {"n", data.size()},
          {"candidates", data.candidates().size()},
          {"rounds", r.state.iteration},
          {"stop_reason", r.state.stop_reason},
          {"selected", r.state.selection_order()},
          {"rejected", r.state.rejected},
          {"intercept", m.intercept},
          {"edf", m.edf},
          {"deviance", m.deviance},
          {"deviance_explained", m.deviance_explained},
          {"residual_sd", residual_sd(m)},
          {"flags", m.flags},
          {"terms", terms},
          {"steps", steps},
          {"trace", trace}};
}

inline std::string row_label(const ScenarioSpec& spec, const SelectorConfig& cfg) {
  return std::string(to_string(spec.id)) + "-" + (cfg.catalog == Catalog::linear_only ? "LM" : "AM");
}

inline json bench_summary(const BenchResult& b) {
  json reps = json::array();
  for (std::size_t r = 0; r < b.replications.size(); ++r) {
    const auto& rr = b.replications[r];
    json row = {{"index", r}, {"seed", rr.seed}, {"ok", rr.ok}, {"selected", rr.selected}, {"rmspe", rr.rmspe}};
    if (b.spec.id == ScenarioId::CLASS_CROWN) row["misclassification"] = rr.misclassification;
    if (!rr.ok) row["error"] = rr.error;
    reps.push_back(row);
  }
  json out = {{"schema_version", kSummarySchemaVersion},
              {"kind", "benchmark"},
              {"seed", b.config.seed},
              {"label", row_label(b.spec, b.config)},
              {"scenario",
               {{"id", std::string(to_string(b.spec.id))},
                {"replications", b.spec.replications},
                {"n_train", b.spec.n_train},
                {"n_test", b.spec.n_test},
                {"theta", b.spec.theta},
                {"a", b.spec.a},
                {"p", b.spec.p},
                {"sigma", b.spec.sigma}}},
              {"config", config_json(b.config)},
              {"candidates", b.candidates},
              {"frequency", b.frequency},
              {"mean_rmspe", b.mean_rmspe},
              {"failures", b.failures}};
  if (b.spec.id == ScenarioId::CLASS_CROWN) out["mean_misclassification"] = b.mean_misclassification;
  out["replications"] = reps;
  return out;
}

/// Trace of every screening round: one row per (round, candidate).
inline std::string trace_csv(const SelectionState& s, std::uint64_t seed) {
  std::ostringstream os;
  os << "seed,iteration,candidate,dcor,p_value,filtered_dcor\n";
  for (const auto& t : s.trace)
    os << seed << ',' << t.iteration << ',' << io::quote_csv(t.candidate) << ',' << io::format_double(t.dcor)
       << ',' << io::format_double(t.p_value) << ',' << io::format_double(t.filtered) << '\n';
  return os.str();
}

inline std::string model_report(const json& summary) {
  std::ostringstream os;
  os << "dcorsel model report\n";
  os << "seed: " << summary.at("seed").get<std::uint64_t>() << '\n';
  const auto& cfg = summary.at("config");
  os << "response: " << summary.at("response").get<std::string>() << " (" << summary.at("link").get<std::string>()
     << " link), N = " << summary.at("n").get<std::size_t>() << ", candidates = "
     << summary.at("candidates").get<std::size_t>() << '\n';
  os << "catalog: " << cfg.at("catalog").get<std::string>() << ", alpha_screen "
     << fixed(cfg.at("alpha_screen").get<double>(), 3) << ", alpha_model "
     << fixed(cfg.at("alpha_model").get<double>(), 3) << ", permutations " << cfg.at("n_perm").get<std::size_t>()
     << '\n';
  os << "screening rounds: " << summary.at("rounds").get<std::size_t>() << " (stopped: "
     << summary.at("stop_reason").get<std::string>() << ")\n\n";

  const auto& terms = summary.at("terms");
  if (terms.empty()) {
    os << "null model: no candidate entered; the fit is the intercept only\n";
  } else {
    os << pad("step", 6) << pad("covariate", 14) << pad("form", 24) << pad("edf", 9, true)
       << pad("statistic", 12, true) << pad("p-value", 10, true) << '\n';
    std::size_t k = 0;
    for (const auto& t : terms) {
      os << pad(std::to_string(++k), 6) << pad(t.at("covariate").get<std::string>(), 14)
         << pad(t.at("form").get<std::string>(), 24) << pad(fixed(t.at("edf").get<double>(), 2), 9, true);
      if (t.contains("statistic"))
        os << pad(fixed(t.at("statistic").get<double>(), 3), 12, true)
           << pad(fixed(t.at("p_value").get<double>(), 4), 10, true);
      os << '\n';
    }
  }
  os << '\n';
  os << "intercept: " << fixed(summary.at("intercept").get<double>(), 6) << '\n';
  os << "model edf: " << fixed(summary.at("edf").get<double>(), 3) << '\n';
  os << "deviance explained: " << fixed(summary.at("deviance_explained").get<double>(), 4) << '\n';
  if (summary.at("link").get<std::string>() == "identity")
    os << "residual sd: " << fixed(summary.at("residual_sd").get<double>(), 4) << '\n';
  const auto& rejected = summary.at("rejected");
  if (!rejected.empty()) {
    os << "dependent but rejected by the model test:";
    for (const auto& r : rejected) os << ' ' << r.get<std::string>();
    os << '\n';
  }
  for (const auto& f : summary.at("flags")) os << "note: " << f.get<std::string>() << '\n';
  return os.str();
}

inline void check_summary(const json& s) {
  if (!s.is_object() || !s.contains("schema_version"))
    throw std::runtime_error("summary has no schema_version; it was not written by dcorsel");
  if (!s.at("schema_version").is_number_integer() || s.at("schema_version").get<int>() != kSummarySchemaVersion)
    throw std::runtime_error("summary schema_version " + s.at("schema_version").dump() +
                             " is not supported (expected " + std::to_string(kSummarySchemaVersion) + ")");
  if (!s.contains("kind")) throw std::runtime_error("summary has no kind");
}

/// Selection frequencies in one row per benchmark, candidates as columns, then RMSPE.
inline std::string bench_table(const json& s) {
  const auto& names = s.at("candidates");
  const auto& freq = s.at("frequency");
  const bool cls = s.contains("mean_misclassification");
  std::size_t label_w = std::max<std::size_t>(10, s.at("label").get<std::string>().size() + 2);
  std::ostringstream os;
  os << "seed " << s.at("seed").get<std::uint64_t>() << ", B = "
     << s.at("scenario").at("replications").get<std::size_t>() << ", failures "
     << s.at("failures").get<std::size_t>() << '\n';
  os << pad("", label_w);
  for (const auto& n : names) os << pad(n.get<std::string>(), 7, true);
  os << pad("RMSPE", 9, true);
  if (cls) os << pad("Misclass", 10, true);
  os << '\n' << pad(s.at("label").get<std::string>(), label_w);
  for (const auto& f : freq) os << pad(fixed(f.get<double>(), 3), 7, true);
  os << pad(fixed(s.at("mean_rmspe").get<double>(), 3), 9, true);
  if (cls) os << pad(fixed(s.at("mean_misclassification").get<double>(), 4), 10, true);
  os << '\n';
  return os.str();
}

inline std::string bench_csv(const json& s) {
  std::ostringstream os;
  const bool cls = s.contains("mean_misclassification");
  os << "label,seed,B";
  for (const auto& n : s.at("candidates")) os << ',' << io::quote_csv(n.get<std::string>());
  os << ",RMSPE";
  if (cls) os << ",misclassification";
  os << ",failures\n";
  os << io::quote_csv(s.at("label").get<std::string>()) << ',' << s.at("seed").get<std::uint64_t>() << ','
     << s.at("scenario").at("replications").get<std::size_t>();
  for (const auto& f : s.at("frequency")) os << ',' << io::format_double(f.get<double>());
  os << ',' << io::format_double(s.at("mean_rmspe").get<double>());
  if (cls) os << ',' << io::format_double(s.at("mean_misclassification").get<double>());
  os << ',' << s.at("failures").get<std::size_t>() << '\n';
  return os.str();
}

inline std::string selection_csv(const json& s) {
  std::ostringstream os;
  os << "seed,step,covariate,form,edf,statistic,p_value\n";
  std::size_t k = 0;
  for (const auto& t : s.at("terms")) {
    os << s.at("seed").get<std::uint64_t>() << ',' << ++k << ',' << io::quote_csv(t.at("covariate").get<std::string>())
       << ',' << io::quote_csv(t.at("form").get<std::string>()) << ',' << io::format_double(t.at("edf").get<double>());
    if (t.contains("statistic"))
      os << ',' << io::format_double(t.at("statistic").get<double>()) << ','
         << io::format_double(t.at("p_value").get<double>());
    else
      os << ",,";
    os << '\n';
  }
  return os.str();
}

/// Human-readable table for any summary written by this library.
inline std::string render_table(const json& s) {
  check_summary(s);
  const auto kind = s.at("kind").get<std::string>();
  if (kind == "benchmark") return bench_table(s);
  if (kind == "selection") return model_report(s);
  throw std::runtime_error("unknown summary kind '" + kind + "'");
}

inline std::string render_csv(const json& s) {
  check_summary(s);
  const auto kind = s.at("kind").get<std::string>();
  if (kind == "benchmark") return bench_csv(s);
  if (kind == "selection") return selection_csv(s);
  throw std::runtime_error("unknown summary kind '" + kind + "'");
}

}  // namespace dcorsel::report
