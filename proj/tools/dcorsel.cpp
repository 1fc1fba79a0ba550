#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dcorsel/dcorsel.hpp"

namespace fs = std::filesystem;
using namespace dcorsel;

namespace {

struct CommonFlags {
  int threads = 0;
  bool verbose = false;
  double alpha_screen = kDefaultAlpha;
  double alpha_model = kDefaultModelAlpha;
  std::size_t n_perm = kDefaultPermutations;
  std::string catalog = "linear_or_smooth";
  std::uint64_t seed = 0;
  std::size_t block_size = 0;
  std::string memory_budget = "1G";
  std::size_t max_iterations = 0;
};

std::size_t parse_bytes(const std::string& text) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    throw CLI::ValidationError("--memory-budget", "expected a byte count such as 268435456, 256M or 2G");
  }
  std::string unit = text.substr(pos);
  for (auto& c : unit) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (!unit.empty() && unit.back() == 'B') unit.pop_back();
  std::size_t mult = 1;
  if (unit == "K") mult = std::size_t{1} << 10;
  else if (unit == "M") mult = std::size_t{1} << 20;
  else if (unit == "G") mult = std::size_t{1} << 30;
  else if (!unit.empty()) throw CLI::ValidationError("--memory-budget", "unknown unit '" + text.substr(pos) + "'");
  if (v == 0) throw CLI::ValidationError("--memory-budget", "must be positive");
  return static_cast<std::size_t>(v) * mult;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool selector_flags) {
  cmd->add_option("--threads", f.threads, "Worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
  cmd->add_flag("-v,--verbose", f.verbose, "Progress messages on standard error");
  cmd->add_option("--seed", f.seed, "Master random seed");
  cmd->add_option("--n-perm", f.n_perm, "Permutations per independence test")->check(CLI::PositiveNumber);
  cmd->add_option("--block-size", f.block_size, "Tile edge L for blockwise dCor (0 = from the memory budget)");
  cmd->add_option("--memory-budget", f.memory_budget, "Memory budget for distance matrices (bytes, or K/M/G)");
  cmd->add_option("--alpha-screen", f.alpha_screen, "Level of the dCor independence test")
      ->check(CLI::Range(0.0, 1.0));
  if (!selector_flags) return;
  cmd->add_option("--alpha-model", f.alpha_model, "Level of the nested-model test")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--catalog", f.catalog, "Contribution catalog")
      ->check(CLI::IsMember({"linear_only", "linear_or_smooth"}));
  cmd->add_option("--max-iterations", f.max_iterations, "Maximum accepted updates (0 = number of candidates)");
}

bool given(const CLI::App* cmd, const char* flag) {
  const auto* opt = cmd->get_option_no_throw(flag);
  return opt && opt->count() > 0;
}

/// Defaults, then manifest config, then explicit flags.
SelectorConfig build_config(const CLI::App* cmd, const CommonFlags& f, const io::json& manifest_config = {}) {
  SelectorConfig cfg;
  if (!manifest_config.is_null()) io::apply_config(manifest_config, cfg);
  if (given(cmd, "--seed")) cfg.seed = f.seed;
  if (given(cmd, "--n-perm")) cfg.n_perm = f.n_perm;
  if (given(cmd, "--block-size")) cfg.block_size = f.block_size;
  if (given(cmd, "--memory-budget")) cfg.memory_budget = parse_bytes(f.memory_budget);
  if (given(cmd, "--alpha-screen")) cfg.alpha_screen = f.alpha_screen;
  if (given(cmd, "--alpha-model")) cfg.alpha_model = f.alpha_model;
  if (given(cmd, "--catalog")) cfg.catalog = parse_catalog(f.catalog);
  if (given(cmd, "--max-iterations")) cfg.max_iterations = f.max_iterations;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    std::string field = msg.substr(0, msg.find(':'));
    for (auto& c : field) c = c == '_' ? '-' : c;
    throw CLI::ValidationError("--" + field, msg.substr(msg.find(':') + 2));
  }
  return cfg;
}

void setup(const CommonFlags& f) {
  if (f.threads > 0) omp_set_num_threads(f.threads);
  auto log = spdlog::stderr_color_mt("dcorsel");
  spdlog::set_default_logger(log);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(f.verbose ? spdlog::level::info : spdlog::level::warn);
}

void write_file(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error(file.string() + ": cannot open for writing");
  out << text;
}

io::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error(file.string() + ": cannot open file");
  try {
    return io::json::parse(in);
  } catch (const io::json::parse_error& e) {
    throw std::runtime_error(file.string() + ": invalid JSON (" + e.what() + ")");
  }
}

int cmd_dcor(const CLI::App* cmd, const CommonFlags& f, const std::string& manifest_path,
             const std::vector<std::string>& xs, const std::string& y_name, bool all_pairs) {
  const auto manifest = io::load_manifest(manifest_path);
  const Dataset data = io::load_dataset(manifest);
  const SelectorConfig cfg = build_config(cmd, f, manifest.config);
  TestOptions opt;
  opt.n_perm = cfg.n_perm;
  opt.seed = cfg.seed;
  opt.alpha = cfg.alpha_screen;
  opt.memory_budget = cfg.memory_budget;
  opt.block_size = cfg.block_size;

  std::ostringstream os;
  os << "name,dcor,p_value,seed\n";
  if (all_pairs) {
    const auto& c = data.candidates();
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t j = i + 1; j < c.size(); ++j) {
        spdlog::info("testing {} ~ {}", c[i].name(), c[j].name());
        const auto r = independence_test(c[i], c[j], opt.n_perm, opt.seed, opt);
        os << io::quote_csv(c[i].name() + "~" + c[j].name()) << ',' << io::format_double(r.dcor) << ','
           << io::format_double(r.p_value.value_or(1.0)) << ',' << cfg.seed << '\n';
      }
  } else {
    const Covariate& target = y_name.empty() || y_name == data.response().name() ? data.response()
                                                                                 : data.candidate(y_name);
    std::vector<const Covariate*> pool;
    if (xs.empty()) {
      for (const auto& c : data.candidates())
        if (&c != &target) pool.push_back(&c);
    } else {
      for (const auto& x : xs) pool.push_back(&data.candidate(x));
    }
    for (const auto& row : screen_candidates(target, pool, opt))
      os << io::quote_csv(row.name) << ',' << io::format_double(row.dcor) << ',' << io::format_double(row.p_value)
         << ',' << cfg.seed << '\n';
  }
  std::cout << os.str();
  return 0;
}

int cmd_select(const CLI::App* cmd, const CommonFlags& f, const std::string& manifest_path, std::string out_dir,
               bool quiet) {
  const auto manifest = io::load_manifest(manifest_path);
  const Dataset data = io::load_dataset(manifest);
  const SelectorConfig cfg = build_config(cmd, f, manifest.config);
  fs::path out = out_dir;
  if (out.empty()) {
    out = manifest.output_dir.empty() ? fs::path("dcorsel_out") : fs::path(manifest.output_dir);
    if (!manifest.output_dir.empty() && out.is_relative()) out = fs::path(manifest_path).parent_path() / out;
  }
  fs::create_directories(out);

  spdlog::info("{} observations, {} candidates, seed {}", data.size(), data.candidates().size(), cfg.seed);
  const auto result = run_selection(data, cfg);
  const auto summary = report::selection_summary(result, data, cfg);
  const std::string text = report::model_report(summary);
  write_file(out / "report.txt", text);
  write_file(out / "trace.csv", report::trace_csv(result.state, cfg.seed));
  write_file(out / "summary.json", summary.dump(2) + "\n");
  spdlog::info("wrote {}", (out / "summary.json").string());
  if (!quiet) std::cout << text;
  return 0;
}

int cmd_bench(const CLI::App* cmd, const CommonFlags& f, const std::string& scenario, std::size_t b,
              const std::vector<double>& a, double theta, std::size_t n_train, std::size_t n_test, std::string out_dir,
              const std::string& export_dir) {
  ScenarioSpec spec = ScenarioSpec::defaults(parse_scenario(scenario));
  spec.replications = b;
  if (!a.empty()) {
    if (a.size() != 4) throw CLI::ValidationError("--a", "expects four comma-separated values");
    std::copy(a.begin(), a.end(), spec.a.begin());
  }
  if (given(cmd, "--theta")) spec.theta = theta;
  if (n_train) spec.n_train = n_train;
  if (n_test) spec.n_test = n_test;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw CLI::ValidationError("--scenario", e.what());
  }
  const SelectorConfig cfg = build_config(cmd, f);

  if (!export_dir.empty()) {
    const auto split = generate(spec, replication_seed(cfg.seed, 0));
    const auto path = io::write_dataset(split.train, export_dir, report::config_json(cfg));
    spdlog::info("exported replication 0 training data to {}", path.string());
  }

  spdlog::info("{}: {} replications, seed {}", scenario, b, cfg.seed);
  const auto result = run_benchmark(spec, cfg);
  for (const auto& rr : result.replications)
    if (!rr.ok) spdlog::warn("replication with seed {} failed: {}", rr.seed, rr.error);
  const auto summary = report::bench_summary(result);
  const std::string table = report::bench_table(summary);
  if (out_dir.empty()) out_dir = "bench_" + scenario;
  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "bench.csv", report::bench_csv(summary));
  write_file(fs::path(out_dir) / "table.txt", table);
  write_file(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
  std::cout << table;
  return 0;
}

int cmd_report(const std::string& summary_path, const std::string& csv_path) {
  const auto summary = read_json(summary_path);
  const std::string table = report::render_table(summary);
  const std::string csv = report::render_csv(summary);
  if (!csv_path.empty()) write_file(csv_path, csv);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distance-correlation guided forward selection of additive model covariates"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* dcor_cmd = app.add_subcommand("dcor", "Distance correlation and permutation p-values");
  std::string dcor_manifest, dcor_y;
  std::vector<std::string> dcor_x;
  bool all_pairs = false;
  dcor_cmd->add_option("manifest", dcor_manifest, "Dataset manifest (JSON)")->required();
  dcor_cmd->add_option("--x", dcor_x, "Covariates to test (default: all candidates)");
  dcor_cmd->add_option("--y", dcor_y, "Covariate to test against (default: the response)");
  dcor_cmd->add_flag("--all-pairs", all_pairs, "Test every pair of candidates");
  add_common(dcor_cmd, flags, false);

  auto* select_cmd = app.add_subcommand("select", "Run the forward selection on a dataset");
  std::string select_manifest, select_out;
  bool quiet = false;
  select_cmd->add_option("manifest", select_manifest, "Dataset manifest (JSON)")->required();
  select_cmd->add_option("--out", select_out, "Output directory for report.txt, trace.csv and summary.json");
  select_cmd->add_flag("-q,--quiet", quiet, "Do not print the report");
  add_common(select_cmd, flags, true);

  auto* bench_cmd = app.add_subcommand("bench", "Replicate a simulation scenario");
  std::string scenario, bench_out, export_dir;
  std::size_t reps = 100, n_train = 0, n_test = 0;
  std::vector<double> a;
  double theta = 0.6;
  bench_cmd->add_option("--scenario", scenario, "YR1..YR5, FUN_INDEP, FUN_COLLIN or CLASS_CROWN")
      ->required()
      ->check(CLI::IsMember({"YR1", "YR2", "YR3", "YR4", "YR5", "FUN_INDEP", "FUN_COLLIN", "CLASS_CROWN"}));
  bench_cmd->add_option("--B", reps, "Number of replications")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--a", a, "Functional scenario weights a1,a2,a3,a4")->delimiter(',');
  bench_cmd->add_option("--theta", theta, "Correlation parameter of YR4 and YR5");
  bench_cmd->add_option("--n-train", n_train, "Training sample size (default: the scenario's)");
  bench_cmd->add_option("--n-test", n_test, "Test sample size (default: the scenario's)");
  bench_cmd->add_option("--out", bench_out, "Output directory (default: bench_<scenario>)");
  bench_cmd->add_option("--export", export_dir, "Also write replication 0's training data as CSV + manifest");
  add_common(bench_cmd, flags, true);

  auto* report_cmd = app.add_subcommand("report", "Format a summary.json written by select or bench");
  std::string summary_path, csv_path;
  report_cmd->add_option("summary", summary_path, "summary.json")->required();
  report_cmd->add_option("--csv", csv_path, "Also write the table as CSV to this path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    setup(flags);
    if (*dcor_cmd) return cmd_dcor(dcor_cmd, flags, dcor_manifest, dcor_x, dcor_y, all_pairs);
    if (*select_cmd) return cmd_select(select_cmd, flags, select_manifest, select_out, quiet);
    if (*bench_cmd)
      return cmd_bench(bench_cmd, flags, scenario, reps, a, theta, n_train, n_test, bench_out, export_dir);
    if (*report_cmd) return cmd_report(summary_path, csv_path);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
