// ntklab command line: theory, mc, update, oracle, dp, sweep.
//
// Exit codes: 0 success, 1 invalid input or usage, 2 internal failure
// (including a non-finite number on its way into a CSV cell).

#include <CLI11.hpp>

#include <ntklab/ntklab.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace ntklab;

struct Options {
  std::string config, grid, out, format = "csv";
  int threads = 0;
  std::uint64_t seed = 42;
  long long trials = 1000;
  double lambda = 1e-3, target = 0.0;
  std::string convention = "corrected";
  int n0 = 0;
  std::string hidden;
  double xnorm2 = 0.0;
  std::vector<double> x;
  std::string dist = "normal";
  int shards = 32;
  bool no_oracle = false;
  std::string id = "run";
  bool lemmas = false;
  std::vector<int> window;
};

// "16,16,16" or "16x3"; an empty string means no hidden layers.
std::vector<int> parse_hidden(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      const auto x = item.find('x');
      std::size_t used = 0;
      if (x == std::string::npos) {
        out.push_back(std::stoi(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } else {
        const int w = std::stoi(item.substr(0, x));
        const int k = std::stoi(item.substr(x + 1));
        if (k < 0) throw std::invalid_argument(item);
        out.insert(out.end(), static_cast<std::size_t>(k), w);
      }
    } catch (const std::logic_error&) {
      throw ValidationError("cannot parse hidden widths '" + s + "'");
    }
  }
  return out;
}

int resolve_cli_threads(int flag) {
  if (const char* env = std::getenv("NTKLAB_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 0) throw ValidationError(std::string("NTKLAB_THREADS must be a non-negative integer, got '") + env + "'");
    return resolve_threads(static_cast<int>(v));
  }
  if (flag < 0) throw ValidationError("--threads must be >= 0");
  return resolve_threads(flag);
}

// True when the subcommand defines the option and it was given. Not every
// subcommand defines every experiment flag.
bool given(const CLI::App& sub, const std::string& name) {
  const CLI::Option* opt = sub.get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

// Flags given explicitly on the command line override the config file.
ExperimentConfig build_config(const Options& o, const CLI::App& sub, ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  if (!o.config.empty()) {
    c = config_from_json(read_json_file(o.config));
    c.kind = kind;
  } else {
    if (given(sub, "--n0") == 0) throw ValidationError("need --config or --n0/--hidden");
    c.arch = Architecture{o.n0, parse_hidden(o.hidden)};
  }
  if (given(sub, "--n0")) c.arch.n0 = o.n0;
  if (given(sub, "--hidden")) c.arch.hidden = parse_hidden(o.hidden);
  if (given(sub, "--xnorm2")) {
    c.xnorm2 = o.xnorm2;
    c.x.reset();
  }
  if (given(sub, "--x")) {
    c.x = o.x;
    c.xnorm2.reset();
  }
  if (given(sub, "--dist")) c.dist = WeightDistribution::from_name(o.dist);
  if (given(sub, "--seed")) c.seed = o.seed;
  if (given(sub, "--trials")) c.trials = o.trials;
  if (given(sub, "--lambda")) c.lambda = o.lambda;
  if (given(sub, "--target")) c.target = o.target;
  if (given(sub, "--shards")) c.shards = o.shards;
  if (given(sub, "--convention")) c.convention = bias_convention_from_name(o.convention);
  if (given(sub, "--no-oracle")) c.oracle = false;
  if (given(sub, "--id")) c.id = o.id;
  c.validate();
  return c;
}

std::string command_line(int argc, char** argv) {
  std::string s;
  for (int i = 1; i < argc; ++i) s += (i > 1 ? " " : "") + std::string(argv[i]);
  return s;
}

void emit(const Options& o, const std::string& text) {
  if (o.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(o.out, std::ios::binary);
  if (!f) throw ValidationError("cannot write '" + o.out + "'");
  f << text;
}

void require_format(const Options& o, std::initializer_list<const char*> allowed) {
  for (const char* a : allowed)
    if (o.format == a) return;
  throw ValidationError("--format " + o.format + " is not supported by this subcommand");
}

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string rows_output(const Options& o, const std::vector<SweepRow>& rows, RunManifest& m) {
  std::ostringstream os;
  if (o.format == "csv") {
    write_csv(os, rows, m);
  } else {
    Json list = Json::array();
    for (const auto& r : rows) {
      // same finiteness contract as the CSV writer
      if (r.error.empty()) (void)csv_row(r);
      list.push_back(row_to_json(r));
    }
    m.payload["rows"] = list;
    os << manifest_to_json(m).dump(2) << '\n';
  }
  return os.str();
}

Json accumulator_json(const MomentAccumulator& a) {
  return Json{{"mean", a.mean()}, {"se_mean", a.se_mean()}, {"count", a.count()}};
}

// ---- subcommands -------------------------------------------------------------

int run_theory(const Options& o, const CLI::App& sub, const std::string& cmd) {
  require_format(o, {"csv", "json"});
  Clock clock;
  const ExperimentConfig c = build_config(o, sub, ExperimentKind::kernel);
  const Architecture& a = c.arch;
  const InputSummary in = InputSummary::of(c.input());
  const BetaSummary beta = beta_summary(a);
  const double mean = mean_kernel(a, in.norm2);

  std::vector<EnvelopeResult> rows;
  auto exact = [&](const std::string& label, double v) { rows.push_back({v, v, v, label}); };
  exact("mean_K", mean);
  exact("mean_Kw", mean_kw(a, in.norm2));
  exact("mean_Kb_paper", mean_kb_paper(a));
  exact("mean_Kb_corrected", mean_kb_corrected(a));
  auto m2 = second_moment_envelope(a, in);
  rows.push_back(m2);
  rows.push_back(make_envelope(m2.central / (mean * mean), "E[K^2]/E[K]^2"));
  for (const auto& [k, e] : component_envelopes(a, in)) rows.push_back(e);
  const auto up = update_envelope(a, in.norm2);
  rows.push_back(up);
  rows.push_back(make_envelope(up.central / mean, "E[dK/lambda]/E[K]"));
  if (!std::isnan(beta.equal_width)) {
    const int n = a.hidden.front();
    exact("equal_width_E[K^2]", equal_width_second_moment(a.depth(), n, a.n0, in.norm2));
    exact("equal_width_update_ratio", equal_width_update_ratio(a.depth(), n, a.n0));
  }

  RunManifest m{cmd, config_to_json(c), c.seed, clock.seconds(), Json::object()};
  std::ostringstream os;
  std::string widths;
  for (std::size_t i = 0; i < a.hidden.size(); ++i) widths += (i ? ";" : "") + std::to_string(a.hidden[i]);
  if (o.format == "csv") {
    std::vector<std::string> lines;
    for (const auto& r : rows) {
      const auto num = [&](double v) {
        if (!std::isfinite(v)) throw ContractError("non-finite value for " + r.label);
        return format_double(v);
      };
      lines.push_back(r.label + "," + std::to_string(a.depth()) + "," + std::to_string(a.n0) + "," + widths + "," +
                      num(beta.beta_paper) + "," + num(beta.beta_hidden) + "," + num(r.central) + "," +
                      num(r.lower) + "," + num(r.upper));
    }
    os << "# manifest: " << manifest_to_json(m).dump() << '\n';
    os << "formula,d,n0,widths,beta_paper,beta_hidden,central,lower,upper\n";
    for (const auto& l : lines) os << l << '\n';
  } else {
    Json list = Json::array();
    for (const auto& r : rows)
      list.push_back({{"formula", r.label}, {"central", r.central}, {"lower", r.lower}, {"upper", r.upper}});
    m.payload = {{"beta_paper", beta.beta_paper}, {"beta_hidden", beta.beta_hidden}, {"formulas", list}};
    os << manifest_to_json(m).dump(2) << '\n';
  }
  emit(o, os.str());
  return 0;
}

int run_mc(const Options& o, const CLI::App& sub, const std::string& cmd, ExperimentKind kind) {
  require_format(o, {"csv", "json"});
  Clock clock;
  const ExperimentConfig c = build_config(o, sub, kind);
  const int threads = resolve_cli_threads(o.threads);
  RunManifest m{cmd, config_to_json(c), c.seed, 0.0, Json::object()};
  SweepRow row;
  if (kind == ExperimentKind::kernel) {
    const auto r = run_kernel_experiment(c, threads);
    row = make_row(r);
    m.payload["mean_KwKb"] = accumulator_json(r.totals.KwKb);
    m.payload["ratio_se"] = r.ratio.se;
  } else {
    const auto r = run_update_experiment(c, threads);
    row = make_row(r);
    const auto& t = r.totals;
    m.payload["q"] = accumulator_json(t.q);
    m.payload["q_ww"] = accumulator_json(t.q_ww);
    m.payload["q_wb"] = accumulator_json(t.q_wb);
    m.payload["q_bb"] = accumulator_json(t.q_bb);
    m.payload["abs_q_bb_over_abs_q_ww"] = t.abs_q_bb.mean() / t.abs_q_ww.mean();
    m.payload["Dww"] = accumulator_json(t.Dww);
    m.payload["Dwb"] = accumulator_json(t.Dwb);
    m.payload["ratio_se"] = r.ratio.se;
  }
  m.wall_seconds = clock.seconds();
  emit(o, rows_output(o, {row}, m));
  return 0;
}

Json breakdown_json(const OracleBreakdown& b) {
  Json j{{"convention", to_string(b.convention)},
         {"mu4", b.mu4},
         {"E_Kw", b.E_Kw},
         {"E_Kw2", b.E_Kw2},
         {"E_Kb", b.E_Kb},
         {"E_Kb2", b.E_Kb2},
         {"E_KbKw", b.E_KbKw},
         {"E_Dww", b.E_Dww},
         {"E_Dwb", b.E_Dwb},
         {"E_K", b.E_K},
         {"E_K2", b.E_K2}};
  j["exact"] = b.exact;
  j["aggregates"] = {{"I", b.aggregates.I}, {"II", b.aggregates.II}};
  return j;
}

int run_oracle(const Options& o, const CLI::App& sub, const std::string& cmd) {
  if (given(sub, "--format")) require_format(o, {"json"});
  Clock clock;
  const ExperimentConfig c = build_config(o, sub, ExperimentKind::kernel);
  const Eigen::VectorXd x = c.input();
  RunManifest m{cmd, config_to_json(c), c.seed, 0.0, Json::object()};
  m.payload["corrected"] = breakdown_json(exact_bias_and_mixed_moments(c.arch, x, c.dist, BiasConvention::corrected));
  m.payload["paper"] = breakdown_json(exact_bias_and_mixed_moments(c.arch, x, c.dist, BiasConvention::paper));
  if (o.lemmas) {
    const auto f = verify_fiber_counts(c.arch);
    m.payload["fibers"] = {{"instances", f.instances}, {"pairs", f.pairs}, {"mismatches", f.mismatches}};
    const auto jr = verify_jacobian_counts(c.arch);
    m.payload["jacobian"] = {{"cases", jr.cases},
                             {"mismatches", jr.mismatches},
                             {"discrepancy_rate", jr.discrepancy_rate},
                             {"ratio_outside_allowed", jr.ratio_outside_allowed},
                             {"ratio_histogram", jr.ratio_histogram}};
  }
  m.wall_seconds = clock.seconds();
  emit(o, manifest_to_json(m).dump(2) + "\n");
  return 0;
}

int run_dp(const Options& o, const CLI::App& sub, const std::string& cmd) {
  if (given(sub, "--format")) require_format(o, {"json"});
  Clock clock;
  const ExperimentConfig c = build_config(o, sub, ExperimentKind::kernel);
  const auto spec = make_chain_spec(c.arch, InputSummary::of(c.input()), c.dist.fourth_moment());
  const auto v = chain_expectation(spec);
  const auto s = sandwich_check(spec);
  RunManifest m{cmd, config_to_json(c), c.seed, 0.0, Json::object()};
  Json trace = Json::array();
  for (const auto& t : v.trace) trace.push_back({t[0], t[1]});
  m.payload = {{"p", spec.p},
               {"mu4", c.dist.fourth_moment()},
               {"lower", s.lower},
               {"value", s.value},
               {"upper", s.upper},
               {"ok", s.ok},
               {"literal_value", literal_fhat_expectation(spec)},
               {"trace", trace},
               {"window_sum", window_sum(spec)},
               {"window_sum_closed", window_sum_closed(spec)}};
  if (!o.window.empty()) {
    if (o.window.size() != 2) throw ValidationError("--window takes i1,i2");
    const auto w = chain_expectation_with_window(spec, o.window[0], o.window[1]);
    m.payload["window"] = {{"i1", o.window[0]},
                           {"i2", o.window[1]},
                           {"value", w.window},
                           {"collision_probability", collision_probability(spec, o.window[0], o.window[1])}};
  }
  m.wall_seconds = clock.seconds();
  emit(o, manifest_to_json(m).dump(2) + "\n");
  return 0;
}

int run_sweep_cmd(const Options& o, const CLI::App& sub, const std::string& cmd) {
  require_format(o, {"csv", "json"});
  if (o.grid.empty()) throw ValidationError("sweep needs --grid");
  Clock clock;
  auto configs = grid_from_json(read_json_file(o.grid));
  // Explicit run flags apply to every row.
  for (auto& c : configs) {
    if (given(sub, "--seed")) c.seed = o.seed;
    if (given(sub, "--trials")) c.trials = o.trials;
    if (given(sub, "--lambda")) c.lambda = o.lambda;
    if (given(sub, "--target")) c.target = o.target;
    if (given(sub, "--convention")) c.convention = bias_convention_from_name(o.convention);
    c.validate();
  }
  const int threads = resolve_cli_threads(o.threads);
  const auto rows = run_sweep(configs, threads);
  Json echo = Json::array();
  for (const auto& c : configs) echo.push_back(config_to_json(c));
  RunManifest m{cmd, Json{{"configs", echo}}, configs.empty() ? 0 : configs.front().seed, 0.0, Json::object()};
  std::vector<SweepRow> ok;
  Json failures = Json::array();
  for (const auto& r : rows) {
    if (r.error.empty()) ok.push_back(r);
    else failures.push_back({{"experiment_id", r.experiment_id}, {"error", r.error}});
  }
  if (!failures.empty()) m.payload["failures"] = failures;
  m.wall_seconds = clock.seconds();
  emit(o, rows_output(o, ok, m));
  for (const auto& f : failures)
    std::cerr << "ntklab: row " << f["experiment_id"].get<std::string>() << " failed: " << f["error"].get<std::string>()
              << '\n';
  return failures.empty() ? 0 : 2;
}

void add_arch_options(CLI::App* s, Options& o) {
  s->add_option("--config", o.config, "experiment config JSON")->check(CLI::ExistingFile);
  s->add_option("--n0", o.n0, "input width");
  s->add_option("--hidden", o.hidden, "hidden widths, e.g. 16,16,16 or 16x3");
  s->add_option("--xnorm2", o.xnorm2, "squared norm of the all-ones input (default n0)");
  s->add_option("--x", o.x, "explicit input vector")->delimiter(',');
  s->add_option("--dist", o.dist, "weight distribution: normal or uniform");
  s->add_option("--id", o.id, "experiment id");
  s->add_option("--out", o.out, "output file (default stdout)");
  s->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
}

void add_run_options(CLI::App* s, Options& o) {
  s->add_option("--seed", o.seed, "base seed (default 42)");
  s->add_option("--trials", o.trials, "number of trials");
  s->add_option("--threads", o.threads, "worker threads (default: logical cores; NTKLAB_THREADS overrides)");
  s->add_option("--lambda", o.lambda, "learning rate for update runs (default 1e-3)");
  s->add_option("--target", o.target, "regression target (default 0)");
  s->add_option("--convention", o.convention, "output-bias convention for oracle columns: paper or corrected")
      ->check(CLI::IsMember({"paper", "corrected"}));
  s->add_option("--shards", o.shards, "jackknife shards (default 32)");
  s->add_flag("--no-oracle", o.no_oracle, "leave the oracle_mean column empty");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ntklab: finite-width NTK moments, exact oracles and Monte Carlo"};
  app.require_subcommand(1);
  Options o;
  auto* theory = app.add_subcommand("theory", "closed-form means and envelopes");
  add_arch_options(theory, o);
  auto* mc = app.add_subcommand("mc", "Monte Carlo kernel moments");
  add_arch_options(mc, o);
  add_run_options(mc, o);
  auto* update = app.add_subcommand("update", "Monte Carlo one-step kernel update");
  add_arch_options(update, o);
  add_run_options(update, o);
  auto* oracle = app.add_subcommand("oracle", "exact moments by path enumeration (tiny networks)");
  add_arch_options(oracle, o);
  oracle->add_flag("--lemmas", o.lemmas, "also run the fiber and Jacobian counting checks");
  auto* dp = app.add_subcommand("dp", "transfer-chain expectation and sandwich bounds");
  add_arch_options(dp, o);
  dp->add_option("--window", o.window, "collision window i1,i2")->delimiter(',');
  auto* sweep = app.add_subcommand("sweep", "run every config in a grid file");
  sweep->add_option("--grid", o.grid, "grid JSON: list of configs")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", o.out, "output file (default stdout)");
  sweep->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  add_run_options(sweep, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  const std::string cmd = command_line(argc, argv);
  try {
    if (*theory) return run_theory(o, *theory, cmd);
    if (*mc) return run_mc(o, *mc, cmd, ExperimentKind::kernel);
    if (*update) return run_mc(o, *update, cmd, ExperimentKind::update);
    if (*oracle) return run_oracle(o, *oracle, cmd);
    if (*dp) return run_dp(o, *dp, cmd);
    if (*sweep) return run_sweep_cmd(o, *sweep, cmd);
  } catch (const ValidationError& e) {
    std::cerr << "ntklab: " << e.what() << '\n';
    return 1;
  } catch (const EnumerationLimitError& e) {
    std::cerr << "ntklab: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ntklab: internal error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
