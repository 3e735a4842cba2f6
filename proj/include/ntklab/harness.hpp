#pragma once

// Monte Carlo over random initializations. Trial t always draws its network
// from the Philox substream (seed, t), and trials are grouped into a fixed
// number of contiguous shards that are merged in shard order. Threads only
// decide who computes which shard, so reports do not depend on them.

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "moments.hpp"
#include "network.hpp"
#include "ntk.hpp"
#include "path_oracle.hpp"
#include "theory.hpp"

namespace ntklab {

enum class ExperimentKind { kernel, update };

inline std::string to_string(ExperimentKind k) { return k == ExperimentKind::kernel ? "kernel" : "update"; }

struct ExperimentConfig {
  std::string id = "run";
  ExperimentKind kind = ExperimentKind::kernel;
  Architecture arch;
  WeightDistribution dist;
  std::optional<std::vector<double>> x;  // explicit input; otherwise all-ones scaled to xnorm2
  std::optional<double> xnorm2;          // defaults to n0
  long long trials = 1000;
  std::uint64_t seed = 42;
  double lambda = 1e-3;
  double target = 0.0;
  int shards = 32;
  bool oracle = true;
  BiasConvention convention = BiasConvention::corrected;

  Eigen::VectorXd input() const {
    if (x) return Eigen::Map<const Eigen::VectorXd>(x->data(), static_cast<Eigen::Index>(x->size()));
    return ones_input(arch.n0, xnorm2.value_or(static_cast<double>(arch.n0)));
  }

  void validate() const {
    arch.validate();
    if (trials < 1) throw ValidationError("trials must be >= 1");
    if (shards < 1) throw ValidationError("shards must be >= 1");
    if (x && static_cast<int>(x->size()) != arch.n0)
      throw ValidationError("input x has " + std::to_string(x->size()) + " entries, expected n0 = " +
                            std::to_string(arch.n0));
    if (xnorm2 && !(*xnorm2 >= 0.0)) throw ValidationError("xnorm2 must be >= 0");
    if (kind == ExperimentKind::update && !(lambda > 0.0)) throw ValidationError("lambda must be > 0");
    if (!std::isfinite(target)) throw ValidationError("target must be finite");
  }

  bool operator==(const ExperimentConfig&) const = default;
};

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

namespace detail {

// Runs body(shard, first, last) for each shard on `threads` workers.
template <class Body>
void for_each_shard(long long trials, int shards, int threads, Body&& body) {
  const int S = static_cast<int>(std::min<long long>(shards, trials));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (int s = next++; s < S; s = next++) {
      const long long first = trials * s / S;
      const long long last = trials * (s + 1) / S;
      try {
        body(s, first, last);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int T = std::max(1, std::min(threads, S));
  if (T == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < T; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
}

inline int shard_count(const ExperimentConfig& c) { return static_cast<int>(std::min<long long>(c.shards, c.trials)); }

}  // namespace detail

struct KernelShard {
  MomentAccumulator K{"K"}, Kw{"Kw"}, Kb{"Kb"}, K2{"K2"}, KwKb{"KwKb"};

  void add(const KernelSample& k) {
    K.add(k.K);
    Kw.add(k.Kw);
    Kb.add(k.Kb);
    K2.add(k.K * k.K);
    KwKb.add(k.Kw * k.Kb);
  }
  void merge(const KernelShard& o) {
    K.merge(o.K);
    Kw.merge(o.Kw);
    Kb.merge(o.Kb);
    K2.merge(o.K2);
    KwKb.merge(o.KwKb);
  }
};

// E[K^2] / E[K]^2 from one merged state.
inline double second_moment_ratio(const KernelShard& s) {
  const double m = s.K.mean();
  return s.K2.mean() / (m * m);
}

struct MomentReport {
  ExperimentConfig config;
  KernelShard totals;
  RatioEstimate ratio;
};

inline MomentReport run_kernel_experiment(const ExperimentConfig& config, int threads = 0) {
  config.validate();
  const Eigen::VectorXd x = config.input();
  std::vector<KernelShard> shards(static_cast<std::size_t>(detail::shard_count(config)));
  detail::for_each_shard(config.trials, config.shards, resolve_threads(threads),
                         [&](int s, long long first, long long last) {
                           KernelShard acc;
                           for (long long t = first; t < last; ++t) {
                             Philox4x32 eng(config.seed, static_cast<std::uint64_t>(t));
                             acc.add(kernel_on_diagonal(init_network(config.arch, config.dist, eng), x));
                           }
                           shards[static_cast<std::size_t>(s)] = std::move(acc);
                         });
  MomentReport r;
  r.config = config;
  for (const auto& s : shards) r.totals.merge(s);
  r.ratio = shard_jackknife(shards, second_moment_ratio);
  return r;
}

struct DeltaShard {
  KernelShard kernel;
  MomentAccumulator dK{"dK"}, dK_lin{"dK_lin"}, q{"q"}, q_ww{"q_ww"}, q_wb{"q_wb"}, q_bb{"q_bb"};
  MomentAccumulator abs_q_ww{"|q_ww|"}, abs_q_bb{"|q_bb|"};
  MomentAccumulator Dww{"Dww"}, Dwb{"Dwb"};  // q_ww (N - target), q_wb (N - target)
  long long flips = 0;

  void add(const DeltaSample& s) {
    kernel.add(s.before);
    dK.add(s.dK);
    dK_lin.add(s.dK_lin);
    q.add(s.hess.q);
    q_ww.add(s.hess.q_ww);
    q_wb.add(s.hess.q_wb);
    q_bb.add(s.hess.q_bb);
    abs_q_ww.add(std::abs(s.hess.q_ww));
    abs_q_bb.add(std::abs(s.hess.q_bb));
    const double r = s.output - s.target;
    Dww.add(s.hess.q_ww * r);
    Dwb.add(s.hess.q_wb * r);
    if (s.flipped()) ++flips;
  }
  void merge(const DeltaShard& o) {
    kernel.merge(o.kernel);
    dK.merge(o.dK);
    dK_lin.merge(o.dK_lin);
    q.merge(o.q);
    q_ww.merge(o.q_ww);
    q_wb.merge(o.q_wb);
    q_bb.merge(o.q_bb);
    abs_q_ww.merge(o.abs_q_ww);
    abs_q_bb.merge(o.abs_q_bb);
    Dww.merge(o.Dww);
    Dwb.merge(o.Dwb);
    flips += o.flips;
  }
};

// |E[dK_lin]| / E[K]
inline double update_ratio(const DeltaShard& s) { return std::abs(s.dK_lin.mean()) / s.kernel.K.mean(); }

struct DeltaReport {
  ExperimentConfig config;
  DeltaShard totals;
  RatioEstimate ratio;
  double flip_rate() const {
    const auto n = totals.kernel.K.count();
    return n ? static_cast<double>(totals.flips) / static_cast<double>(n) : 0.0;
  }
};

inline DeltaReport run_update_experiment(const ExperimentConfig& config, int threads = 0,
                                         const HessianOptions& hess = {}) {
  config.validate();
  if (!(config.lambda > 0.0)) throw ValidationError("lambda must be > 0");
  const Eigen::VectorXd x = config.input();
  std::vector<DeltaShard> shards(static_cast<std::size_t>(detail::shard_count(config)));
  detail::for_each_shard(config.trials, config.shards, resolve_threads(threads),
                         [&](int s, long long first, long long last) {
                           DeltaShard acc;
                           for (long long t = first; t < last; ++t) {
                             Philox4x32 eng(config.seed, static_cast<std::uint64_t>(t));
                             const NetworkParams p = init_network(config.arch, config.dist, eng);
                             acc.add(sgd_update_kernel(p, x, config.target, config.lambda, hess));
                           }
                           shards[static_cast<std::size_t>(s)] = std::move(acc);
                         });
  DeltaReport r;
  r.config = config;
  for (const auto& s : shards) r.totals.merge(s);
  r.ratio = shard_jackknife(shards, update_ratio);
  return r;
}

// One output row per experiment. Optional cells are written empty.
struct SweepRow {
  std::string experiment_id;
  int d = 0;
  int n0 = 0;
  std::vector<int> widths;  // hidden widths
  std::string dist;
  double beta_paper = 0, beta_hidden = 0;
  long long trials = 0;
  double mean_K = 0, se_mean_K = 0, mean_Kw = 0, mean_Kb = 0, mean_K2 = 0, se_K2 = 0;
  double ratio = 0, ratio_ci_lo = 0, ratio_ci_hi = 0;
  std::optional<double> mean_dK, mean_dK_lin, flip_rate;
  double theory_mean = 0, theory_ratio_central = 0;
  std::optional<double> oracle_mean;
  std::string error;  // non-empty when the row failed
};

namespace detail {

inline SweepRow row_skeleton(const ExperimentConfig& c) {
  SweepRow row;
  row.experiment_id = c.id;
  row.d = c.arch.depth();
  row.n0 = c.arch.n0;
  row.widths = c.arch.hidden;
  row.dist = c.dist.name();
  const BetaSummary b = beta_summary(c.arch);
  row.beta_paper = b.beta_paper;
  row.beta_hidden = b.beta_hidden;
  row.trials = c.trials;
  const Eigen::VectorXd x = c.input();
  const InputSummary in = InputSummary::of(x);
  row.theory_mean = mean_kernel(c.arch, in.norm2);
  if (c.kind == ExperimentKind::kernel)
    row.theory_ratio_central = second_moment_envelope(c.arch, in).central / (row.theory_mean * row.theory_mean);
  else
    row.theory_ratio_central = c.lambda * update_envelope(c.arch, in.norm2).central / row.theory_mean;
  if (c.oracle) row.oracle_mean = oracle_mean_kernel(c.arch, x, c.convention);
  return row;
}

inline void fill_kernel_columns(SweepRow& row, const KernelShard& k) {
  row.mean_K = k.K.mean();
  row.se_mean_K = k.K.se_mean();
  row.mean_Kw = k.Kw.mean();
  row.mean_Kb = k.Kb.mean();
  row.mean_K2 = k.K2.mean();
  row.se_K2 = k.K2.se_mean();
}

}  // namespace detail

inline SweepRow make_row(const MomentReport& r) {
  SweepRow row = detail::row_skeleton(r.config);
  detail::fill_kernel_columns(row, r.totals);
  row.ratio = r.ratio.point;
  row.ratio_ci_lo = r.ratio.ci_lo;
  row.ratio_ci_hi = r.ratio.ci_hi;
  return row;
}

inline SweepRow make_row(const DeltaReport& r) {
  SweepRow row = detail::row_skeleton(r.config);
  detail::fill_kernel_columns(row, r.totals.kernel);
  row.ratio = r.ratio.point;
  row.ratio_ci_lo = r.ratio.ci_lo;
  row.ratio_ci_hi = r.ratio.ci_hi;
  row.mean_dK = r.totals.dK.mean();
  row.mean_dK_lin = r.totals.dK_lin.mean();
  row.flip_rate = r.flip_rate();
  return row;
}

// Runs each config in turn (trials inside a config run in parallel). A failing
// config yields a row with `error` set and the sweep moves on.
inline std::vector<SweepRow> run_sweep(const std::vector<ExperimentConfig>& sweep, int threads = 0) {
  std::vector<SweepRow> rows;
  for (const auto& c : sweep) {
    try {
      if (c.kind == ExperimentKind::kernel) rows.push_back(make_row(run_kernel_experiment(c, threads)));
      else rows.push_back(make_row(run_update_experiment(c, threads)));
    } catch (const std::exception& e) {
      SweepRow row;
      row.experiment_id = c.id;
      row.error = e.what();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace ntklab
