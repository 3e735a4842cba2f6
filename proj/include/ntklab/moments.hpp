#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"

namespace ntklab {

// Streaming central moments up to order four with Pebay's pairwise merge.
class MomentAccumulator {
 public:
  MomentAccumulator() = default;
  explicit MomentAccumulator(std::string tag) : tag_(std::move(tag)) {}

  void add(double x) {
    const double n1 = static_cast<double>(n_);
    ++n_;
    const double n = static_cast<double>(n_);
    const double delta = x - mean_;
    const double dn = delta / n;
    const double dn2 = dn * dn;
    const double term1 = delta * dn * n1;
    mean_ += dn;
    m4_ += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * m2_ - 4.0 * dn * m3_;
    m3_ += term1 * dn * (n - 2.0) - 3.0 * dn * m2_;
    m2_ += term1;
  }

  void merge(const MomentAccumulator& o) {
    if (!tag_.empty() && !o.tag_.empty() && tag_ != o.tag_)
      throw ContractError("cannot merge accumulators for '" + tag_ + "' and '" + o.tag_ + "'");
    if (o.n_ == 0) return;
    if (n_ == 0) {
      const std::string keep = tag_.empty() ? o.tag_ : tag_;
      *this = o;
      tag_ = keep;
      return;
    }
    const double na = static_cast<double>(n_), nb = static_cast<double>(o.n_);
    const double n = na + nb;
    const double delta = o.mean_ - mean_;
    const double d2 = delta * delta;
    const double m2 = m2_ + o.m2_ + d2 * na * nb / n;
    const double m3 = m3_ + o.m3_ + d2 * delta * na * nb * (na - nb) / (n * n) +
                      3.0 * delta * (na * o.m2_ - nb * m2_) / n;
    const double m4 = m4_ + o.m4_ + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n) +
                      6.0 * d2 * (na * na * o.m2_ + nb * nb * m2_) / (n * n) + 4.0 * delta * (na * o.m3_ - nb * m3_) / n;
    mean_ += delta * nb / n;
    m2_ = m2;
    m3_ = m3;
    m4_ = m4;
    n_ += o.n_;
  }

  std::uint64_t count() const { return n_; }
  const std::string& tag() const { return tag_; }
  double mean() const { return n_ ? mean_ : std::numeric_limits<double>::quiet_NaN(); }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double se_mean() const { return n_ ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }
  // Population central moments.
  double central(int k) const {
    if (n_ == 0) return 0.0;
    const double n = static_cast<double>(n_);
    switch (k) {
      case 2: return m2_ / n;
      case 3: return m3_ / n;
      case 4: return m4_ / n;
      default: throw ContractError("central moment order must be 2, 3 or 4");
    }
  }
  double mean_square() const { return central(2) + mean_ * mean_; }
  // Standard error of mean_square() as an estimate of E[X^2].
  double se_mean_square() const {
    if (n_ < 2) return 0.0;
    const double m = mean_;
    const double mu2 = central(2), mu3 = central(3), mu4 = central(4);
    const double ex2 = mu2 + m * m;
    const double ex4 = mu4 + 4.0 * m * mu3 + 6.0 * m * m * mu2 + m * m * m * m;
    const double var = std::max(0.0, ex4 - ex2 * ex2);
    return std::sqrt(var / static_cast<double>(n_ - 1));
  }

 private:
  std::string tag_;
  std::uint64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0, m3_ = 0.0, m4_ = 0.0;
};

inline MomentAccumulator merge_accumulators(MomentAccumulator a, const MomentAccumulator& b) {
  a.merge(b);
  return a;
}

struct RatioEstimate {
  double point = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  int shards = 0;
};

// Delete-one-shard jackknife with a Student-t interval on shards-1 degrees of
// freedom. Stats must be default constructible and have merge(const Stats&).
template <class Stats, class Statistic>
RatioEstimate shard_jackknife(const std::vector<Stats>& shards, Statistic&& statistic, double level = 0.95) {
  RatioEstimate r;
  const std::size_t S = shards.size();
  r.shards = static_cast<int>(S);
  if (S == 0) throw ContractError("jackknife needs at least one shard");
  // prefix[s] merges shards [0, s), suffix[s] merges [s, S)
  std::vector<Stats> prefix(S + 1), suffix(S + 1);
  for (std::size_t s = 0; s < S; ++s) {
    prefix[s + 1] = prefix[s];
    prefix[s + 1].merge(shards[s]);
  }
  for (std::size_t s = S; s-- > 0;) {
    suffix[s] = shards[s];
    suffix[s].merge(suffix[s + 1]);
  }
  r.point = statistic(prefix[S]);
  if (S < 2) {
    r.ci_lo = r.ci_hi = r.point;
    return r;
  }
  std::vector<double> loo(S);
  double mean = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    Stats rest = prefix[s];
    rest.merge(suffix[s + 1]);
    loo[s] = statistic(rest);
    mean += loo[s];
  }
  mean /= static_cast<double>(S);
  double ss = 0.0;
  for (double v : loo) ss += (v - mean) * (v - mean);
  r.se = std::sqrt(ss * static_cast<double>(S - 1) / static_cast<double>(S));
  const boost::math::students_t t(static_cast<double>(S - 1));
  const double q = boost::math::quantile(boost::math::complement(t, (1.0 - level) / 2.0));
  r.ci_lo = r.point - q * r.se;
  r.ci_hi = r.point + q * r.se;
  return r;
}

}  // namespace ntklab
