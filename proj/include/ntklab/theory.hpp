#pragma once

// Closed-form means and envelopes for the on-diagonal NTK of a ReLU net.
// Envelopes are only claimed up to universal constants, so every central
// value carries a multiplicative band (default [c/40, 40c]).

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "errors.hpp"
#include "network.hpp"

namespace ntklab {

// Neumaier's variant of Kahan summation.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  CompensatedSum& operator+=(double v) {
    add(v);
    return *this;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct InputSummary {
  double norm2 = 0.0;    // |x|_2^2
  double norm4_4 = 0.0;  // |x|_4^4

  static InputSummary of(const Eigen::VectorXd& x) { return {x.squaredNorm(), x.array().pow(4).sum()}; }
};

struct BetaSummary {
  double beta_paper = 0.0;   // sum_{i=1}^{d} 1/n_i, includes 1/n_d = 1
  double beta_hidden = 0.0;  // sum_{i=1}^{d-1} 1/n_i
  double equal_width = std::nan("");  // d/n when every hidden layer has width n
};

inline BetaSummary beta_summary(const Architecture& arch) {
  BetaSummary b;
  CompensatedSum h;
  for (int n : arch.hidden) h += 1.0 / n;
  b.beta_hidden = h.value();
  b.beta_paper = b.beta_hidden + 1.0;
  if (!arch.hidden.empty()) {
    bool equal = true;
    for (int n : arch.hidden) equal = equal && n == arch.hidden.front();
    if (equal) b.equal_width = static_cast<double>(arch.depth()) / arch.hidden.front();
  }
  return b;
}

struct EnvelopeResult {
  double central = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::string label;
};

inline EnvelopeResult make_envelope(double central, std::string label, double band = 40.0) {
  if (!(band >= 1.0)) throw ValidationError("envelope band must be >= 1");
  return {central, central / band, central * band, std::move(label)};
}

inline double mean_kernel(const Architecture& arch, double xnorm2) {
  return arch.depth() * (0.5 + xnorm2 / arch.n0);
}

inline double mean_kw(const Architecture& arch, double xnorm2) { return arch.depth() * xnorm2 / arch.n0; }

// The literal value d/2 treats the output bias like a hidden one.
inline double mean_kb_paper(const Architecture& arch) { return 0.5 * arch.depth(); }

// The output bias always has derivative 1; hidden biases contribute 1/2 per
// layer once the chance of a completely dead layer (2^-n) is neglected.
inline double mean_kb_corrected(const Architecture& arch) { return 0.5 * (arch.depth() - 1) + 1.0; }

namespace detail {

// 1/n_i for i = 0..d, with entry 0 unused by the envelopes.
inline std::vector<double> inverse_widths(const Architecture& arch) {
  std::vector<double> inv;
  for (int i = 0; i <= arch.depth(); ++i) inv.push_back(1.0 / arch.width(i));
  return inv;
}

// S[j] = sum_{i=1}^{j} 1/n_i, S[0] = 0.
inline std::vector<double> prefix_inverse(const Architecture& arch) {
  const auto inv = inverse_widths(arch);
  std::vector<double> s(inv.size(), 0.0);
  CompensatedSum acc;
  for (std::size_t j = 1; j < inv.size(); ++j) {
    acc += inv[j];
    s[j] = acc.value();
  }
  return s;
}

inline double range_sum(const std::vector<double>& S, int from, int to) {
  // sum_{i=from}^{to} 1/n_i, empty when to < from
  if (to < from) return 0.0;
  return S[static_cast<std::size_t>(to)] - S[static_cast<std::size_t>(from - 1)];
}

// sum_j e^{-5 S_j}
inline double tail_sum(const std::vector<double>& S, int d) {
  CompensatedSum acc;
  for (int j = 1; j <= d; ++j) acc += std::exp(-5.0 * S[static_cast<std::size_t>(j)]);
  return acc.value();
}

// sum_{1<=i<=j<=d} e^{-5 S_j} = sum_j j e^{-5 S_j}
inline double triangle_sum(const std::vector<double>& S, int d) {
  CompensatedSum acc;
  for (int j = 1; j <= d; ++j) acc += j * std::exp(-5.0 * S[static_cast<std::size_t>(j)]);
  return acc.value();
}

// sum_{i1<i2} sum_{l=i1}^{i2-1} (1/n_l) e^{-5/n_l - 6 sum_{i=i1}^{m} 1/n_i}
// with m = l in the update theorem and m = l-1 in the pure-weight statement.
inline double ww_window_sum(const Architecture& arch, bool inclusive) {
  const int d = arch.depth();
  const auto inv = inverse_widths(arch);
  const auto S = prefix_inverse(arch);
  CompensatedSum acc;
  for (int i1 = 1; i1 <= d; ++i1)
    for (int i2 = i1 + 1; i2 <= d; ++i2)
      for (int l = i1; l <= i2 - 1; ++l) {
        const double run = range_sum(S, i1, inclusive ? l : l - 1);
        acc += inv[static_cast<std::size_t>(l)] * std::exp(-5.0 * inv[static_cast<std::size_t>(l)] - 6.0 * run);
      }
  return acc.value();
}

// sum_{j<i} e^{-5 S_j} sum_{l=j}^{i-1} (1/n_l) e^{-6 sum_{a=j+1}^{l-1} 1/n_a}
inline double wb_window_sum(const Architecture& arch) {
  const int d = arch.depth();
  const auto inv = inverse_widths(arch);
  const auto S = prefix_inverse(arch);
  CompensatedSum acc;
  for (int j = 1; j <= d; ++j)
    for (int i = j + 1; i <= d; ++i) {
      CompensatedSum inner;
      for (int l = j; l <= i - 1; ++l)
        inner += inv[static_cast<std::size_t>(l)] * std::exp(-6.0 * range_sum(S, j + 1, l - 1));
      acc += std::exp(-5.0 * S[static_cast<std::size_t>(j)]) * inner.value();
    }
  return acc.value();
}

// 1 - e^{-t} - t e^{-t}, accurate for small t.
inline double one_minus_exp_poly(double t) {
  if (t > 0.5) return -std::expm1(-t) - t * std::exp(-t);
  // sum_{m>=2} (-1)^m (m-1) t^m / m!
  double term = t * t / 2.0;  // t^m / m! at m = 2
  CompensatedSum acc;
  for (int m = 2; m < 40; ++m) {
    const double sign = (m % 2 == 0) ? 1.0 : -1.0;
    acc += sign * (m - 1) * term;
    term *= t / (m + 1);
  }
  return acc.value();
}

}  // namespace detail

inline EnvelopeResult second_moment_envelope(const Architecture& arch, const InputSummary& in, double band = 40.0) {
  const int d = arch.depth();
  const double n0 = arch.n0;
  const auto S = detail::prefix_inverse(arch);
  const double beta = beta_summary(arch).beta_paper;
  CompensatedSum bracket;
  bracket += d * d * in.norm2 * in.norm2 / (n0 * n0);
  bracket += d * in.norm2 / n0 * detail::tail_sum(S, d);
  bracket += detail::triangle_sum(S, d);
  return make_envelope(std::exp(5.0 * beta) * bracket.value(), "E[K^2]", band);
}

inline double equal_width_second_moment(int d, int n, int n0, double xnorm2) {
  const double r = static_cast<double>(d) / n;
  const double t = 5.0 * r;
  const double nn = static_cast<double>(n);
  CompensatedSum bracket;
  bracket += nn * nn * detail::one_minus_exp_poly(t);
  bracket += d * nn * xnorm2 / n0 * (-std::expm1(-t));
  bracket += static_cast<double>(d) * d * xnorm2 * xnorm2 / (static_cast<double>(n0) * n0);
  return std::exp(t) * bracket.value();
}

inline EnvelopeResult update_envelope(const Architecture& arch, double xnorm2, double band = 40.0) {
  const double n0 = arch.n0;
  const double beta = beta_summary(arch).beta_paper;
  CompensatedSum bracket;
  bracket += xnorm2 * xnorm2 / (n0 * n0) * detail::ww_window_sum(arch, /*inclusive=*/true);
  bracket += xnorm2 / n0 * detail::wb_window_sum(arch);
  return make_envelope(std::exp(5.0 * beta) * bracket.value(), "E[dK/lambda]", band);
}

inline double equal_width_update_ratio(int d, int n, int n0) {
  const double beta = static_cast<double>(d) / n;
  return d * beta / n0 * std::exp(5.0 * beta);
}

inline std::map<std::string, EnvelopeResult> component_envelopes(const Architecture& arch, const InputSummary& in,
                                                                 double band = 40.0) {
  const int d = arch.depth();
  const double n0 = arch.n0;
  const auto S = detail::prefix_inverse(arch);
  const double e5 = std::exp(5.0 * beta_summary(arch).beta_paper);
  const double x2 = in.norm2;
  std::map<std::string, EnvelopeResult> out;
  out["Kw2"] = make_envelope(d * d * x2 * x2 / (n0 * n0) * e5, "E[Kw^2]", band);
  out["Kb2"] = make_envelope(detail::triangle_sum(S, d) * e5, "E[Kb^2]", band);
  out["KbKw"] = make_envelope(d * x2 / n0 * detail::tail_sum(S, d) * e5, "E[Kb Kw]", band);
  out["Dww"] = make_envelope(x2 * x2 / (n0 * n0) * detail::ww_window_sum(arch, /*inclusive=*/false) * e5, "E[Dww]",
                             band);
  out["Dwb"] = make_envelope(x2 / n0 * detail::wb_window_sum(arch) * e5, "E[Dwb]", band);
  return out;
}

struct ElementaryBounds {
  double lower = 1.0;
  double upper = 1.0;
};

// Bounds on E[prod_i alpha_i^{X_i} gamma_i^{X_{i-1} X_i} K_i^{Y_i}] for
// independent indicators X_i ~ p_i, Y_i ~ q_i, i = 0..d. The lower product is
// evaluated with gamma clipped to <= 1 and the upper one with gamma clipped
// to >= 1; since the expectation is monotone in gamma both stay valid for the
// unclipped gamma. A non-positive lower factor (large alpha with small gamma
// and p) makes the literal product meaningless, since two negative factors
// can multiply to something above E[Z]; the lower bound then falls back to 0.
inline ElementaryBounds elementary_bounds(const std::vector<double>& p, const std::vector<double>& q,
                                          const std::vector<double>& alpha, const std::vector<double>& gamma,
                                          const std::vector<double>& K) {
  const std::size_t d = alpha.size();
  if (p.size() != d + 1 || q.size() != d + 1 || gamma.size() != d || K.size() != d)
    throw ContractError("elementary_bounds: p, q need d+1 entries and alpha, gamma, K need d");
  for (std::size_t i = 0; i <= d; ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0 && q[i] >= 0.0 && q[i] <= 1.0 && p[i] + q[i] <= 1.0 + 1e-15))
      throw ContractError("elementary_bounds: need p_i, q_i in [0,1] with p_i + q_i <= 1");
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (!(alpha[i] >= 1.0 && K[i] >= 1.0 && gamma[i] > 0.0))
      throw ContractError("elementary_bounds: need alpha_i, K_i >= 1 and gamma_i > 0");
  }
  ElementaryBounds b;
  double lo = 1.0, hi = 1.0;
  bool lo_valid = true;
  for (std::size_t i = 1; i <= d; ++i) {
    const double a = alpha[i - 1];
    const double a_prev = i >= 2 ? alpha[i - 2] : 1.0;
    const double g_lo = std::min(gamma[i - 1], 1.0);
    const double g_hi = std::max(gamma[i - 1], 1.0);
    const double g_prev_hi = i >= 2 ? std::max(gamma[i - 2], 1.0) : 1.0;
    const double f_lo = 1.0 + p[i] * (a - 1.0) + p[i] * p[i - 1] * a_prev * a * (g_lo - 1.0);
    lo_valid = lo_valid && f_lo > 0.0;
    lo *= f_lo;
    hi *= 1.0 + p[i] * (a - 1.0) + q[i] * (K[i - 1] - 1.0) + p[i] * p[i - 1] * a * a_prev * g_prev_hi * (g_hi - 1.0);
  }
  b.lower = lo_valid ? lo : 0.0;
  b.upper = hi;
  return b;
}

}  // namespace ntklab
