#pragma once

// Two independent paths routed uniformly through the layers meet at layer i
// with probability p_i. The pair-of-paths functional depends on the path pair
// only through s_i = 1{the paths share the neuron at layer i}, so its
// expectation is a two-state transfer chain.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "errors.hpp"
#include "network.hpp"
#include "theory.hpp"

namespace ntklab {

template <class T>
struct ChainSpec {
  std::vector<T> p;  // p[0..d]; p[d] = 1 because n_d = 1
  T singleton{6};    // factor for s_i = 1
  T adjacency{1};    // factor for s_{i-1} = s_i = 1, mu4 / 3

  int depth() const { return static_cast<int>(p.size()) - 1; }

  void validate() const {
    if (p.size() < 2) throw ValidationError("chain needs depth >= 1");
    for (const T& v : p)
      if (!(v > T(0) && v <= T(1))) throw ValidationError("chain probabilities must lie in (0, 1]");
  }
};

template <class T>
ChainSpec<T> make_chain_spec(const Architecture& arch, const T& p0, const T& mu4) {
  ChainSpec<T> s;
  s.p.push_back(p0);
  for (int i = 1; i <= arch.depth(); ++i) s.p.push_back(T(1) / T(arch.width(i)));
  s.adjacency = mu4 / T(3);
  s.validate();
  return s;
}

// p_0 = |x|_4^4 / |x|_2^4: two input indices drawn independently from x_a^2 / |x|^2 coincide.
inline ChainSpec<double> make_chain_spec(const Architecture& arch, const InputSummary& in, double mu4) {
  if (!(in.norm2 > 0.0)) throw ValidationError("chain spec needs a nonzero input");
  // Rounding can put a single-coordinate input a few ulps above 1.
  return make_chain_spec<double>(arch, std::min(1.0, in.norm4_4 / (in.norm2 * in.norm2)), mu4);
}

template <class T>
struct ChainValue {
  T value{0};
  std::vector<std::array<T, 2>> trace;  // weighted mass in state s = 0 / 1 after each layer 0..d
  bool has_window = false;
  T window{0};
};

namespace detail {

// Generic forward pass: mass[s] after layer 0 is `init[s]`, then each layer
// multiplies by P(s_i) * factor(i, s_{i-1}, s_i).
template <class T, class Factor>
ChainValue<T> run_chain(const ChainSpec<T>& spec, std::array<T, 2> init, Factor&& factor) {
  ChainValue<T> out;
  const int d = spec.depth();
  std::array<T, 2> m = init;
  out.trace.push_back(m);
  for (int i = 1; i <= d; ++i) {
    const T& pi = spec.p[static_cast<std::size_t>(i)];
    std::array<T, 2> n{T(0), T(0)};
    for (int prev = 0; prev < 2; ++prev) {
      n[0] += m[static_cast<std::size_t>(prev)] * (T(1) - pi) * factor(i, prev, 0);
      n[1] += m[static_cast<std::size_t>(prev)] * pi * factor(i, prev, 1);
    }
    m = n;
    out.trace.push_back(m);
  }
  out.value = m[0] + m[1];
  return out;
}

template <class T>
T product_factor(const ChainSpec<T>& spec, int prev, int cur) {
  T f(1);
  if (cur) f *= spec.singleton;
  if (cur && prev) f *= spec.adjacency;
  return f;
}

}  // namespace detail

// E_x[prod_i 6^{s_i} (mu4/3)^{s_{i-1} s_i}]
template <class T>
ChainValue<T> chain_expectation(const ChainSpec<T>& spec) {
  spec.validate();
  const T& p0 = spec.p[0];
  return detail::run_chain(spec, {T(1) - p0, p0},
                           [&](int, int prev, int cur) { return detail::product_factor(spec, prev, cur); });
}

// The literal functional 2^{#singletons} 3^{#loops} mu4^{#adjacent singletons},
// where a loop is a step from s = 1 to s = 0. It equals 3^{s_0 - 1} times the
// product form because the last layer is always a singleton.
template <class T>
T literal_fhat_expectation(const ChainSpec<T>& spec) {
  spec.validate();
  const T& p0 = spec.p[0];
  const T mu4 = spec.adjacency * T(3);
  const T two = spec.singleton / T(3);
  return detail::run_chain(spec, {T(1) - p0, p0},
                           [&](int, int prev, int cur) {
                             T f(1);
                             if (cur) f *= two;
                             if (prev && !cur) f *= T(3);
                             if (prev && cur) f *= mu4;
                             return f;
                           })
      .value;
}

// P(first collision in the window starting at i1 happens at layer l).
template <class T>
T first_collision_probability(const ChainSpec<T>& spec, int i1, int l) {
  if (i1 < 1 || l < i1 || l > spec.depth()) throw ValidationError("first collision layer out of range");
  T pr = spec.p[static_cast<std::size_t>(l)];
  for (int i = i1; i < l; ++i) pr *= T(1) - spec.p[static_cast<std::size_t>(i)];
  return pr;
}

namespace detail {

// E[F * 1{some s_l = 1 with i1 <= l <= i2 - 1}], where F is the product
// functional, or 1 when `unit` is set.
template <class T>
T window_value(const ChainSpec<T>& spec, int i1, int i2, bool unit) {
  const int d = spec.depth();
  // state index: s + 2 * flag
  std::array<T, 4> m{T(1) - spec.p[0], spec.p[0], T(0), T(0)};
  for (int i = 1; i <= d; ++i) {
    const T& pi = spec.p[static_cast<std::size_t>(i)];
    const bool in_window = i >= i1 && i <= i2 - 1;
    std::array<T, 4> n{T(0), T(0), T(0), T(0)};
    for (int prev = 0; prev < 2; ++prev)
      for (int flag = 0; flag < 2; ++flag) {
        const T& mass = m[static_cast<std::size_t>(prev + 2 * flag)];
        if (mass == T(0)) continue;
        const T f0 = unit ? T(1) : product_factor(spec, prev, 0);
        const T f1 = unit ? T(1) : product_factor(spec, prev, 1);
        n[static_cast<std::size_t>(0 + 2 * flag)] += mass * (T(1) - pi) * f0;
        const int nflag = (flag || in_window) ? 1 : 0;
        n[static_cast<std::size_t>(1 + 2 * nflag)] += mass * pi * f1;
      }
    m = n;
  }
  return m[2] + m[3];
}

inline void check_window(int d, int i1, int i2) {
  if (!(1 <= i1 && i1 < i2 && i2 <= d)) throw ValidationError("window needs 1 <= i1 < i2 <= d");
}

}  // namespace detail

template <class T>
ChainValue<T> chain_expectation_with_window(const ChainSpec<T>& spec, int i1, int i2) {
  detail::check_window(spec.depth(), i1, i2);
  ChainValue<T> v = chain_expectation(spec);
  v.has_window = true;
  v.window = detail::window_value(spec, i1, i2, /*unit=*/false);
  return v;
}

// P(C = 1) from the flag chain with unit factors.
template <class T>
T collision_probability(const ChainSpec<T>& spec, int i1, int i2) {
  detail::check_window(spec.depth(), i1, i2);
  return detail::window_value(spec, i1, i2, /*unit=*/true);
}

// sum_{i1 < i2} E[F * C(i1, i2)], exact, O(d^3).
template <class T>
T window_sum(const ChainSpec<T>& spec) {
  const int d = spec.depth();
  T acc(0);
  for (int i1 = 1; i1 <= d; ++i1)
    for (int i2 = i1 + 1; i2 <= d; ++i2) acc += detail::window_value(spec, i1, i2, false);
  return acc;
}

// The closed approximation e^{5 sum p} sum_{i1<i2} sum_l p_l e^{-5 p_l - 6 sum_{i=i1}^{l-1} p_i}.
inline double window_sum_closed(const ChainSpec<double>& spec) {
  const int d = spec.depth();
  CompensatedSum beta;
  for (int i = 1; i <= d; ++i) beta += spec.p[static_cast<std::size_t>(i)];
  CompensatedSum acc;
  for (int i1 = 1; i1 <= d; ++i1)
    for (int i2 = i1 + 1; i2 <= d; ++i2) {
      double run = 0.0;
      for (int l = i1; l <= i2 - 1; ++l) {
        const double pl = spec.p[static_cast<std::size_t>(l)];
        acc += pl * std::exp(-5.0 * pl - 6.0 * run);
        run += pl;
      }
    }
  return std::exp(5.0 * beta.value()) * acc.value();
}

struct SandwichResult {
  double lower = 0.0;
  double value = 0.0;
  double upper = 0.0;
  bool ok = false;
};

// Elementary product bounds with alpha = singleton, gamma = adjacency and no
// secondary events, checked against the exact chain value.
inline SandwichResult sandwich_check(const ChainSpec<double>& spec, double rel_tol = 1e-12) {
  const int d = spec.depth();
  const std::vector<double> q(static_cast<std::size_t>(d + 1), 0.0);
  const std::vector<double> alpha(static_cast<std::size_t>(d), spec.singleton);
  const std::vector<double> gamma(static_cast<std::size_t>(d), spec.adjacency);
  const std::vector<double> K(static_cast<std::size_t>(d), 1.0);
  const ElementaryBounds b = elementary_bounds(spec.p, q, alpha, gamma, K);
  SandwichResult r{b.lower, chain_expectation(spec).value, b.upper, false};
  r.ok = r.lower <= r.value * (1.0 + rel_tol) && r.value <= r.upper * (1.0 + rel_tol);
  return r;
}

}  // namespace ntklab
