#pragma once

#include <cmath>
#include <vector>

#include "network.hpp"

namespace ntklab {

using ParamGradient = ParamVector;

struct KernelSample {
  double Kw = 0.0;
  double Kb = 0.0;
  double K = 0.0;
};

namespace detail {

// delta_i = dN/dy^(i), i = 1..d, stored at index i-1. A hidden unit passes
// gradient iff on(layer, j).
template <class On>
std::vector<Eigen::VectorXd> backward_deltas(const NetworkParams& p, On&& on) {
  const int d = p.depth();
  std::vector<Eigen::VectorXd> delta(static_cast<std::size_t>(d));
  delta[static_cast<std::size_t>(d - 1)] = Eigen::VectorXd::Ones(1);
  for (int i = d; i > 1; --i) {
    Eigen::VectorXd up = p.s(i) * (p.W(i).transpose() * delta[static_cast<std::size_t>(i - 1)]);
    for (Eigen::Index j = 0; j < up.size(); ++j)
      if (!on(i - 1, j)) up(j) = 0.0;
    delta[static_cast<std::size_t>(i - 2)] = std::move(up);
  }
  return delta;
}

inline std::vector<Eigen::VectorXd> backward_deltas(const NetworkParams& p, const ForwardTrace& t) {
  return backward_deltas(p, [&](int layer, Eigen::Index j) { return t.y(layer)(j) > 0.0; });
}

}  // namespace detail

inline ParamGradient gradient(const NetworkParams& p, const Eigen::VectorXd& x) {
  const ForwardTrace t = forward(p, x);
  const auto delta = detail::backward_deltas(p, t);
  ParamGradient g;
  for (int i = 1; i <= p.depth(); ++i) {
    const auto& di = delta[static_cast<std::size_t>(i - 1)];
    g.weight.push_back(p.s(i) * di * t.x(i - 1).transpose());
    g.bias.push_back(di);
  }
  return g;
}

// Gradient of the polynomial that equals N on the activation region given by
// `pattern` (as returned by ForwardTrace::pattern), evaluated at p. At a point
// inside that region it equals gradient(p, x).
inline ParamGradient gradient_in_region(const NetworkParams& p, const Eigen::VectorXd& x,
                                        const std::vector<bool>& pattern) {
  check_input(p.arch, x);
  const int d = p.depth();
  std::vector<std::size_t> offset(static_cast<std::size_t>(d), 0);
  for (int i = 2; i < d; ++i)
    offset[static_cast<std::size_t>(i)] = offset[static_cast<std::size_t>(i - 1)] + static_cast<std::size_t>(p.arch.width(i - 1));
  auto on = [&](int layer, Eigen::Index j) { return pattern[offset[static_cast<std::size_t>(layer)] + static_cast<std::size_t>(j)]; };
  std::vector<Eigen::VectorXd> xs{x};
  for (int i = 1; i < d; ++i) {
    Eigen::VectorXd y = p.s(i) * (p.W(i) * xs.back()) + p.b(i);
    for (Eigen::Index j = 0; j < y.size(); ++j)
      if (!on(i, j)) y(j) = 0.0;
    xs.push_back(std::move(y));
  }
  const auto delta = detail::backward_deltas(p, on);
  ParamGradient g;
  for (int i = 1; i <= d; ++i) {
    const auto& di = delta[static_cast<std::size_t>(i - 1)];
    g.weight.push_back(p.s(i) * di * xs[static_cast<std::size_t>(i - 1)].transpose());
    g.bias.push_back(di);
  }
  return g;
}

// Same numbers as summing squares of gradient(), without materialising the
// weight gradients: |dN/dW_i|^2 = s_i^2 |delta_i|^2 |x^(i-1)|^2.
inline KernelSample kernel_on_diagonal(const NetworkParams& p, const Eigen::VectorXd& x) {
  const ForwardTrace t = forward(p, x);
  const auto delta = detail::backward_deltas(p, t);
  KernelSample k;
  for (int i = 1; i <= p.depth(); ++i) {
    const double dd = delta[static_cast<std::size_t>(i - 1)].squaredNorm();
    k.Kw += p.s(i) * p.s(i) * dd * t.x(i - 1).squaredNorm();
    k.Kb += dd;
  }
  k.K = k.Kw + k.Kb;
  return k;
}

struct HessianOptions {
  double eps_rel = 1e-4;   // step = eps_rel * (1 + |theta|_inf)
  bool richardson = true;  // combine steps eps and eps/2 to cancel the O(eps^2) term
};

struct HessianForm {
  double q = 0.0;
  double q_ww = 0.0;
  double q_wb = 0.0;
  double q_bb = 0.0;
  double step = 0.0;
  bool pattern_flipped = false;  // some probe point lies outside the activation region of theta
};

namespace detail {

inline NetworkParams shifted(const NetworkParams& p, double a, const ParamVector& v) {
  NetworkParams q = p;
  q.theta.axpy(a, v);
  return q;
}

// (g(theta + h v) - g(theta - h v)) / 2h with g the gradient of the region
// polynomial of theta, so a probe across a kink still measures curvature.
// Probes outside the region are reported through `flipped`.
inline ParamGradient central_hvp(const NetworkParams& p, const Eigen::VectorXd& x, const ParamVector& v, double h,
                                 const std::vector<bool>& base_pattern, bool& flipped) {
  const NetworkParams plus = shifted(p, h, v);
  const NetworkParams minus = shifted(p, -h, v);
  if (forward(plus, x).pattern() != base_pattern || forward(minus, x).pattern() != base_pattern) flipped = true;
  ParamGradient hv = gradient_in_region(plus, x, base_pattern);
  hv.axpy(-1.0, gradient_in_region(minus, x, base_pattern));
  const double inv = 1.0 / (2.0 * h);
  for (auto& w : hv.weight) w *= inv;
  for (auto& b : hv.bias) b *= inv;
  return hv;
}

}  // namespace detail

// Approximates H v where H is the Hessian of N at theta, taken as the Hessian
// of the polynomial that equals N on the activation region of theta (the
// ReLU'(0) = 0 convention at a boundary).
inline ParamGradient hessian_vector(const NetworkParams& p, const Eigen::VectorXd& x, const ParamVector& v,
                                    const HessianOptions& opt, double* step_out = nullptr,
                                    bool* flipped_out = nullptr) {
  const double h = opt.eps_rel * (1.0 + p.theta.max_abs());
  const auto base = forward(p, x).pattern();
  bool flipped = false;
  ParamGradient hv = detail::central_hvp(p, x, v, h, base, flipped);
  if (opt.richardson) {
    ParamGradient half = detail::central_hvp(p, x, v, 0.5 * h, base, flipped);
    // (4 D(h/2) - D(h)) / 3
    for (auto& w : half.weight) w *= 4.0 / 3.0;
    for (auto& b : half.bias) b *= 4.0 / 3.0;
    half.axpy(-1.0 / 3.0, hv);
    hv = std::move(half);
  }
  if (step_out) *step_out = h;
  if (flipped_out) *flipped_out = *flipped_out || flipped;
  return hv;
}

// q = v^T H v along the full direction, plus the weight/bias block
// contractions. q is computed separately from the blocks, so the identity
// q = q_ww + 2 q_wb + q_bb is a genuine consistency check.
inline HessianForm hessian_quadratic_form(const NetworkParams& p, const Eigen::VectorXd& x,
                                          const ParamVector& direction, const HessianOptions& opt = {}) {
  HessianForm r;
  const ParamVector vw = direction.weights_only();
  const ParamVector vb = direction.biases_only();
  bool flipped = false;
  r.q = direction.dot(hessian_vector(p, x, direction, opt, &r.step, &flipped));
  const ParamGradient hw = hessian_vector(p, x, vw, opt, nullptr, &flipped);
  const ParamGradient hb = hessian_vector(p, x, vb, opt, nullptr, &flipped);
  r.q_ww = vw.dot(hw);
  r.q_wb = vw.dot(hb);
  r.q_bb = vb.dot(hb);
  r.pattern_flipped = flipped;
  return r;
}

struct DeltaSample {
  double lambda = 0.0;
  double target = 0.0;
  double output = 0.0;  // N(x) before the step
  KernelSample before;
  KernelSample after;
  double dK = 0.0;
  double dK_lin = 0.0;
  HessianForm hess;
  bool step_flipped = false;  // the SGD step changed the activation pattern
  bool flipped() const { return step_flipped || hess.pattern_flipped; }
};

// One SGD step on L = (N - target)^2 / 2 at the single input x.
inline DeltaSample sgd_update_kernel(const NetworkParams& p, const Eigen::VectorXd& x, double target, double lambda,
                                     const HessianOptions& opt = {}) {
  if (!(lambda >= 0.0)) throw ValidationError("learning rate must be non-negative");
  DeltaSample s;
  s.lambda = lambda;
  s.target = target;
  const ForwardTrace t = forward(p, x);
  s.output = t.output;
  const ParamGradient g = gradient(p, x);
  s.before = kernel_on_diagonal(p, x);
  s.hess = hessian_quadratic_form(p, x, g, opt);

  const double resid = s.output - target;
  NetworkParams next = p;
  next.theta.axpy(-lambda * resid, g);
  s.after = kernel_on_diagonal(next, x);
  s.step_flipped = forward(next, x).pattern() != t.pattern();
  s.dK = s.after.K - s.before.K;
  s.dK_lin = -2.0 * lambda * resid * s.hess.q;
  return s;
}

}  // namespace ntklab
