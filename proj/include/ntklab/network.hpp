#pragma once

#include <Eigen/Dense>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace ntklab {

struct Architecture {
  int n0 = 1;
  std::vector<int> hidden;

  int depth() const { return static_cast<int>(hidden.size()) + 1; }

  // n_0, ..., n_d with n_d = 1.
  int width(int layer) const {
    if (layer == 0) return n0;
    if (layer == depth()) return 1;
    return hidden.at(static_cast<std::size_t>(layer - 1));
  }

  std::vector<int> widths() const {
    std::vector<int> w;
    for (int i = 0; i <= depth(); ++i) w.push_back(width(i));
    return w;
  }

  void validate() const {
    if (n0 < 1) throw ValidationError("input width must be >= 1");
    for (int n : hidden)
      if (n < 1) throw ValidationError("hidden widths must be >= 1");
  }

  bool operator==(const Architecture&) const = default;
};

inline Architecture equal_width(int n0, int depth, int n) {
  return Architecture{n0, std::vector<int>(static_cast<std::size_t>(depth - 1), n)};
}

enum class WeightKind { normal, uniform };

struct WeightDistribution {
  WeightKind kind = WeightKind::normal;

  double variance() const { return 1.0; }
  double fourth_moment() const { return kind == WeightKind::normal ? 3.0 : 9.0 / 5.0; }
  // mu4 as an exact ratio, for the rational oracles.
  std::pair<int, int> fourth_moment_ratio() const {
    return kind == WeightKind::normal ? std::pair{3, 1} : std::pair{9, 5};
  }
  bool has_density() const { return true; }
  std::string name() const { return kind == WeightKind::normal ? "normal" : "uniform"; }

  static WeightDistribution from_name(const std::string& s) {
    if (s == "normal" || s == "gaussian") return {WeightKind::normal};
    if (s == "uniform") return {WeightKind::uniform};
    throw ValidationError("unknown distribution '" + s + "' (expected normal or uniform)");
  }

  bool operator==(const WeightDistribution&) const = default;
};

// A parameter-shaped bundle. Used for the weights themselves, for gradients
// and for Hessian directions.
struct ParamVector {
  std::vector<Eigen::MatrixXd> weight;  // layer i at index i-1, shape n_i x n_{i-1}
  std::vector<Eigen::VectorXd> bias;

  static ParamVector zeros(const Architecture& arch) {
    ParamVector p;
    for (int i = 1; i <= arch.depth(); ++i) {
      p.weight.push_back(Eigen::MatrixXd::Zero(arch.width(i), arch.width(i - 1)));
      p.bias.push_back(Eigen::VectorXd::Zero(arch.width(i)));
    }
    return p;
  }

  int layers() const { return static_cast<int>(weight.size()); }

  double weight_sq() const {
    double s = 0;
    for (const auto& w : weight) s += w.squaredNorm();
    return s;
  }
  double bias_sq() const {
    double s = 0;
    for (const auto& b : bias) s += b.squaredNorm();
    return s;
  }
  double max_abs() const {
    double m = 0;
    for (const auto& w : weight) m = std::max(m, w.cwiseAbs().maxCoeff());
    for (const auto& b : bias) m = std::max(m, b.cwiseAbs().maxCoeff());
    return m;
  }

  double dot(const ParamVector& o) const { return dot_weights(o) + dot_biases(o); }
  double dot_weights(const ParamVector& o) const {
    double s = 0;
    for (std::size_t i = 0; i < weight.size(); ++i) s += weight[i].cwiseProduct(o.weight[i]).sum();
    return s;
  }
  double dot_biases(const ParamVector& o) const {
    double s = 0;
    for (std::size_t i = 0; i < bias.size(); ++i) s += bias[i].dot(o.bias[i]);
    return s;
  }

  // this += a * o
  void axpy(double a, const ParamVector& o) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] += a * o.weight[i];
      bias[i] += a * o.bias[i];
    }
  }

  ParamVector weights_only() const {
    ParamVector p = *this;
    for (auto& b : p.bias) b.setZero();
    return p;
  }
  ParamVector biases_only() const {
    ParamVector p = *this;
    for (auto& w : p.weight) w.setZero();
    return p;
  }
};

struct NetworkParams {
  Architecture arch;
  std::vector<double> scale;  // sqrt(2/n_{i-1}) on hidden layers, sqrt(1/n_{d-1}) on the output
  ParamVector theta;

  int depth() const { return arch.depth(); }
  const Eigen::MatrixXd& W(int layer) const { return theta.weight[static_cast<std::size_t>(layer - 1)]; }
  const Eigen::VectorXd& b(int layer) const { return theta.bias[static_cast<std::size_t>(layer - 1)]; }
  double s(int layer) const { return scale[static_cast<std::size_t>(layer - 1)]; }
};

inline std::vector<double> layer_scales(const Architecture& arch) {
  std::vector<double> s;
  const int d = arch.depth();
  for (int i = 1; i <= d; ++i) {
    const double num = i < d ? 2.0 : 1.0;
    s.push_back(std::sqrt(num / arch.width(i - 1)));
  }
  return s;
}

// Zero weights and biases with the right shapes and scales.
inline NetworkParams zero_network(const Architecture& arch) {
  arch.validate();
  return NetworkParams{arch, layer_scales(arch), ParamVector::zeros(arch)};
}

// Entries are drawn layer by layer in row-major order from the given engine.
template <class Engine>
NetworkParams init_network(const Architecture& arch, const WeightDistribution& dist, Engine& eng) {
  NetworkParams p = zero_network(arch);
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  const double r = std::sqrt(3.0);
  boost::random::uniform_real_distribution<double> uniform(-r, r);
  for (auto& w : p.theta.weight) {
    for (Eigen::Index a = 0; a < w.rows(); ++a)
      for (Eigen::Index b = 0; b < w.cols(); ++b)
        w(a, b) = dist.kind == WeightKind::normal ? normal(eng) : uniform(eng);
  }
  return p;
}

inline NetworkParams init_network(const Architecture& arch, const WeightDistribution& dist, std::uint64_t seed,
                                  std::uint64_t stream = 0) {
  Philox4x32 eng(seed, stream);
  return init_network(arch, dist, eng);
}

struct ForwardTrace {
  std::vector<Eigen::VectorXd> pre;   // y^(1..d) at index i-1
  std::vector<Eigen::VectorXd> post;  // x^(0..d-1) at index i
  double output = 0.0;

  int depth() const { return static_cast<int>(pre.size()); }
  const Eigen::VectorXd& y(int layer) const { return pre[static_cast<std::size_t>(layer - 1)]; }
  const Eigen::VectorXd& x(int layer) const { return post[static_cast<std::size_t>(layer)]; }
  bool active(int layer, int j) const { return y(layer)(j) > 0.0; }

  // One bit per hidden neuron, layers 1..d-1 concatenated.
  std::vector<bool> pattern() const {
    std::vector<bool> bits;
    for (int i = 1; i < depth(); ++i)
      for (Eigen::Index j = 0; j < y(i).size(); ++j) bits.push_back(y(i)(j) > 0.0);
    return bits;
  }
};

inline void check_input(const Architecture& arch, const Eigen::VectorXd& x) {
  if (x.size() != arch.n0)
    throw ShapeError("input has length " + std::to_string(x.size()) + ", expected n0 = " + std::to_string(arch.n0));
}

inline ForwardTrace forward(const NetworkParams& p, const Eigen::VectorXd& x) {
  check_input(p.arch, x);
  const int d = p.depth();
  ForwardTrace t;
  t.post.reserve(static_cast<std::size_t>(d));
  t.pre.reserve(static_cast<std::size_t>(d));
  t.post.push_back(x);
  for (int i = 1; i <= d; ++i) {
    Eigen::VectorXd y = p.s(i) * (p.W(i) * t.post.back()) + p.b(i);
    if (i < d) t.post.push_back(y.cwiseMax(0.0));
    t.pre.push_back(std::move(y));
  }
  t.output = t.pre.back()(0);
  return t;
}

inline Eigen::VectorXd ones_input(int n0, double norm2) {
  return Eigen::VectorXd::Constant(n0, std::sqrt(norm2 / n0));
}

}  // namespace ntklab
