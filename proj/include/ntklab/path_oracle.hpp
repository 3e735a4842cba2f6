#pragma once

// Exact expectations by explicit enumeration over tuples of paths in the
// computational graph, plus brute-force checks of the edge-multiset counting
// lemmas. Everything here is exponential in depth and meant for toy widths.
//
// Moments are computed top-down as nested conditional expectations: at layer
// i the rows feeding the occupied neurons are integrated out given the layers
// below. With every edge multiplicity even, a hidden neuron that some path
// occupies contributes a factor 1/2 (row sign symmetry), an edge traversed m
// times contributes s_i^m E[W^m], and a derivative mark on an edge removes two
// powers of W. The output layer has no ReLU, so it contributes no 1/2.

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "errors.hpp"
#include "network.hpp"

namespace ntklab {

using Rational = boost::multiprecision::cpp_rational;

enum class BiasConvention {
  paper,     // literal: a 1/2 for an output-layer bias start, no dead-layer correction
  corrected  // the exact expectation of the network as implemented
};

inline std::string to_string(BiasConvention c) { return c == BiasConvention::paper ? "paper" : "corrected"; }

inline BiasConvention bias_convention_from_name(const std::string& s) {
  if (s == "paper") return BiasConvention::paper;
  if (s == "corrected") return BiasConvention::corrected;
  throw ValidationError("unknown convention '" + s + "' (expected paper or corrected)");
}

// Caps on paths per input neuron. Two-path sums cost about P^2 per input
// pair; four-path sums cost about P^4 in exact arithmetic, and P = 49 already
// takes tens of seconds.
inline constexpr double kDefaultPathCap = 1e4;
inline constexpr double kDefaultFourPathCap = 50;

// ---------------------------------------------------------------------------
// Paths and edge multisets

using Path = std::vector<int>;  // neuron index at each layer from the start layer up to d

struct PathTuple {
  std::vector<int> start_layer;
  std::vector<Path> paths;

  int size() const { return static_cast<int>(paths.size()); }
  bool covers(int p, int layer) const { return layer >= start_layer[static_cast<std::size_t>(p)]; }
  int at(int p, int layer) const {
    const auto up = static_cast<std::size_t>(p);
    return paths[up][static_cast<std::size_t>(layer - start_layer[up])];
  }
  // Gamma(l): distinct neurons occupied at the layer.
  std::set<int> occupied(int layer) const {
    std::set<int> s;
    for (int p = 0; p < size(); ++p)
      if (covers(p, layer)) s.insert(at(p, layer));
    return s;
  }
};

struct EdgeMultiset {
  // layers[l-1] holds the sorted (left, right) pairs between layers l-1 and l.
  std::vector<std::vector<std::pair<int, int>>> layers;

  static EdgeMultiset of(const PathTuple& t, int depth) {
    EdgeMultiset e;
    e.layers.resize(static_cast<std::size_t>(depth));
    for (int l = 1; l <= depth; ++l) {
      auto& v = e.layers[static_cast<std::size_t>(l - 1)];
      for (int p = 0; p < t.size(); ++p)
        if (t.covers(p, l - 1)) v.emplace_back(t.at(p, l - 1), t.at(p, l));
      std::sort(v.begin(), v.end());
    }
    return e;
  }

  int depth() const { return static_cast<int>(layers.size()); }
  const std::vector<std::pair<int, int>>& at(int l) const { return layers[static_cast<std::size_t>(l - 1)]; }

  std::set<int> left(int l) const {
    std::set<int> s;
    for (const auto& [a, b] : at(l)) s.insert(a);
    return s;
  }
  std::set<int> right(int l) const {
    std::set<int> s;
    for (const auto& [a, b] : at(l)) s.insert(b);
    return s;
  }

  int loops() const {
    int n = 0;
    for (int l = 1; l <= depth(); ++l)
      if (left(l).size() == 1 && right(l).size() == 2) ++n;
    return n;
  }

  // Naive parity check: count every edge.
  bool even() const {
    for (const auto& v : layers) {
      std::map<std::pair<int, int>, int> count;
      for (const auto& e : v) ++count[e];
      for (const auto& [e, c] : count)
        if (c % 2 != 0) return false;
    }
    return true;
  }

  auto operator<=>(const EdgeMultiset&) const = default;
};

// Every path from neuron `start` at layer `layer` to the output neuron.
inline std::vector<Path> all_paths_from(const Architecture& arch, int layer, int start) {
  std::vector<Path> out{Path{start}};
  for (int l = layer + 1; l <= arch.depth(); ++l) {
    std::vector<Path> next;
    next.reserve(out.size() * static_cast<std::size_t>(arch.width(l)));
    for (const auto& p : out)
      for (int b = 0; b < arch.width(l); ++b) {
        Path q = p;
        q.push_back(b);
        next.push_back(std::move(q));
      }
    out = std::move(next);
  }
  return out;
}

// Number of paths from one neuron at `layer` to the output.
inline double path_count_from(const Architecture& arch, int layer) {
  double c = 1.0;
  for (int l = layer + 1; l <= arch.depth(); ++l) c *= arch.width(l);
  return c;
}

inline void check_cap(const Architecture& arch, double cap) {
  const double c = path_count_from(arch, 0);
  if (c > cap)
    throw EnumerationLimitError("enumeration needs " + std::to_string(static_cast<long long>(c)) +
                                " paths per input neuron, above the cap of " +
                                std::to_string(static_cast<long long>(cap)));
}

// ---------------------------------------------------------------------------
// Realized path sum

// K_w = sum over input pairs a, path pairs through a, shared edges e of
// x_a1 x_a2 wt(g1) wt(g2) / W_e^2, with the weights of one sampled network.
inline double pathsum_kw_realized(const NetworkParams& p, const Eigen::VectorXd& x, double cap = kDefaultPathCap) {
  const Architecture& arch = p.arch;
  check_input(arch, x);
  check_cap(arch, cap);
  const int d = arch.depth();
  const ForwardTrace t = forward(p, x);

  struct OpenPath {
    int a;
    Path nodes;                   // layers 0..d
    std::vector<double> factor;   // s_i W_i along the path, i = 1..d at index i-1
  };
  std::vector<OpenPath> open;
  for (int a = 0; a < arch.n0; ++a) {
    if (x(a) == 0.0) continue;
    for (auto& path : all_paths_from(arch, 0, a)) {
      bool is_open = true;
      for (int l = 1; l < d && is_open; ++l) is_open = t.active(l, path[static_cast<std::size_t>(l)]);
      if (!is_open) continue;
      OpenPath op{a, path, {}};
      for (int l = 1; l <= d; ++l)
        op.factor.push_back(p.s(l) * p.W(l)(path[static_cast<std::size_t>(l)], path[static_cast<std::size_t>(l - 1)]));
      open.push_back(std::move(op));
    }
  }

  // wt(g)/W_e keeps s_e and drops W_e, so the product over the pair is
  // s_e^2 times the two paths' factors away from layer e.
  double total = 0.0;
  for (const auto& g1 : open)
    for (const auto& g2 : open) {
      const double xw = x(g1.a) * x(g2.a);
      for (int e = 1; e <= d; ++e) {
        const auto ue = static_cast<std::size_t>(e);
        if (g1.nodes[ue - 1] != g2.nodes[ue - 1] || g1.nodes[ue] != g2.nodes[ue]) continue;
        double prod = p.s(e) * p.s(e) * xw;
        for (int l = 1; l <= d; ++l)
          if (l != e) prod *= g1.factor[static_cast<std::size_t>(l - 1)] * g2.factor[static_cast<std::size_t>(l - 1)];
        total += prod;
      }
    }
  return total;
}

// ---------------------------------------------------------------------------
// Exact moments

namespace detail {

template <class T>
T to_scalar(double v) {
  return T(v);
}

template <class T>
struct OracleContext {
  Architecture arch;
  std::vector<T> x;
  T mu4;
  BiasConvention convention = BiasConvention::corrected;
  std::vector<T> s2;    // s_i^2 at index i, i = 1..d
  std::vector<T> surv;  // surv[m] = P(x^(m) != 0), m = 0..d-1

  OracleContext(const Architecture& a, const Eigen::VectorXd& xin, T m4, BiasConvention c)
      : arch(a), mu4(std::move(m4)), convention(c) {
    a.validate();
    check_input(a, xin);
    for (Eigen::Index i = 0; i < xin.size(); ++i) x.push_back(to_scalar<T>(xin(i)));
    const int d = a.depth();
    s2.assign(static_cast<std::size_t>(d + 1), T(0));
    for (int i = 1; i <= d; ++i) s2[static_cast<std::size_t>(i)] = T(i < d ? 2 : 1) / T(a.width(i - 1));
    bool nonzero = false;
    for (Eigen::Index i = 0; i < xin.size(); ++i) nonzero = nonzero || xin(i) != 0.0;
    surv.assign(static_cast<std::size_t>(d), T(0));
    surv[0] = nonzero ? T(1) : T(0);
    for (int m = 1; m < d; ++m) {
      T dead(1);
      for (int k = 0; k < a.width(m); ++k) dead /= T(2);
      surv[static_cast<std::size_t>(m)] = surv[static_cast<std::size_t>(m - 1)] * (T(1) - dead);
    }
  }

  int depth() const { return arch.depth(); }
  T half() const { return T(1) / T(2); }
  // E[W^m] for the supported symmetric laws (unit variance).
  T moment(int m) const {
    if (m == 0 || m == 2) return T(1);
    if (m == 4) return mu4;
    if (m % 2 == 1) return T(0);
    throw ContractError("weight moments above order 4 are not needed for <= 4 paths");
  }
};

struct Mark {
  int a, b;  // the two paths that must share the marked edge
};

// A family of k <= 4 paths. Paths with start layer 0 begin at input neurons
// chosen independently (weighted by x); paths 2g and 2g+1 with a common start
// layer >= 1 begin at one shared bias neuron Z.
struct FamilySpec {
  int k = 2;
  std::array<int, 4> start{0, 0, 0, 0};
  std::vector<Mark> marks;
  bool distinct_mark_layers = false;
};

template <class T>
class FamilyWalker {
 public:
  FamilyWalker(const OracleContext<T>& ctx, const FamilySpec& spec, bool prune_odd)
      : ctx_(ctx), spec_(spec), prune_(prune_odd), d_(ctx.depth()) {
    pos_.assign(static_cast<std::size_t>(d_ + 1), std::array<int, 4>{-1, -1, -1, -1});
    base_.assign(static_cast<std::size_t>(d_ + 1), T(1));
    valid_.assign(spec.marks.size(), std::vector<char>(static_cast<std::size_t>(d_ + 1), 0));
    quartic_.assign(spec.marks.size(), std::vector<char>(static_cast<std::size_t>(d_ + 1), 0));
    lo_ = *std::min_element(spec.start.begin(), spec.start.begin() + spec.k);
    for (int p = 0; p < spec.k; ++p) has_input_ = has_input_ || spec.start[static_cast<std::size_t>(p)] == 0;
  }

  T run() {
    total_ = T(0);
    descend(lo_, T(1));
    T scale(1);
    if (!has_input_ && ctx_.convention == BiasConvention::corrected && lo_ < d_)
      scale = ctx_.surv[static_cast<std::size_t>(lo_ - 1)];
    return total_ * scale;
  }

 private:
  int start(int p) const { return spec_.start[static_cast<std::size_t>(p)]; }

  void descend(int layer, T carry) {
    if (layer > d_) {
      leaf(carry);
      return;
    }
    // Free choices at this layer: next neurons of running paths, shared bias
    // starts, and input neurons of input paths.
    struct Slot {
      int p0, p1;  // p1 = -1 unless a shared start
      int range;
    };
    std::vector<Slot> slots;
    const int width = ctx_.arch.width(layer);
    for (int p = 0; p < spec_.k; ++p) {
      if (start(p) < layer) slots.push_back({p, -1, width});
      else if (start(p) == layer) {
        if (layer == 0) slots.push_back({p, -1, width});
        else if (p % 2 == 0 && p + 1 < spec_.k && start(p + 1) == layer) slots.push_back({p, p + 1, width});
        else if (p % 2 == 1 && start(p - 1) == layer) continue;  // already assigned with its partner
        else slots.push_back({p, -1, width});
      }
    }
    std::vector<int> digit(slots.size(), 0);
    while (true) {
      for (std::size_t s = 0; s < slots.size(); ++s) {
        pos_[static_cast<std::size_t>(layer)][static_cast<std::size_t>(slots[s].p0)] = digit[s];
        if (slots[s].p1 >= 0) pos_[static_cast<std::size_t>(layer)][static_cast<std::size_t>(slots[s].p1)] = digit[s];
      }
      T next = carry;
      if (layer == 0 ? input_weight(next) : layer_factor(layer, next)) descend(layer + 1, next);
      std::size_t s = 0;
      for (; s < slots.size(); ++s) {
        if (++digit[s] < slots[s].range) break;
        digit[s] = 0;
      }
      if (s == slots.size()) break;
    }
  }

  bool input_weight(T& carry) const {
    for (int p = 0; p < spec_.k; ++p) {
      if (start(p) != 0) continue;
      const T& xv = ctx_.x[static_cast<std::size_t>(pos_[0][static_cast<std::size_t>(p)])];
      if (xv == 0) return false;
      carry *= xv;
    }
    return true;
  }

  // Multiplies in the layer's factor; false when the term vanishes.
  bool layer_factor(int i, T& carry) {
    const auto ui = static_cast<std::size_t>(i);
    std::array<std::pair<int, int>, 4> edge{};
    std::array<int, 4> mult{};
    int n_edges = 0, traversals = 0;
    for (int p = 0; p < spec_.k; ++p) {
      if (start(p) >= i) continue;
      const std::pair<int, int> e{pos_[ui - 1][static_cast<std::size_t>(p)], pos_[ui][static_cast<std::size_t>(p)]};
      ++traversals;
      int j = 0;
      while (j < n_edges && edge[static_cast<std::size_t>(j)] != e) ++j;
      if (j == n_edges) {
        edge[static_cast<std::size_t>(n_edges)] = e;
        mult[static_cast<std::size_t>(n_edges)] = 0;
        ++n_edges;
      }
      ++mult[static_cast<std::size_t>(j)];
    }
    if (prune_)
      for (int j = 0; j < n_edges; ++j)
        if (mult[static_cast<std::size_t>(j)] % 2 != 0) return false;

    T f(1);
    for (int j = 0; j < n_edges; ++j) f *= ctx_.moment(mult[static_cast<std::size_t>(j)]);
    if (f == 0) return false;
    // s_i^traversals, traversals even whenever f != 0
    for (int t = 0; t < traversals / 2; ++t) f *= ctx_.s2[ui];

    if (i < d_) {
      std::set<int> occupied;
      for (int p = 0; p < spec_.k; ++p)
        if (start(p) <= i) occupied.insert(pos_[ui][static_cast<std::size_t>(p)]);
      for (std::size_t c = 0; c < occupied.size(); ++c) f *= ctx_.half();
    } else if (ctx_.convention == BiasConvention::paper) {
      for (int p = 0; p < spec_.k; ++p)
        if (start(p) == d_) {
          f *= ctx_.half();
          break;
        }
    }

    for (std::size_t m = 0; m < spec_.marks.size(); ++m) {
      const Mark& mk = spec_.marks[m];
      const bool ok = start(mk.a) < i && start(mk.b) < i &&
                      pos_[ui - 1][static_cast<std::size_t>(mk.a)] == pos_[ui - 1][static_cast<std::size_t>(mk.b)] &&
                      pos_[ui][static_cast<std::size_t>(mk.a)] == pos_[ui][static_cast<std::size_t>(mk.b)];
      valid_[m][ui] = ok;
      quartic_[m][ui] = 0;
      if (ok) {
        const std::pair<int, int> e{pos_[ui - 1][static_cast<std::size_t>(mk.a)], pos_[ui][static_cast<std::size_t>(mk.a)]};
        for (int j = 0; j < n_edges; ++j)
          if (edge[static_cast<std::size_t>(j)] == e) quartic_[m][ui] = mult[static_cast<std::size_t>(j)] == 4;
      }
    }
    carry *= f;
    return true;
  }

  bool same_marked_edge(std::size_t m1, std::size_t m2, int i) const {
    const auto ui = static_cast<std::size_t>(i);
    const int a = spec_.marks[m1].a, b = spec_.marks[m2].a;
    return pos_[ui - 1][static_cast<std::size_t>(a)] == pos_[ui - 1][static_cast<std::size_t>(b)] &&
           pos_[ui][static_cast<std::size_t>(a)] == pos_[ui][static_cast<std::size_t>(b)];
  }

  void leaf(const T& product) {
    const std::size_t nm = spec_.marks.size();
    const T inv_mu4 = T(1) / ctx_.mu4;
    if (nm == 0) {
      total_ += product;
      return;
    }
    // The marked-edge correction: an edge traversed four times carries mu4,
    // and removing two powers of W leaves E[W^2] = 1 (or E[W^0] = 1).
    T weight(0);
    if (nm == 1) {
      for (int i = 1; i <= d_; ++i)
        if (valid_[0][static_cast<std::size_t>(i)]) weight += quartic_[0][static_cast<std::size_t>(i)] ? inv_mu4 : T(1);
    } else {
      for (int i1 = 1; i1 <= d_; ++i1) {
        if (!valid_[0][static_cast<std::size_t>(i1)]) continue;
        for (int i2 = 1; i2 <= d_; ++i2) {
          if (!valid_[1][static_cast<std::size_t>(i2)]) continue;
          if (spec_.distinct_mark_layers && i1 == i2) continue;
          const bool q1 = quartic_[0][static_cast<std::size_t>(i1)];
          const bool q2 = quartic_[1][static_cast<std::size_t>(i2)];
          if (i1 == i2 && same_marked_edge(0, 1, i1)) weight += q1 ? inv_mu4 : T(1);
          else weight += (q1 ? inv_mu4 : T(1)) * (q2 ? inv_mu4 : T(1));
        }
      }
    }
    total_ += product * weight;
  }

  const OracleContext<T>& ctx_;
  FamilySpec spec_;
  bool prune_;
  int d_;
  int lo_ = 0;
  bool has_input_ = false;
  std::vector<std::array<int, 4>> pos_;
  std::vector<T> base_;
  std::vector<std::vector<char>> valid_;
  std::vector<std::vector<char>> quartic_;
  T total_{0};
};

template <class T>
T family_sum(const OracleContext<T>& ctx, const FamilySpec& spec, bool prune_odd = true) {
  return FamilyWalker<T>(ctx, spec, prune_odd).run();
}

}  // namespace detail

template <class T>
struct MomentSet {
  T Kw{0}, Kw2{0}, Kb{0}, Kb2{0}, KbKw{0}, Dww{0}, Dwb{0};
};

// All seven moments by enumeration. The walker is exact for T = Rational.
template <class T>
MomentSet<T> enumerate_moments(const Architecture& arch, const Eigen::VectorXd& x, const T& mu4, BiasConvention conv,
                               double cap = kDefaultFourPathCap, bool prune_odd = true) {
  check_cap(arch, cap);
  const detail::OracleContext<T> ctx(arch, x, mu4, conv);
  const int d = arch.depth();
  using detail::FamilySpec;
  MomentSet<T> m;
  m.Kw = detail::family_sum(ctx, FamilySpec{2, {0, 0, 0, 0}, {{0, 1}}, false}, prune_odd);
  m.Kw2 = detail::family_sum(ctx, FamilySpec{4, {0, 0, 0, 0}, {{0, 1}, {2, 3}}, false}, prune_odd);
  m.Dww = detail::family_sum(ctx, FamilySpec{4, {0, 0, 0, 0}, {{0, 1}, {1, 2}}, true}, prune_odd);
  for (int l = 1; l <= d; ++l) {
    m.Kb += detail::family_sum(ctx, FamilySpec{2, {l, l, 0, 0}, {}, false}, prune_odd);
    m.KbKw += detail::family_sum(ctx, FamilySpec{4, {l, l, 0, 0}, {{2, 3}}, false}, prune_odd);
    m.Dwb += detail::family_sum(ctx, FamilySpec{4, {l, l, 0, 0}, {{1, 2}}, false}, prune_odd);
    for (int l2 = 1; l2 <= d; ++l2) m.Kb2 += detail::family_sum(ctx, FamilySpec{4, {l, l, l2, l2}, {}, false}, prune_odd);
  }
  return m;
}

// First moments in closed layered form (no enumeration, no cap): every path
// pair that survives the expectation is a doubled single path.
template <class T>
std::pair<T, T> layered_first_moments(const Architecture& arch, const Eigen::VectorXd& x, BiasConvention conv) {
  const detail::OracleContext<T> ctx(arch, x, T(3), conv);
  const int d = arch.depth();
  // down[l] = sum over paths from one neuron at layer l of prod_{i>l} n-weighted factors
  std::vector<T> down(static_cast<std::size_t>(d + 1), T(1));
  for (int l = d - 1; l >= 0; --l) {
    const int i = l + 1;
    T f = ctx.s2[static_cast<std::size_t>(i)] * T(arch.width(i));
    if (i < d) f *= ctx.half();
    down[static_cast<std::size_t>(l)] = f * down[static_cast<std::size_t>(l + 1)];
  }
  T xx(0);
  for (const T& v : ctx.x) xx += v * v;
  const T kw = T(d) * xx * down[0];
  T kb(0);
  for (int l = 1; l <= d; ++l) {
    T start = T(arch.width(l));
    if (l < d) {
      start *= ctx.half();
      if (conv == BiasConvention::corrected) start *= ctx.surv[static_cast<std::size_t>(l - 1)];
    } else if (conv == BiasConvention::paper) {
      start *= ctx.half();
    }
    kb += start * down[static_cast<std::size_t>(l)];
  }
  return {kw, kb};
}

inline Rational exact_moment_kw(const Architecture& arch, const Eigen::VectorXd& x, double cap = kDefaultPathCap) {
  check_cap(arch, cap);
  const detail::OracleContext<Rational> ctx(arch, x, Rational(3), BiasConvention::corrected);
  return detail::family_sum(ctx, detail::FamilySpec{2, {0, 0, 0, 0}, {{0, 1}}, false});
}

inline Rational mu4_rational(const WeightDistribution& dist) {
  const auto [num, den] = dist.fourth_moment_ratio();
  return Rational(num) / Rational(den);
}

inline Rational exact_second_moment_kw(const Architecture& arch, const Eigen::VectorXd& x, const Rational& mu4,
                                       double cap = kDefaultFourPathCap) {
  check_cap(arch, cap);
  const detail::OracleContext<Rational> ctx(arch, x, mu4, BiasConvention::corrected);
  return detail::family_sum(ctx, detail::FamilySpec{4, {0, 0, 0, 0}, {{0, 1}, {2, 3}}, false});
}

// ---------------------------------------------------------------------------
// Aggregates over the four input-index patterns a_j, weighted by F_*

namespace detail {

inline const std::array<std::array<int, 4>, 4>& input_patterns() {
  static const std::array<std::array<int, 4>, 4> a{{{0, 0, 0, 0}, {0, 1, 0, 1}, {0, 0, 1, 1}, {0, 1, 1, 0}}};
  return a;
}

// Calls f(tuple, edges) for every even 4-tuple of input paths with Gamma(0) = a.
template <class F>
void for_each_even_quadruple(const Architecture& arch, const std::array<int, 4>& a, F&& f) {
  const int d = arch.depth();
  std::array<std::vector<Path>, 2> from{all_paths_from(arch, 0, 0), arch.n0 > 1 ? all_paths_from(arch, 0, 1) : std::vector<Path>{}};
  const auto& P0 = from[static_cast<std::size_t>(a[0])];
  const auto& P1 = from[static_cast<std::size_t>(a[1])];
  const auto& P2 = from[static_cast<std::size_t>(a[2])];
  const auto& P3 = from[static_cast<std::size_t>(a[3])];
  PathTuple t{{0, 0, 0, 0}, {{}, {}, {}, {}}};
  for (const auto& g0 : P0)
    for (const auto& g1 : P1)
      for (const auto& g2 : P2)
        for (const auto& g3 : P3) {
          t.paths = {g0, g1, g2, g3};
          const EdgeMultiset e = EdgeMultiset::of(t, d);
          if (e.even()) f(t, e);
        }
}

inline bool shares_edge(const PathTuple& t, int a, int b, int i) {
  return t.at(a, i - 1) == t.at(b, i - 1) && t.at(a, i) == t.at(b, i);
}

}  // namespace detail

struct PatternAggregates {
  std::array<double, 4> I{};   // sum F_* #{e1 in g1 & g2, e2 in g3 & g4}
  std::array<double, 4> II{};  // sum F_* #{e1 in g1 & g2, e2 in g2 & g3, e1 != e2}
};

// F_*(Gamma) = prod_i 2^{2-|Gamma(i)|} / n_{i-1}^2 * mu4^{1{|Gamma(i-1)| = |Gamma(i)| = 1}}
inline PatternAggregates pattern_aggregates(const Architecture& arch, double mu4, double cap = kDefaultFourPathCap) {
  check_cap(arch, cap);
  PatternAggregates out;
  const int d = arch.depth();
  for (std::size_t j = 0; j < 4; ++j) {
    if (j > 0 && arch.n0 < 2) continue;
    detail::for_each_even_quadruple(arch, detail::input_patterns()[j], [&](const PathTuple& t, const EdgeMultiset&) {
      double F = 1.0;
      for (int i = 1; i <= d; ++i) {
        const auto gi = t.occupied(i).size();
        const auto gp = t.occupied(i - 1).size();
        F *= std::ldexp(1.0, 2 - static_cast<int>(gi)) / (static_cast<double>(arch.width(i - 1)) * arch.width(i - 1));
        if (gi == 1 && gp == 1) F *= mu4;
      }
      int c1 = 0, c2 = 0;
      for (int i1 = 1; i1 <= d; ++i1)
        for (int i2 = 1; i2 <= d; ++i2) {
          if (detail::shares_edge(t, 0, 1, i1) && detail::shares_edge(t, 2, 3, i2)) ++c1;
          if (i1 != i2 && detail::shares_edge(t, 0, 1, i1) && detail::shares_edge(t, 1, 2, i2)) ++c2;
        }
      out.I[j] += F * c1;
      out.II[j] += F * c2;
    });
  }
  return out;
}

struct OracleBreakdown {
  BiasConvention convention = BiasConvention::corrected;
  double mu4 = 3.0;
  double E_Kw = 0, E_Kw2 = 0, E_Kb = 0, E_Kb2 = 0, E_KbKw = 0, E_Dww = 0, E_Dwb = 0;
  double E_K = 0, E_K2 = 0;
  std::map<std::string, std::string> exact;  // rational strings when the inputs are rational
  PatternAggregates aggregates;
};

inline OracleBreakdown exact_bias_and_mixed_moments(const Architecture& arch, const Eigen::VectorXd& x,
                                                    const WeightDistribution& dist, BiasConvention conv,
                                                    double cap = kDefaultFourPathCap) {
  const MomentSet<Rational> m = enumerate_moments<Rational>(arch, x, mu4_rational(dist), conv, cap);
  OracleBreakdown b;
  b.convention = conv;
  b.mu4 = dist.fourth_moment();
  auto put = [&](const std::string& name, const Rational& v, double& slot) {
    slot = static_cast<double>(v);
    b.exact[name] = v.str();
  };
  put("E_Kw", m.Kw, b.E_Kw);
  put("E_Kw2", m.Kw2, b.E_Kw2);
  put("E_Kb", m.Kb, b.E_Kb);
  put("E_Kb2", m.Kb2, b.E_Kb2);
  put("E_KbKw", m.KbKw, b.E_KbKw);
  put("E_Dww", m.Dww, b.E_Dww);
  put("E_Dwb", m.Dwb, b.E_Dwb);
  put("E_K", m.Kw + m.Kb, b.E_K);
  put("E_K2", m.Kw2 + m.Kb2 + 2 * m.KbKw, b.E_K2);
  b.aggregates = pattern_aggregates(arch, b.mu4, cap);
  return b;
}

// Exact E[K] from the layered form; no cap, so it scales to any width.
inline double oracle_mean_kernel(const Architecture& arch, const Eigen::VectorXd& x,
                                 BiasConvention conv = BiasConvention::corrected) {
  const auto [kw, kb] = layered_first_moments<Rational>(arch, x, conv);
  return static_cast<double>(kw + kb);
}

// ---------------------------------------------------------------------------
// Counting lemmas

struct FiberMismatch {
  int size = 0;
  int predicted = 0;
  EdgeMultiset edges;
};

struct FiberReport {
  long instances = 0;   // distinct edge multisets E^V
  long pairs = 0;       // path pairs V scanned
  long mismatches = 0;
  std::vector<FiberMismatch> entries;
};

// Groups every pair of input-to-output paths by its edge multiset and checks
// each group size against 2^{#loops(V) + 1{|V(0)| = 2}}.
inline FiberReport verify_fiber_counts(const Architecture& arch, double cap = kDefaultFourPathCap) {
  check_cap(arch, cap);
  const int d = arch.depth();
  std::vector<Path> paths;
  for (int a = 0; a < arch.n0; ++a)
    for (auto& p : all_paths_from(arch, 0, a)) paths.push_back(std::move(p));

  struct Group {
    int size = 0;
    std::set<int> predicted;
  };
  std::map<EdgeMultiset, Group> groups;
  FiberReport r;
  for (const auto& v1 : paths)
    for (const auto& v2 : paths) {
      const PathTuple t{{0, 0}, {v1, v2}};
      const EdgeMultiset e = EdgeMultiset::of(t, d);
      auto& g = groups[e];
      ++g.size;
      const int start_split = v1[0] != v2[0] ? 1 : 0;
      g.predicted.insert(1 << (e.loops() + start_split));
      ++r.pairs;
    }
  r.instances = static_cast<long>(groups.size());
  for (const auto& [e, g] : groups) {
    if (g.predicted.size() == 1 && *g.predicted.begin() == g.size) continue;
    ++r.mismatches;
    r.entries.push_back({g.size, *g.predicted.begin(), e});
  }
  return r;
}

struct JacobianCase {
  int pattern = 0;  // j = 1..4
  int i1 = 0, i2 = 0;
  long count = 0;        // brute force
  Rational predicted{0};
  int loops = 0;
};

struct JacobianReport {
  long cases = 0;
  long mismatches = 0;
  double discrepancy_rate = 0.0;
  long ratio_outside_allowed = 0;             // count / 6^loops not in {0, 1/36, 1/6, 1}
  std::map<std::string, long> ratio_histogram;  // count / 6^loops -> occurrences
  std::vector<JacobianCase> mismatch_entries;   // truncated
};

namespace detail {

inline bool has_single_right(const EdgeMultiset& e, const std::set<int>& start, int l) {
  if (l == 0) return start.size() == 1;
  return e.right(l).size() == 1;
}

// A(E, i1, i2) with the unnamed set U read as |R(E(i))| = 2.
inline Rational jacobian_weight(const EdgeMultiset& e, const std::set<int>& start, int i1, int i2) {
  const auto L1 = e.left(i1).size(), R1 = e.right(i1).size();
  const auto L2 = e.left(i2).size(), R2 = e.right(i2).size();
  const int lo = std::min(i1, i2), hi = std::max(i1, i2);
  bool collide = false;
  for (int l = lo; l < hi; ++l) collide = collide || has_single_right(e, start, l);
  Rational A(0);
  if (L1 == 1 && R1 == 1 && L2 == 1 && R2 == 1) A += 1;
  if ((L1 == 1 && R1 == 1 && R2 == 2) || (L2 == 1 && R2 == 1 && R1 == 2)) A += Rational(1, 6);
  if (R1 == 2 && R2 == 2 && !collide) A += Rational(1, 6);
  if (R1 == 2 && R2 == 2 && collide) A += Rational(1, 36);
  return A;
}

inline std::string rational_label(const Rational& r) { return r.str(); }

}  // namespace detail

// Brute-force count of 4-tuples with a given edge multiset and marks
// (g1, g2 share an edge at layer i1; g3, g4 share one at i2) against
// 6^{#loops(E)} A(E, i1, i2) times C_hat for the patterns j = 3, 4.
inline JacobianReport verify_jacobian_counts(const Architecture& arch, double cap = kDefaultFourPathCap,
                                             std::size_t keep_entries = 50) {
  check_cap(arch, cap);
  const int d = arch.depth();
  JacobianReport r;
  for (std::size_t j = 0; j < 4; ++j) {
    if (j > 0 && arch.n0 < 2) continue;
    const auto& a = detail::input_patterns()[j];
    const std::set<int> start(a.begin(), a.end());
    std::map<EdgeMultiset, std::vector<long>> counts;  // (i1, i2) flattened
    detail::for_each_even_quadruple(arch, a, [&](const PathTuple& t, const EdgeMultiset& e) {
      auto& c = counts[e];
      if (c.empty()) c.assign(static_cast<std::size_t>(d * d), 0);
      for (int i1 = 1; i1 <= d; ++i1)
        for (int i2 = 1; i2 <= d; ++i2)
          if (detail::shares_edge(t, 0, 1, i1) && detail::shares_edge(t, 2, 3, i2))
            ++c[static_cast<std::size_t>((i1 - 1) * d + (i2 - 1))];
    });
    for (const auto& [e, c] : counts) {
      const int loops = e.loops();
      Rational six(1);
      for (int k = 0; k < loops; ++k) six *= 6;
      for (int i1 = 1; i1 <= d; ++i1)
        for (int i2 = 1; i2 <= d; ++i2) {
          const long count = c[static_cast<std::size_t>((i1 - 1) * d + (i2 - 1))];
          Rational pred = six * detail::jacobian_weight(e, start, i1, i2);
          if (j >= 2) {
            bool chat = false;
            for (int l = 0; l < std::min(i1, i2); ++l) chat = chat || detail::has_single_right(e, start, l);
            if (!chat) pred = 0;
          }
          ++r.cases;
          const Rational ratio = Rational(count) / six;
          ++r.ratio_histogram[detail::rational_label(ratio)];
          if (!(ratio == 0 || ratio == Rational(1, 36) || ratio == Rational(1, 6) || ratio == 1)) ++r.ratio_outside_allowed;
          if (Rational(count) != pred) {
            ++r.mismatches;
            if (r.mismatch_entries.size() < keep_entries)
              r.mismatch_entries.push_back({static_cast<int>(j + 1), i1, i2, count, pred, loops});
          }
        }
    }
  }
  r.discrepancy_rate = r.cases ? static_cast<double>(r.mismatches) / static_cast<double>(r.cases) : 0.0;
  return r;
}

}  // namespace ntklab
