#pragma once

// Functionals attached to a snapshot: localized energy and dissipation, firewalls,
// Hamiltonian field, escape points, distance to the stationary set.

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "gradflow/constants.hpp"
#include "gradflow/semiflow.hpp"

namespace gradflow {

namespace detail {

/// |a|_D^2 for a raw n-vector.
inline double dnorm2(const double* a, const Mat& D, int n) {
  if (n == 1) return D(0, 0) * a[0] * a[0];
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s += a[i] * D(i, j) * a[j];
  return s;
}

inline double dinner(const double* a, const double* b, const Mat& D, int n) {
  if (n == 1) return D(0, 0) * a[0] * b[0];
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s += a[i] * D(i, j) * b[j];
  return s;
}

}  // namespace detail

/// chi(x, t): 1 on [-ct, ct], exp(-kappa dist) outside.
inline double window_weight(double x, double t, double c, double kappa) {
  const double edge = c * t;
  const double d = std::abs(x) - edge;
  return d <= 0.0 ? 1.0 : std::exp(-kappa * d);
}

struct WindowSpec {
  double c = 0.0;      // window half-speed (c_noinv)
  double kappa = 1.0;  // tail decay
};

/// Localized energy sum chi (|u_x|_D^2/2 + V(u)) dx.
///
/// The gradient term uses forward differences at cell midpoints and the
/// potential term the trapezoid rule on nodes; for chi = 1 this is the exact
/// Lyapunov functional of the semi-discrete flow.
inline double localized_energy(const State& st, const Potential& v, const Diffusion& d, const WindowSpec& w) {
  const auto& u = st.u;
  const int N = u.grid.N, n = u.n;
  const double dx = u.grid.dx;
  const Mat& D = d.matrix();
  std::vector<double> diff(n);
  double e = 0.0;
  for (int i = 0; i + 1 < N; ++i) {
    for (int c = 0; c < n; ++c) diff[c] = (u(i + 1, c) - u(i, c)) / dx;
    const double xm = u.grid.x(i) + 0.5 * dx;
    e += window_weight(xm, st.t, w.c, w.kappa) * 0.5 * detail::dnorm2(diff.data(), D, n) * dx;
  }
  for (int i = 0; i < N; ++i) {
    const double wt = (i == 0 || i == N - 1) ? 0.5 : 1.0;
    e += wt * window_weight(u.grid.x(i), st.t, w.c, w.kappa) * v.value(u.point(i)) * dx;
  }
  return e;
}

/// Unweighted energy over [-ct, ct] (nodes inside the interval).
inline double window_energy(const State& st, const Potential& v, const Diffusion& d, double half_width) {
  const auto& u = st.u;
  const int N = u.grid.N, n = u.n;
  const double dx = u.grid.dx;
  const Mat& D = d.matrix();
  std::vector<double> diff(n);
  double e = 0.0;
  for (int i = 0; i + 1 < N; ++i) {
    const double xm = u.grid.x(i) + 0.5 * dx;
    if (std::abs(xm) > half_width) continue;
    for (int c = 0; c < n; ++c) diff[c] = (u(i + 1, c) - u(i, c)) / dx;
    e += 0.5 * detail::dnorm2(diff.data(), D, n) * dx;
  }
  for (int i = 0; i < N; ++i) {
    if (std::abs(u.grid.x(i)) > half_width) continue;
    const double wt = (i == 0 || i == N - 1) ? 0.5 : 1.0;
    e += wt * v.value(u.point(i)) * dx;
  }
  return e;
}

/// Localized dissipation sum chi |u_t|^2 dx.
inline double dissipation(const State& st, const WindowSpec& w) {
  const auto& r = st.rhs;
  const int N = r.grid.N, n = r.n;
  const double dx = r.grid.dx;
  double s = 0.0;
  for (int i = 0; i < N; ++i) {
    double q = 0.0;
    for (int c = 0; c < n; ++c) q += r(i, c) * r(i, c);
    const double wt = (i == 0 || i == N - 1) ? 0.5 : 1.0;
    s += wt * window_weight(r.grid.x(i), st.t, w.c, w.kappa) * q * dx;
  }
  return s;
}

inline double sup_ut(const State& st) { return st.rhs.sup_norm(); }

struct FirewallParams {
  double kappa = 1.0;
  double w_en = 1.0;
};

/// log F(xi, t) for the firewall around m, evaluated with a log-sum-exp so
/// that xi may lie far outside the grid. Returns -inf when the integrand vanishes.
inline double log_firewall(const State& st, double xi, const Vec& m, const Potential& v, const Diffusion& d,
                           const FirewallParams& p) {
  const auto& u = st.u;
  const int N = u.grid.N, n = u.n;
  const double dx = u.grid.dx;
  const Mat& D = d.matrix();
  std::vector<double> diff(n);
  // terms: (exponent, coefficient) with coefficient >= 0
  std::vector<std::pair<double, double>> terms;
  terms.reserve(2 * N);
  for (int i = 0; i + 1 < N; ++i) {
    for (int c = 0; c < n; ++c) diff[c] = (u(i + 1, c) - u(i, c)) / dx;
    const double g = p.w_en * 0.5 * detail::dnorm2(diff.data(), D, n) * dx;
    if (g > 0.0) terms.emplace_back(-p.kappa * std::abs(u.grid.x(i) + 0.5 * dx - xi), g);
  }
  for (int i = 0; i < N; ++i) {
    double r2 = 0.0;
    for (int c = 0; c < n; ++c) r2 += (u(i, c) - m[c]) * (u(i, c) - m[c]);
    const double wt = (i == 0 || i == N - 1) ? 0.5 : 1.0;
    const double f = wt * (p.w_en * v.value(u.point(i)) + 0.5 * r2) * dx;
    if (f != 0.0) terms.emplace_back(-p.kappa * std::abs(u.grid.x(i) - xi), f);
  }
  if (terms.empty()) return -std::numeric_limits<double>::infinity();
  double amax = -std::numeric_limits<double>::infinity();
  for (const auto& t : terms) amax = std::max(amax, t.first);
  double s = 0.0;
  for (const auto& t : terms) s += std::exp(t.first - amax) * t.second;
  if (s <= 0.0) return -std::numeric_limits<double>::infinity();
  return amax + std::log(s);
}

inline double firewall(const State& st, double xi, const Vec& m, const Potential& v, const Diffusion& d,
                       const FirewallParams& p) {
  return std::exp(log_firewall(st, xi, m, v, d, p));
}

/// Right-hand side of the coercivity bound: min(w_en/2, 1/4) sum psi (|u_x|_D^2 + |u-m|^2) dx.
inline double firewall_coercive_bound(const State& st, double xi, const Vec& m, const Diffusion& d,
                                      const FirewallParams& p) {
  const auto& u = st.u;
  const int N = u.grid.N, n = u.n;
  const double dx = u.grid.dx;
  std::vector<double> diff(n);
  double s = 0.0;
  for (int i = 0; i + 1 < N; ++i) {
    for (int c = 0; c < n; ++c) diff[c] = (u(i + 1, c) - u(i, c)) / dx;
    s += std::exp(-p.kappa * std::abs(u.grid.x(i) + 0.5 * dx - xi)) * detail::dnorm2(diff.data(), d.matrix(), n) * dx;
  }
  for (int i = 0; i < N; ++i) {
    const double wt = (i == 0 || i == N - 1) ? 0.5 : 1.0;
    s += wt * std::exp(-p.kappa * std::abs(u.grid.x(i) - xi)) * (u.at(i) - m).squaredNorm() * dx;
  }
  return std::min(p.w_en / 2.0, 0.25) * s;
}

/// Flux term bounding E'(t) + Delta/2: (kappa^2 lambda_max + kappa c) / w_en * (F_-(-ct) + F_+(ct)).
inline double energy_flux_bound(const State& st, const Vec& m_minus, const Vec& m_plus, const Potential& v,
                                const Diffusion& d, const StructuralConstants& k, double c) {
  const FirewallParams p{k.kappa, k.w_en};
  const double fm = firewall(st, -c * st.t, m_minus, v, d, p);
  const double fp = firewall(st, c * st.t, m_plus, v, d, p);
  return (k.kappa * k.kappa * k.lambda_d_max + k.kappa * c) / k.w_en * (fm + fp);
}

struct HamiltonianField {
  std::vector<double> h;
  double sup = 0.0;
};

/// h = |u_x|_D^2/2 - V(u) with central differences; sup over |x| <= half_width.
inline HamiltonianField hamiltonian_field(const State& st, const Potential& v, const Diffusion& d,
                                          double half_width = std::numeric_limits<double>::infinity()) {
  const auto& u = st.u;
  HamiltonianField out;
  out.h.resize(u.grid.N);
  for (int i = 0; i < u.grid.N; ++i) {
    const Vec ux = u.derivative(i);
    out.h[i] = 0.5 * d.inner(ux, ux) - v.value(u.point(i));
    if (std::abs(u.grid.x(i)) <= half_width) out.sup = std::max(out.sup, std::abs(out.h[i]));
  }
  return out;
}

struct EscapePoint {
  int index = 1;      // i
  int side = -1;      // -1 for x_{i,-}, +1 for x_{i,+}
  double x = 0.0;
  int m_ref = 0;      // index into the MinimaSet
  double transversality = 0.0;  // <u - m, u_x>_D at x
};

struct EscapeScan {
  std::vector<EscapePoint> points;
  std::vector<int> chain;  // reference minima m_0, m_1, ...
  bool ambiguous = false;  // escaped without re-entering any ball
};

namespace detail {

inline double dist_d(const Profile& u, int i, const Vec& m, const Diffusion& d) {
  const Vec w = u.at(i) - m;
  return d.norm(w);
}

inline EscapePoint make_escape(const Profile& u, int i, double f0, double f1, double r, int idx, int side, int mref,
                               const MinimaSet& M, const Diffusion& d) {
  // root of f(x) = dist - r between nodes i and i+1
  const double s = (f0 == f1) ? 0.0 : (r - f0) / (f1 - f0);
  EscapePoint e;
  e.index = idx;
  e.side = side;
  e.x = u.grid.x(i) + s * u.grid.dx;
  e.m_ref = mref;
  const Vec ui = (1.0 - s) * u.at(i) + s * u.at(i + 1);
  const Vec ux = (1.0 - s) * u.derivative(i) + s * u.derivative(i + 1);
  e.transversality = d.inner(ui - M.points[mref], ux);
  return e;
}

}  // namespace detail

/// Escape points of a profile: x_{1,-} is the first exit from the d_Esc ball of
/// the left-end minimum, x_{i,+} the next entry into the ball of some minimum
/// m_i, and x_{i+1,-} the following exit from that same ball.
inline EscapeScan escape_points(const Profile& u, const MinimaSet& M, const Diffusion& d, double d_Esc) {
  EscapeScan scan;
  const int N = u.grid.N;
  int ref = static_cast<int>(M.nearest(u.at(0), d));
  scan.chain.push_back(ref);
  int idx = 1;
  int i = 0;
  while (i + 1 < N) {
    // look for the exit from the current ball
    double f0 = detail::dist_d(u, i, M.points[ref], d);
    bool exited = false;
    for (; i + 1 < N; ++i) {
      const double f1 = detail::dist_d(u, i + 1, M.points[ref], d);
      if (f0 <= d_Esc && f1 > d_Esc) {
        scan.points.push_back(detail::make_escape(u, i, f0, f1, d_Esc, idx, -1, ref, M, d));
        exited = true;
        ++i;
        break;
      }
      f0 = f1;
    }
    if (!exited) break;
    // look for the entry into some ball
    bool entered = false;
    for (; i + 1 < N; ++i) {
      for (std::size_t k = 0; k < M.size(); ++k) {
        const double g0 = detail::dist_d(u, i, M.points[k], d);
        const double g1 = detail::dist_d(u, i + 1, M.points[k], d);
        if (g0 > d_Esc && g1 <= d_Esc) {
          ref = static_cast<int>(k);
          scan.points.push_back(detail::make_escape(u, i, g0, g1, d_Esc, idx, +1, ref, M, d));
          scan.chain.push_back(ref);
          entered = true;
          break;
        }
      }
      if (entered) {
        ++i;
        break;
      }
    }
    if (!entered) {
      scan.ambiguous = true;
      break;
    }
    ++idx;
  }
  return scan;
}

struct EscapeVelocity {
  double slope = 0.0;    // finite difference of the tracked positions
  double formula = 0.0;  // -<u-m, u_t>_D / <u-m, u_x>_D
  double denominator = 0.0;
};

/// Compares the tracked slope of x_{1,-}(t) with the implicit-function formula.
inline EscapeVelocity escape_velocity(const std::vector<double>& times, const std::vector<double>& positions,
                                      const State& st, const MinimaSet& M, const Diffusion& d, double d_Esc,
                                      double eps_transv = 1e-3) {
  EscapeVelocity out;
  if (times.size() >= 2) {
    const std::size_t k = times.size() - 1;
    out.slope = (positions[k] - positions[k - 1]) / (times[k] - times[k - 1]);
  }
  const auto scan = escape_points(st.u, M, d, d_Esc);
  if (scan.points.empty()) return out;
  const auto& e = scan.points.front();
  const auto& u = st.u;
  const double s = u.grid.index_of(e.x);
  int i = std::clamp(static_cast<int>(std::floor(s)), 0, u.grid.N - 2);
  const double f = s - i;
  const Vec w = (1.0 - f) * u.at(i) + f * u.at(i + 1) - M.points[e.m_ref];
  const Vec ux = (1.0 - f) * u.derivative(i) + f * u.derivative(i + 1);
  const Vec ut = (1.0 - f) * st.rhs.at(i) + f * st.rhs.at(i + 1);
  out.denominator = d.inner(w, ux);
  if (std::abs(out.denominator) < eps_transv) {
    Error err(ErrorKind::TransversalityLoss, "escape point is not transversal");
    err.detail = out.denominator;
    throw err;
  }
  out.formula = -d.inner(w, ut) / out.denominator;
  return out;
}

/// Curve samples (u, u') of a stationary orbit.
struct PhaseCurve {
  std::vector<Vec> points;  // each of size 2n
};

/// Nearest-point index over a set of polylines in R^{2n} plus isolated points.
class PhaseIndex {
 public:
  PhaseIndex() = default;

  PhaseIndex(std::vector<PhaseCurve> curves, std::vector<Vec> isolated) : curves_(std::move(curves)) {
    for (auto& p : isolated) curves_.push_back(PhaseCurve{{p}});
    if (curves_.empty()) return;
    dim_ = static_cast<int>(curves_.front().points.front().size());
    if (dim_ == 2) build<2>(tree2_);
    else if (dim_ == 4) build<4>(tree4_);
  }

  bool empty() const { return curves_.empty(); }

  double distance(const Vec& q) const {
    if (curves_.empty()) return std::numeric_limits<double>::infinity();
    if (dim_ == 2) return query<2>(tree2_, q);
    if (dim_ == 4) return query<4>(tree4_, q);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < curves_.size(); ++c)
      for (std::size_t j = 0; j < curves_[c].points.size(); ++j) best = std::min(best, near_segments(c, j, q));
    return best;
  }

 private:
  template <int K>
  using Point = boost::geometry::model::point<double, K, boost::geometry::cs::cartesian>;
  template <int K>
  using Entry = std::pair<Point<K>, std::pair<std::size_t, std::size_t>>;
  template <int K>
  using Tree = boost::geometry::index::rtree<Entry<K>, boost::geometry::index::quadratic<16>>;

  template <int K>
  static Point<K> to_point(const Vec& v) {
    Point<K> p;
    if constexpr (K >= 1) boost::geometry::set<0>(p, v[0]);
    if constexpr (K >= 2) boost::geometry::set<1>(p, v[1]);
    if constexpr (K >= 3) boost::geometry::set<2>(p, v[2]);
    if constexpr (K >= 4) boost::geometry::set<3>(p, v[3]);
    return p;
  }

  template <int K>
  void build(std::unique_ptr<Tree<K>>& tree) {
    std::vector<Entry<K>> entries;
    for (std::size_t c = 0; c < curves_.size(); ++c)
      for (std::size_t j = 0; j < curves_[c].points.size(); ++j)
        entries.emplace_back(to_point<K>(curves_[c].points[j]), std::make_pair(c, j));
    tree = std::make_unique<Tree<K>>(entries);
  }

  template <int K>
  double query(const std::unique_ptr<Tree<K>>& tree, const Vec& q) const {
    std::vector<Entry<K>> hits;
    tree->query(boost::geometry::index::nearest(to_point<K>(q), 8), std::back_inserter(hits));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& h : hits) best = std::min(best, near_segments(h.second.first, h.second.second, q));
    return best;
  }

  // distance from q to the segments adjacent to sample j of curve c
  double near_segments(std::size_t c, std::size_t j, const Vec& q) const {
    const auto& pts = curves_[c].points;
    double best = (pts[j] - q).norm();
    auto seg = [&](const Vec& a, const Vec& b) {
      const Vec ab = b - a;
      const double l2 = ab.squaredNorm();
      double s = l2 > 0.0 ? (q - a).dot(ab) / l2 : 0.0;
      s = std::clamp(s, 0.0, 1.0);
      best = std::min(best, (a + s * ab - q).norm());
    };
    if (j > 0) seg(pts[j - 1], pts[j]);
    if (j + 1 < pts.size()) seg(pts[j], pts[j + 1]);
    return best;
  }

  std::vector<PhaseCurve> curves_;
  int dim_ = 0;
  std::unique_ptr<Tree<2>> tree2_;
  std::unique_ptr<Tree<4>> tree4_;
};

/// sup over |x| <= half_width of the distance from (u, u_x) to the indexed set.
inline double distance_to_stationary_set(const State& st, const PhaseIndex& index,
                                         double half_width = std::numeric_limits<double>::infinity()) {
  const auto& u = st.u;
  const int n = u.n;
  double sup = 0.0;
  Vec q(2 * n);
  for (int i = 0; i < u.grid.N; ++i) {
    if (std::abs(u.grid.x(i)) > half_width) continue;
    q.head(n) = u.at(i);
    q.tail(n) = u.derivative(i);
    sup = std::max(sup, index.distance(q));
  }
  return sup;
}

struct BallFunctionals {
  double F0 = 0.0;
  double Q = 0.0;
};

/// F_0 and Q with weight exp(-kappa0 |x - xi|); v_min is min V over the attracting box.
inline BallFunctionals appendix_ball_functionals(const State& st, double xi, double kappa0, const Potential& v,
                                                 const Diffusion& d, double v_min) {
  const auto& u = st.u;
  const int N = u.grid.N, n = u.n;
  const double dx = u.grid.dx;
  std::vector<double> diff(n);
  BallFunctionals out;
  for (int i = 0; i + 1 < N; ++i) {
    for (int c = 0; c < n; ++c) diff[c] = (u(i + 1, c) - u(i, c)) / dx;
    const double g = std::exp(-kappa0 * std::abs(u.grid.x(i) + 0.5 * dx - xi)) * 0.5 *
                     detail::dnorm2(diff.data(), d.matrix(), n) * dx;
    out.F0 += g;
    out.Q += g;
  }
  for (int i = 0; i < N; ++i) {
    const double wt = (i == 0 || i == N - 1) ? 0.5 : 1.0;
    const double psi = wt * std::exp(-kappa0 * std::abs(u.grid.x(i) - xi)) * dx;
    const double half_sq = 0.5 * u.at(i).squaredNorm();
    out.F0 += psi * (v.value(u.point(i)) - v_min + half_sq);
    out.Q += psi * half_sq;
  }
  return out;
}

/// min V over the box, by grid scan.
inline double potential_floor(const Potential& v, const Box& box) {
  const int n = v.dim();
  double best = std::numeric_limits<double>::infinity();
  detail::for_each_grid_point(box, n == 1 ? 20001 : (n == 2 ? 401 : 21),
                              [&](const Vec& u) { best = std::min(best, v.value(u)); });
  return best;
}

}  // namespace gradflow
