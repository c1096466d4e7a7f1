#pragma once

// First-order IMEX integration of u_t = -grad V(u) + D u_xx on a truncated interval.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "gradflow/constants.hpp"
#include "gradflow/errors.hpp"
#include "gradflow/potential.hpp"

namespace gradflow {

struct Grid {
  double x_left = 0.0;
  double dx = 0.05;
  int N = 0;

  static Grid span(double a, double b, double dx) {
    if (!(b > a) || !(dx > 0.0)) throw Error(ErrorKind::Config, "grid needs b > a and dx > 0");
    Grid g;
    g.x_left = a;
    g.dx = dx;
    g.N = static_cast<int>(std::llround((b - a) / dx)) + 1;
    if (g.N < 16) throw Error(ErrorKind::Config, "grid needs at least 16 points");
    return g;
  }
  double x(int i) const { return x_left + i * dx; }
  double x_right() const { return x(N - 1); }
  /// Fractional node index of position x.
  double index_of(double xp) const { return (xp - x_left) / dx; }
};

/// Samples of u: grid -> R^n, stored point-major (u_0^1 .. u_0^n, u_1^1, ...).
struct Profile {
  Grid grid;
  int n = 1;
  std::vector<double> values;

  Profile() = default;
  Profile(const Grid& g, int dim, double fill = 0.0) : grid(g), n(dim), values(static_cast<std::size_t>(g.N) * dim, fill) {}

  int size() const { return grid.N; }
  double& operator()(int i, int c) { return values[static_cast<std::size_t>(i) * n + c]; }
  double operator()(int i, int c) const { return values[static_cast<std::size_t>(i) * n + c]; }
  std::span<const double> point(int i) const { return {values.data() + static_cast<std::size_t>(i) * n, static_cast<std::size_t>(n)}; }
  std::span<double> point(int i) { return {values.data() + static_cast<std::size_t>(i) * n, static_cast<std::size_t>(n)}; }
  Vec at(int i) const { return Eigen::Map<const Vec>(values.data() + static_cast<std::size_t>(i) * n, n); }
  void set(int i, const Vec& v) {
    for (int c = 0; c < n; ++c) (*this)(i, c) = v[c];
  }
  /// Five-point central difference in the interior, three-point next to the
  /// ends, one-sided at the ends.
  Vec derivative(int i) const {
    if (i == 0) return (at(1) - at(0)) / grid.dx;
    if (i == grid.N - 1) return (at(i) - at(i - 1)) / grid.dx;
    if (i == 1 || i == grid.N - 2) return (at(i + 1) - at(i - 1)) / (2.0 * grid.dx);
    return (8.0 * (at(i + 1) - at(i - 1)) - (at(i + 2) - at(i - 2))) / (12.0 * grid.dx);
  }
  double sup_norm() const {
    double s = 0.0;
    for (int i = 0; i < grid.N; ++i) s = std::max(s, at(i).norm());
    return s;
  }
  bool finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }
};

struct State {
  double t = 0.0;
  Profile u;
  Profile rhs;  // u_t of the semi-discrete system
};

enum class Boundary { Clamped, Neumann };

/// Smooth cut-off: 1 for y <= 0, 0 for y >= 1.
inline double smooth_cutoff(double y) {
  if (y <= 0.0) return 1.0;
  if (y >= 1.0) return 0.0;
  const double a = std::exp(-1.0 / (1.0 - y));
  const double b = std::exp(-1.0 / y);
  return a / (a + b);
}

struct InitialSpec {
  enum class Kind { Constant, TanhStep, Plateau, Samples };
  Kind kind = Kind::Constant;
  Vec m_minus;        // constant value / left end / plateau background
  Vec m_plus;         // right end
  double center = 0.0;
  double width = std::sqrt(2.0);
  Vec u_neg;          // plateau value
  double L = 10.0;    // plateau half-length
  double s = 1.0;     // plateau scaling
  Profile samples;    // raw data
};

/// Builds the initial profile; ends are set exactly to the declared limits.
inline State init_state(const InitialSpec& spec, const Grid& grid, const MinimaSet& minima) {
  const int n = static_cast<int>(spec.kind == InitialSpec::Kind::Samples ? spec.samples.n : spec.m_minus.size());
  auto check_member = [&](const Vec& m, const char* which) {
    if (m.size() != n || minima.find(m, 1e-6) < 0)
      throw Error(ErrorKind::SpecEndpointMismatch, std::string(which) + " end is not a minimum of V in the zero level set");
  };
  State st;
  st.u = Profile(grid, n);
  switch (spec.kind) {
    case InitialSpec::Kind::Constant:
      check_member(spec.m_minus, "left");
      for (int i = 0; i < grid.N; ++i) st.u.set(i, spec.m_minus);
      break;
    case InitialSpec::Kind::TanhStep:
      check_member(spec.m_minus, "left");
      check_member(spec.m_plus, "right");
      for (int i = 0; i < grid.N; ++i) {
        const double th = 0.5 * (1.0 + std::tanh((grid.x(i) - spec.center) / spec.width));
        st.u.set(i, spec.m_minus + th * (spec.m_plus - spec.m_minus));
      }
      st.u.set(0, spec.m_minus);
      st.u.set(grid.N - 1, spec.m_plus);
      break;
    case InitialSpec::Kind::Plateau:
      check_member(spec.m_minus, "background");
      for (int i = 0; i < grid.N; ++i) {
        const double chi = smooth_cutoff(std::abs(grid.x(i) - spec.center) - spec.L);
        st.u.set(i, spec.m_minus + spec.s * chi * (spec.u_neg - spec.m_minus));
      }
      st.u.set(0, spec.m_minus);
      st.u.set(grid.N - 1, spec.m_minus);
      break;
    case InitialSpec::Kind::Samples:
      if (spec.samples.grid.N != grid.N) throw Error(ErrorKind::Config, "sample count does not match the grid");
      st.u = spec.samples;
      st.u.grid = grid;
      check_member(st.u.at(0), "left");
      check_member(st.u.at(grid.N - 1), "right");
      break;
  }
  st.rhs = Profile(grid, n);
  return st;
}

/// Backward-Euler diffusion, explicit reaction.
///
/// The step solves (I - dt D Lap) delta = dt * rhs(u) for the increment, so that
/// an exact equilibrium stays bitwise fixed.
class Stepper {
 public:
  struct Options {
    double dt = 1e-3;
    Boundary bc = Boundary::Clamped;
    bool reaction = true;
    double blowup_radius = std::numeric_limits<double>::infinity();
  };

  Stepper(PotentialPtr v, const Diffusion& d, const Grid& grid, const Options& opt)
      : v_(std::move(v)), d_(d), grid_(grid), opt_(opt) {
    n_ = d_.dim();
    if (v_ && v_->dim() != n_) throw Error(ErrorKind::Config, "potential and diffusion dimensions differ");
    if (!(opt_.dt > 0.0)) throw Error(ErrorKind::Config, "dt must be positive");
    rotate_ = !d_.is_diagonal();
    scalar_ = dynamic_cast<const detail::ScalarPotential*>(v_.get());
    lambda_.resize(n_);
    for (int c = 0; c < n_; ++c) lambda_[c] = rotate_ ? d_.eigenvalues()[c] : d_.matrix()(c, c);
    factor();
    grad_.resize(static_cast<std::size_t>(grid_.N) * n_);
    work_.resize(static_cast<std::size_t>(grid_.N) * n_);
  }

  const Options& options() const { return opt_; }
  const Grid& grid() const { return grid_; }
  const Diffusion& diffusion() const { return d_; }
  const PotentialPtr& potential() const { return v_; }

  /// u_t = D u_xx - grad V(u); zero on clamped boundary nodes.
  void compute_rhs(State& st) const {
    const int N = grid_.N;
    const double inv_dx2 = 1.0 / (grid_.dx * grid_.dx);
    if (st.rhs.values.size() != st.u.values.size()) st.rhs = Profile(grid_, n_);
    auto& r = st.rhs.values;
    const auto& u = st.u.values;
    if (opt_.reaction) {
      v_->gradient_field(u, grad_);
    } else {
      std::fill(grad_.begin(), grad_.end(), 0.0);
    }
    const Mat& D = d_.matrix();
    if (n_ == 1) {
      const double k = D(0, 0) * inv_dx2;
      for (int i = 1; i < N - 1; ++i) r[i] = k * (u[i + 1] - 2.0 * u[i] + u[i - 1]) - grad_[i];
      if (opt_.bc == Boundary::Clamped) {
        r[0] = 0.0;
        r[N - 1] = 0.0;
      } else {
        r[0] = k * (u[1] - u[0]) - grad_[0];
        r[N - 1] = k * (u[N - 2] - u[N - 1]) - grad_[N - 1];
      }
      return;
    }
    for (int i = 0; i < N; ++i) {
      for (int c = 0; c < n_; ++c) {
        const std::size_t k = static_cast<std::size_t>(i) * n_ + c;
        double lap;
        if (i == 0) {
          lap = (opt_.bc == Boundary::Neumann) ? (u[k + n_] - u[k]) * inv_dx2 : 0.0;
        } else if (i == N - 1) {
          lap = (opt_.bc == Boundary::Neumann) ? (u[k - n_] - u[k]) * inv_dx2 : 0.0;
        } else {
          lap = (u[k + n_] - 2.0 * u[k] + u[k - n_]) * inv_dx2;
        }
        work_[k] = lap;
      }
    }
    for (int i = 0; i < N; ++i) {
      const bool edge = (i == 0 || i == N - 1);
      for (int c = 0; c < n_; ++c) {
        const std::size_t k = static_cast<std::size_t>(i) * n_ + c;
        if (edge && opt_.bc == Boundary::Clamped) {
          r[k] = 0.0;
          continue;
        }
        double diff = 0.0;
        if (n_ == 1) {
          diff = D(0, 0) * work_[k];
        } else {
          for (int e = 0; e < n_; ++e) diff += D(c, e) * work_[static_cast<std::size_t>(i) * n_ + e];
        }
        r[k] = diff - grad_[k];
      }
    }
  }

  void step(State& st) const {
    compute_rhs(st);
    advance(st);
  }

  /// Advances by one step using the rhs already cached in st, then refreshes it.
  void advance(State& st) const {
    const int N = grid_.N;
    const double dt = opt_.dt;
    auto& delta = work_;
    if (n_ == 1) {
      advance_scalar(st);
      return;
    }
    for (std::size_t k = 0; k < delta.size(); ++k) delta[k] = dt * st.rhs.values[k];
    if (rotate_) to_basis(delta);
    for (int c = 0; c < n_; ++c) solve_component(delta, c);
    if (rotate_) from_basis(delta);
    auto& u = st.u.values;
    for (std::size_t k = 0; k < u.size(); ++k) u[k] += delta[k];
    st.t += dt;
    double sup = 0.0;
    for (int i = 0; i < N; ++i) {
      double s = 0.0;
      for (int c = 0; c < n_; ++c) s += u[static_cast<std::size_t>(i) * n_ + c] * u[static_cast<std::size_t>(i) * n_ + c];
      sup = std::max(sup, s);
    }
    if (!(std::sqrt(sup) <= opt_.blowup_radius)) {
      Error err(ErrorKind::BlowUp, "sup|u| exceeded the blow-up radius");
      err.detail = st.t;
      throw err;
    }
    compute_rhs(st);
  }

 private:
  void advance_scalar(State& st) const {
    const int N = grid_.N;
    const double dt = opt_.dt;
    const double* r = st.rhs.values.data();
    double* u = st.u.values.data();
    double* d = work_.data();
    const double* cp = cprime_[0].data();
    const double* id = inv_den_[0].data();
    const double a = a_[0];
    const double a_last = opt_.bc == Boundary::Clamped ? 0.0 : a;
    const double* al = alpha_.data();
    d[0] = dt * r[0] * id[0];
    for (int i = 1; i < N - 1; ++i) d[i] = dt * r[i] * id[i] - al[i] * d[i - 1];
    d[N - 1] = (dt * r[N - 1] - a_last * d[N - 2]) * id[N - 1];
    st.t += dt;
    if (!scalar_ || !opt_.reaction) {
      u[N - 1] += d[N - 1];
      double sup = std::abs(u[N - 1]);
      for (int i = N - 2; i >= 0; --i) {
        d[i] -= cp[i] * d[i + 1];
        u[i] += d[i];
        sup = std::max(sup, std::abs(u[i]));
      }
      check_blowup(sup, st.t);
      compute_rhs(st);
      return;
    }
    // back substitution fused with the refresh of grad V and of the rhs
    double* g = grad_.data();
    double* rr = st.rhs.values.data();
    const double k = d_.matrix()(0, 0) / (grid_.dx * grid_.dx);
    u[N - 1] += d[N - 1];
    g[N - 1] = scalar_->dv(u[N - 1]);
    double sup = std::abs(u[N - 1]);
    for (int i = N - 2; i >= 0; --i) {
      d[i] -= cp[i] * d[i + 1];
      u[i] += d[i];
      g[i] = scalar_->dv(u[i]);
      sup = std::max(sup, std::abs(u[i]));
      if (i + 1 < N - 1) rr[i + 1] = k * (u[i + 2] - 2.0 * u[i + 1] + u[i]) - g[i + 1];
    }
    if (opt_.bc == Boundary::Clamped) {
      rr[0] = 0.0;
      rr[N - 1] = 0.0;
    } else {
      rr[0] = k * (u[1] - u[0]) - g[0];
      rr[N - 1] = k * (u[N - 2] - u[N - 1]) - g[N - 1];
    }
    check_blowup(sup, st.t);
  }

  void check_blowup(double sup, double t) const {
    if (!(sup <= opt_.blowup_radius)) {
      Error err(ErrorKind::BlowUp, "sup|u| exceeded the blow-up radius");
      err.detail = t;
      throw err;
    }
  }

  // Thomas factorisation of (I - dt lambda Lap) for each component; a = c = -r, b = 1 + 2r.
  void factor() {
    const int N = grid_.N;
    cprime_.assign(n_, std::vector<double>(N, 0.0));
    inv_den_.assign(n_, std::vector<double>(N, 0.0));
    for (int c = 0; c < n_; ++c) {
      const double r = opt_.dt * lambda_[c] / (grid_.dx * grid_.dx);
      auto& cp = cprime_[c];
      auto& id = inv_den_[c];
      // rows 0 and N-1: identity (clamped) or one-sided flux (Neumann)
      double b0, c0;
      if (opt_.bc == Boundary::Clamped) {
        b0 = 1.0;
        c0 = 0.0;
      } else {
        b0 = 1.0 + r;
        c0 = -r;
      }
      id[0] = 1.0 / b0;
      cp[0] = c0 * id[0];
      for (int i = 1; i < N; ++i) {
        double a = -r, b = 1.0 + 2.0 * r, cc = -r;
        if (i == N - 1) {
          if (opt_.bc == Boundary::Clamped) {
            a = 0.0;
            b = 1.0;
          } else {
            b = 1.0 + r;
          }
          cc = 0.0;
        }
        const double den = b - a * cp[i - 1];
        id[i] = 1.0 / den;
        cp[i] = cc * id[i];
      }
      a_.push_back(-r);
    }
    alpha_.resize(N);
    for (int i = 0; i < N; ++i) alpha_[i] = a_[0] * inv_den_[0][i];
  }

  void solve_component(std::vector<double>& rhs, int c) const {
    const int N = grid_.N;
    const auto& cp = cprime_[c];
    const auto& id = inv_den_[c];
    const double a = a_[c];
    const std::size_t n = static_cast<std::size_t>(n_);
    auto at = [&](int i) -> double& { return rhs[static_cast<std::size_t>(i) * n + c]; };
    const bool clamped = opt_.bc == Boundary::Clamped;
    at(0) = at(0) * id[0];
    for (int i = 1; i < N; ++i) {
      const double ai = (i == N - 1 && clamped) ? 0.0 : a;
      at(i) = (at(i) - ai * at(i - 1)) * id[i];
    }
    for (int i = N - 2; i >= 0; --i) at(i) -= cp[i] * at(i + 1);
  }

  void to_basis(std::vector<double>& f) const {
    const Mat& P = d_.eigenvectors();
    Vec tmp(n_);
    for (int i = 0; i < grid_.N; ++i) {
      Eigen::Map<Vec> p(f.data() + static_cast<std::size_t>(i) * n_, n_);
      tmp = P.transpose() * p;
      p = tmp;
    }
  }
  void from_basis(std::vector<double>& f) const {
    const Mat& P = d_.eigenvectors();
    Vec tmp(n_);
    for (int i = 0; i < grid_.N; ++i) {
      Eigen::Map<Vec> p(f.data() + static_cast<std::size_t>(i) * n_, n_);
      tmp = P * p;
      p = tmp;
    }
  }

  PotentialPtr v_;
  Diffusion d_;
  Grid grid_;
  Options opt_;
  int n_ = 1;
  bool rotate_ = false;
  const detail::ScalarPotential* scalar_ = nullptr;
  std::vector<double> lambda_;
  std::vector<double> a_;
  std::vector<double> alpha_;  // a * inv_den for component 0
  std::vector<std::vector<double>> cprime_;
  std::vector<std::vector<double>> inv_den_;
  mutable std::vector<double> grad_;
  mutable std::vector<double> work_;
};

/// Explicit-reaction stability bound dt <= 1 / (2 sup |Hess V|) over the ball of radius R.
inline double dt_max(const Potential& v, double R) {
  const int n = v.dim();
  double sup = 0.0;
  const int per_dim = n == 1 ? 2001 : (n == 2 ? 101 : 11);
  detail::for_each_grid_point(Box::centered(n, R), per_dim, [&](const Vec& u) {
    const Mat h = v.hessian(u);
    const double e = h.rows() == 1 ? std::abs(h(0, 0))
                                   : Eigen::SelfAdjointEigenSolver<Mat>(h, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs().maxCoeff();
    sup = std::max(sup, e);
  });
  return sup > 0.0 ? 1.0 / (2.0 * sup) : std::numeric_limits<double>::infinity();
}

struct ScalarObserver {
  std::string name;
  std::function<double(const State&)> eval;
};

struct Trajectory {
  std::vector<std::string> columns;  // "t" followed by observer names
  std::vector<std::vector<double>> rows;

  std::vector<double> column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw Error(ErrorKind::Config, "no trajectory column " + name);
    const auto k = static_cast<std::size_t>(it - columns.begin());
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[k]);
    return out;
  }
};

/// Steps until T_final, recording observers (and calling the hook) at the start,
/// every `stride` steps and at the end. A hook returning true stops the run early.
inline Trajectory evolve(const Stepper& stepper, State& st, double T_final, const std::vector<ScalarObserver>& observers,
                         int stride, const std::function<bool(const State&)>& hook = {}, bool record_start = true) {
  if (!(T_final > st.t)) throw Error(ErrorKind::Config, "T_final must exceed the current time");
  if (stride < 1) throw Error(ErrorKind::Config, "stride must be positive");
  Trajectory tr;
  tr.columns.push_back("t");
  for (const auto& o : observers) tr.columns.push_back(o.name);
  auto record = [&]() {
    std::vector<double> row{st.t};
    for (const auto& o : observers) row.push_back(o.eval(st));
    tr.rows.push_back(std::move(row));
    return hook ? hook(st) : false;
  };
  const double t0 = st.t;
  const double dt = stepper.options().dt;
  const long steps = std::lround((T_final - t0) / dt);
  stepper.compute_rhs(st);
  if (record_start && record()) return tr;
  for (long k = 1; k <= steps; ++k) {
    stepper.advance(st);
    st.t = t0 + k * dt;
    if (k % stride == 0 || k == steps) {
      if (record()) break;
    }
  }
  return tr;
}

struct BallMonitor {
  double R_att = 0.0;
  double sup_u = 0.0;
  bool within_ball = false;
  double T_att = std::numeric_limits<double>::quiet_NaN();  // first observed entry time

  void observe(const State& st) {
    sup_u = st.u.sup_norm();
    within_ball = sup_u <= R_att;
    if (within_ball && std::isnan(T_att)) T_att = st.t;
  }
};

}  // namespace gradflow
