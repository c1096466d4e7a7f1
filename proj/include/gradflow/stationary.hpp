#pragma once

// Stationary profiles: solutions of D u'' = grad V(u) homoclinic or heteroclinic to M_0.

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/numeric/odeint.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gradflow/constants.hpp"
#include "gradflow/diagnostics.hpp"
#include "gradflow/errors.hpp"
#include "gradflow/potential.hpp"

namespace gradflow {

/// Uniformly sampled orbit (u, u') of the stationary ODE with exponential tails
/// towards its end points beyond the sampled range.
struct Orbit {
  double x0 = 0.0;
  double h = 0.01;
  std::vector<Vec> u;
  std::vector<Vec> up;

  int size() const { return static_cast<int>(u.size()); }
  double x(int k) const { return x0 + k * h; }
  double x_end() const { return x(size() - 1); }
};

struct StationaryProfile {
  std::string id;
  Orbit orbit;
  int m_minus = 0;  // indices into the MinimaSet the profile was built from
  int m_plus = 0;
  Vec m_minus_pt;
  Vec m_plus_pt;
  double rate_minus = 1.0;  // exponential rates of the tails
  double rate_plus = 1.0;
  double energy = 0.0;
  double hamiltonian_drift = 0.0;
  bool normalized = false;
  bool homoclinic = false;

  /// u(x), with cubic Hermite interpolation and exponential tails.
  Vec value(double x) const { return eval(x, false); }
  Vec derivative(double x) const { return eval(x, true); }

  void shift(double dx) { orbit.x0 += dx; }

 private:
  Vec eval(double x, bool deriv) const {
    const auto& o = orbit;
    const int n_s = o.size();
    if (x <= o.x0) {
      const Vec w = (o.u.front() - m_minus_pt) * std::exp(rate_minus * (x - o.x0));
      return deriv ? Vec(rate_minus * w) : Vec(m_minus_pt + w);
    }
    if (x >= o.x_end()) {
      const Vec w = (o.u.back() - m_plus_pt) * std::exp(-rate_plus * (x - o.x_end()));
      return deriv ? Vec(-rate_plus * w) : Vec(m_plus_pt + w);
    }
    const double s = (x - o.x0) / o.h;
    const int k = std::min(static_cast<int>(s), n_s - 2);
    const double t = s - k;
    const Vec& p0 = o.u[k];
    const Vec& p1 = o.u[k + 1];
    const Vec m0 = o.h * o.up[k];
    const Vec m1 = o.h * o.up[k + 1];
    const double t2 = t * t, t3 = t2 * t;
    if (!deriv) {
      return (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * m0 + (-2 * t3 + 3 * t2) * p1 + (t3 - t2) * m1;
    }
    return ((6 * t2 - 6 * t) * p0 + (3 * t2 - 4 * t + 1) * m0 + (-6 * t2 + 6 * t) * p1 + (3 * t2 - 2 * t) * m1) / o.h;
  }
};

struct UnstableDirection {
  double mu = 0.0;  // eigenvalue of D^{-1} Hess V(m); the spatial rate is sqrt(mu)
  Vec e;            // Euclidean unit vector
};

/// Eigenpairs of D^{-1} D^2V(m), increasing in mu.
inline std::vector<UnstableDirection> unstable_directions(const Potential& v, const Diffusion& d, const Vec& m) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(v.hessian(m), d.matrix());
  std::vector<UnstableDirection> out;
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    UnstableDirection u;
    u.mu = es.eigenvalues()[i];
    u.e = es.eigenvectors().col(i).normalized();
    Eigen::Index big = 0;
    u.e.cwiseAbs().maxCoeff(&big);
    if (u.e[big] < 0) u.e = -u.e;
    out.push_back(u);
  }
  return out;
}

inline double hamiltonian(const Potential& v, const Diffusion& d, const Vec& u, const Vec& up) {
  return 0.5 * d.inner(up, up) - v.value(u);
}

// ---------------------------------------------------------------------------
// Energy and normalization.

/// E[u] = sum (|u'|_D^2/2 + V(u) - level) dx over the samples plus the exponential tails.
inline double stationary_energy(const StationaryProfile& p, const Potential& v, const Diffusion& d, double level = 0.0) {
  const auto& o = p.orbit;
  const int n_s = o.size();
  if (n_s == 0) return 0.0;
  auto dens = [&](int k) { return 0.5 * d.inner(o.up[k], o.up[k]) + v.value(o.u[k]) - level; };
  double e = 0.0;
  for (int k = 0; k < n_s; ++k) e += ((k == 0 || k == n_s - 1) ? 0.5 : 1.0) * dens(k) * o.h;
  // beyond the samples the density decays like exp(-2 rate |x|)
  e += dens(0) / (2.0 * p.rate_minus);
  e += dens(n_s - 1) / (2.0 * p.rate_plus);
  return e;
}

/// Translates so that the first crossing of |u - m_-|_D = d_Esc sits at x = 0.
inline void normalize(StationaryProfile& p, const Diffusion& d, double d_Esc) {
  const auto& o = p.orbit;
  auto f = [&](double x) { return d.norm(p.value(x) - p.m_minus_pt) - d_Esc; };
  int k = -1;
  for (int j = 0; j + 1 < o.size(); ++j) {
    if (f(o.x(j)) <= 0.0 && f(o.x(j + 1)) > 0.0) {
      k = j;
      break;
    }
  }
  if (k < 0) {
    if (o.size() > 0 && f(o.x0) > 0.0)
      throw Error(ErrorKind::NeverEscapes, "profile starts outside the escape ball of its left end");
    throw Error(ErrorKind::NeverEscapes, "profile never leaves the d_Esc ball of its left end");
  }
  double a = o.x(k), b = o.x(k + 1);
  for (int it = 0; it < 200 && b - a > 1e-15 * (1.0 + std::abs(a)); ++it) {
    const double c = 0.5 * (a + b);
    (f(c) <= 0.0 ? a : b) = c;
  }
  const double xc = 0.5 * (a + b);
  p.shift(-xc);
  p.normalized = true;
}

// ---------------------------------------------------------------------------
// Scalar quadrature through the first integral u'^2 d/2 = V(u).

namespace detail {

/// V near a point where V and V' vanish, without cancellation:
/// V(m + w) = w^2 int_0^1 (1 - s) V''(m + s w) ds.
inline double value_near_minimum(const Potential& v, double m, double w) {
  static const double gx[] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
                              0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
  static const double gw[] = {0.1012285362903763, 0.2223810344533745, 0.3137066278286366, 0.3626837833783620,
                              0.3626837833783620, 0.3137066278286366, 0.2223810344533745, 0.1012285362903763};
  double s = 0.0;
  double u[1], h[1];
  for (int i = 0; i < 8; ++i) {
    const double t = 0.5 * (gx[i] + 1.0);
    u[0] = m + t * w;
    v.hessian(std::span<const double>(u, 1), std::span<double>(h, 1));
    s += 0.5 * gw[i] * (1.0 - t) * h[0];
  }
  return w * w * s;
}

/// Solves X(y) = target on (lo, hi) for increasing X, given X(lo) = x_lo and
/// dX/dy = g(y); Newton safeguarded by bisection.
template <class G>
double march_solve(G&& g, double lo, double x_lo, double hi, double target, double guess, double& x_at) {
  using boost::math::quadrature::gauss_kronrod;
  auto X = [&](double y) { return x_lo + gauss_kronrod<double, 15>::integrate(g, lo, y, 0); };
  double a = lo, b = hi;
  double y = std::clamp(guess, lo, hi);
  if (!(y > a && y < b)) y = 0.5 * (a + b);
  for (int it = 0; it < 200; ++it) {
    const double xy = X(y);
    const double r = xy - target;
    if (std::abs(r) < 1e-13 * (1.0 + std::abs(target))) {
      x_at = xy;
      return y;
    }
    if (r < 0) a = y;
    else b = y;
    double next = y - r / g(y);
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (b - a < 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(y))) {
      x_at = xy;
      return y;
    }
    y = next;
  }
  x_at = X(y);
  return y;
}

}  // namespace detail

struct QuadratureOptions {
  double h = 0.01;
  double tail = 1e-12;  // stop when |u - m| falls below this
  int ray_steps = 200000;
};

/// Profile leaving m_minus (index into M) in direction sigma = +-1, for n = 1.
/// Returns nothing when the ray reaches the box edge with V > 0.
inline std::optional<StationaryProfile> scalar_quadrature(const Potential& v, const Diffusion& d, const MinimaSet& M,
                                                          int m_index, int sigma, const Box& box,
                                                          const QuadratureOptions& opt = {}) {
  if (v.dim() != 1) throw Error(ErrorKind::Config, "scalar quadrature needs n = 1");
  const double dd = d.matrix()(0, 0);
  const double m = M.points[m_index][0];
  const double edge = sigma > 0 ? box.hi[0] : box.lo[0];
  const double S = sigma * (edge - m);
  if (S <= 0.0) return std::nullopt;
  auto V1 = [&](double u) { return v.value(Vec::Constant(1, u)); };
  auto dV1 = [&](double u) { return v.gradient(Vec::Constant(1, u))[0]; };

  // scan the ray for the first point where V stops being positive
  double target_s = -1.0;
  int target_min = -1;
  bool turning = false;
  const double ds = S / opt.ray_steps;
  double prev = 0.0;
  double v_prev = 0.0, v_prev2 = 0.0;
  for (int k = 1; k <= opt.ray_steps; ++k) {
    const double s = k * ds;
    const double u = m + sigma * s;
    // a minimum of M on the ray
    for (std::size_t j = 0; j < M.size(); ++j) {
      if (static_cast<int>(j) == m_index) continue;
      const double sj = sigma * (M.points[j][0] - m);
      if (sj > prev && sj <= s) {
        target_s = sj;
        target_min = static_cast<int>(j);
      }
    }
    if (target_min >= 0) break;
    const double val = V1(u);
    // V touching zero between samples without changing sign
    if (k >= 3 && val >= v_prev && v_prev < v_prev2 && v_prev < 1e-10) {
      const double a = m + sigma * (s - 2 * ds), b = u;
      const auto r = boost::math::tools::brent_find_minima(V1, std::min(a, b), std::max(a, b), 52);
      if (r.second <= 1e-13) {
        Error err(ErrorKind::IntermediateZero, "V vanishes with zero gradient between the end points");
        err.point = {r.first};
        throw err;
      }
    }
    v_prev2 = v_prev;
    v_prev = val;
    if (val <= 0.0 && s > 10 * ds) {
      // crossing or touching zero between prev and s
      using namespace boost::math::tools;
      eps_tolerance<double> tol(52);
      std::uintmax_t iters = 200;
      const double a = m + sigma * prev, b = u;
      auto r = toms748_solve(V1, std::min(a, b), std::max(a, b), tol, iters);
      const double ustar = 0.5 * (r.first + r.second);
      if (std::abs(dV1(ustar)) > 1e-8) {
        turning = true;
        target_s = sigma * (ustar - m);
      } else {
        Error err(ErrorKind::IntermediateZero, "V vanishes with zero gradient between the end points");
        err.point = {ustar};
        throw err;
      }
      break;
    }
    prev = s;
  }
  if (target_s < 0.0) return std::nullopt;

  // near an end point V is evaluated through its Hessian to avoid cancellation
  const double m_far = turning ? m : M.points[target_min][0];
  auto safeV = [&](double u) {
    if (std::abs(u - m) < 0.05) return detail::value_near_minimum(v, m, u - m);
    if (!turning && std::abs(u - m_far) < 0.05) return detail::value_near_minimum(v, m_far, u - m_far);
    return V1(u);
  };
  auto speed = [&](double u) { return std::sqrt(std::max(2.0 * safeV(u) / dd, 0.0)); };

  StationaryProfile p;
  p.m_minus = m_index;
  p.m_minus_pt = M.points[m_index];
  p.homoclinic = turning;
  p.m_plus = turning ? m_index : target_min;
  p.m_plus_pt = M.points[p.m_plus];
  p.rate_minus = std::sqrt(v.hessian(p.m_minus_pt)(0, 0) / dd);
  p.rate_plus = std::sqrt(v.hessian(p.m_plus_pt)(0, 0) / dd);

  std::vector<double> xs_fwd, us_fwd, ups_fwd;  // x >= 0
  std::vector<double> xs_bwd, us_bwd, ups_bwd;  // x < 0
  if (!turning) {
    // variable s = sigma (u - m) in (0, S2); x(s) anchored at the midpoint
    const double S2 = target_s;
    auto g = [&](double s) { return 1.0 / speed(m + sigma * s); };
    const double sc = 0.5 * S2;
    // forward towards m_far
    double s_prev = sc, x_prev = 0.0;
    for (int k = 0;; ++k) {
      const double xk = k * opt.h;
      double x_at = x_prev;
      const double s = k == 0 ? sc : detail::march_solve(g, s_prev, x_prev, S2, xk, s_prev + opt.h / g(s_prev), x_at);
      const double u = m + sigma * s;
      xs_fwd.push_back(xk);
      us_fwd.push_back(u);
      ups_fwd.push_back(sigma * speed(u));
      s_prev = s;
      x_prev = k == 0 ? 0.0 : x_at;
      if (S2 - s < opt.tail || k > 1000000) break;
    }
    // backward towards m: mirror variable r = S2 - s keeps X increasing
    auto gb = [&](double r) { return 1.0 / speed(m + sigma * (S2 - r)); };
    double r_prev = S2 - sc;
    x_prev = 0.0;
    for (int k = 1;; ++k) {
      const double xk = k * opt.h;
      double x_at = x_prev;
      const double r = detail::march_solve(gb, r_prev, x_prev, S2, xk, r_prev + opt.h / gb(r_prev), x_at);
      const double u = m + sigma * (S2 - r);
      xs_bwd.push_back(-xk);
      us_bwd.push_back(u);
      ups_bwd.push_back(sigma * speed(u));
      r_prev = r;
      x_prev = x_at;
      if (S2 - r < opt.tail || k > 1000000) break;
    }
  } else {
    // u = u* - sigma w^2, w in [0, W); the turning point sits at x = 0
    const double ustar = m + sigma * target_s;
    const double W = std::sqrt(target_s);
    const double d1 = dV1(ustar);
    const double d2 = v.hessian(Vec::Constant(1, ustar))(0, 0);
    auto g = [&](double w) {
      double v_over_w2;
      if (w < 1e-3) v_over_w2 = -sigma * d1 + 0.5 * d2 * w * w;
      else v_over_w2 = safeV(ustar - sigma * w * w) / (w * w);
      return 2.0 / std::sqrt(std::max(2.0 * v_over_w2 / dd, 1e-300));
    };
    double w_prev = 0.0, x_prev = 0.0;
    for (int k = 0;; ++k) {
      const double xk = k * opt.h;
      double x_at = x_prev;
      const double w = k == 0 ? 0.0 : detail::march_solve(g, w_prev, x_prev, W, xk, w_prev + opt.h / g(w_prev), x_at);
      const double u = ustar - sigma * w * w;
      xs_fwd.push_back(xk);
      us_fwd.push_back(u);
      ups_fwd.push_back(-sigma * speed(u));
      w_prev = w;
      x_prev = x_at;
      if (std::abs(u - m) < opt.tail || k > 1000000) break;
    }
    for (std::size_t k = 1; k < xs_fwd.size(); ++k) {
      xs_bwd.push_back(-xs_fwd[k]);
      us_bwd.push_back(us_fwd[k]);
      ups_bwd.push_back(-ups_fwd[k]);
    }
  }

  auto& o = p.orbit;
  o.h = opt.h;
  o.x0 = xs_bwd.empty() ? 0.0 : xs_bwd.back();
  for (std::size_t k = xs_bwd.size(); k-- > 0;) {
    o.u.push_back(Vec::Constant(1, us_bwd[k]));
    o.up.push_back(Vec::Constant(1, ups_bwd[k]));
  }
  for (std::size_t k = 0; k < xs_fwd.size(); ++k) {
    o.u.push_back(Vec::Constant(1, us_fwd[k]));
    o.up.push_back(Vec::Constant(1, ups_fwd[k]));
  }
  for (int k = 0; k < o.size(); ++k) p.hamiltonian_drift = std::max(p.hamiltonian_drift, std::abs(hamiltonian(v, d, o.u[k], o.up[k])));
  p.energy = stationary_energy(p, v, d);
  return p;
}

// ---------------------------------------------------------------------------
// Shooting along the unstable manifold.

struct ShootOptions {
  double epsilon = 1e-6;
  double x_max = 60.0;
  double h = 0.01;         // output sampling step
  double rtol = 1e-12;
  double atol = 1e-14;
  double drift_per_x = 1e-8;
  double tail_cut = 1e-4;  // orbit kept until this close to the target, then exponential tail
  double R_max = 10.0;
};

struct ShotResult {
  enum class Outcome { Connection, BlowUp, Timeout };
  Outcome outcome = Outcome::Timeout;
  Orbit orbit;        // samples up to the trimming point
  int target = -1;    // minimum whose ball was entered
  double terminal_distance = std::numeric_limits<double>::infinity();
  double drift = 0.0;  // max |H - H(0)| along the orbit
  double drift_per_x = 0.0;
  double x_length = 0.0;
};

namespace detail {

inline ShotResult shoot_once(const Potential& v, const Diffusion& d, const MinimaSet& M, int m_index, const Vec& u0,
                             const Vec& v0, double d_Esc, const ShootOptions& opt) {
  namespace odeint = boost::numeric::odeint;
  using state_t = std::vector<double>;
  const int n = v.dim();
  const Mat Dinv = d.inverse();
  auto sys = [&](const state_t& y, state_t& dy, double) {
    Vec u = Eigen::Map<const Vec>(y.data(), n);
    const Vec g = Dinv * v.gradient(u);
    for (int i = 0; i < n; ++i) {
      dy[i] = y[n + i];
      dy[n + i] = g[i];
    }
  };
  state_t y(2 * n);
  for (int i = 0; i < n; ++i) {
    y[i] = u0[i];
    y[n + i] = v0[i];
  }
  auto stepper = odeint::make_dense_output(opt.atol, opt.rtol, odeint::runge_kutta_dopri5<state_t>());
  stepper.initialize(y, 0.0, opt.h);

  ShotResult res;
  auto& o = res.orbit;
  o.x0 = 0.0;
  o.h = opt.h;
  const double H0 = hamiltonian(v, d, u0, v0);
  auto phase_dist = [&](const Vec& u, const Vec& up, int k) {
    return std::sqrt((u - M.points[k]).squaredNorm() + up.squaredNorm());
  };
  bool left_start = false;
  int entered = -1;
  double best = std::numeric_limits<double>::infinity();
  int best_k = -1, cut_k = -1;
  bool done = false;
  state_t ys(2 * n);
  double next = 0.0;
  while (!done) {
    const auto span = stepper.do_step(sys);
    if (!(span.second > span.first) || !std::isfinite(span.second)) {
      res.outcome = ShotResult::Outcome::BlowUp;
      break;
    }
    while (next <= span.second && !done) {
      stepper.calc_state(next, ys);
      const Vec u = Eigen::Map<const Vec>(ys.data(), n);
      const Vec up = Eigen::Map<const Vec>(ys.data() + n, n);
      if (!u.allFinite() || u.norm() > 2.0 * opt.R_max) {
        res.outcome = ShotResult::Outcome::BlowUp;
        done = true;
        break;
      }
      o.u.push_back(u);
      o.up.push_back(up);
      const int k = o.size() - 1;
      res.drift = std::max(res.drift, std::abs(hamiltonian(v, d, u, up) - H0));
      if (!left_start) {
        if (phase_dist(u, up, m_index) > d_Esc / 4.0) left_start = true;
      } else if (entered < 0) {
        for (std::size_t j = 0; j < M.size(); ++j)
          if (phase_dist(u, up, static_cast<int>(j)) < d_Esc / 4.0) entered = static_cast<int>(j);
      }
      if (entered >= 0) {
        const double dist = phase_dist(u, up, entered);
        if (dist < best) {
          best = dist;
          best_k = k;
        }
        if (cut_k < 0 && dist < opt.tail_cut) cut_k = k;
        if (dist > d_Esc / 4.0 || (best < 1e-3 && dist > 100.0 * best)) done = true;
      }
      if (next >= opt.x_max) done = true;
      next += opt.h;
    }
    if (stepper.current_time() > opt.x_max + opt.h) done = true;
  }
  if (entered >= 0) {
    res.target = entered;
    res.terminal_distance = best;
    res.outcome = ShotResult::Outcome::Connection;
    const int keep = (cut_k >= 0 ? cut_k : best_k) + 1;
    o.u.resize(keep);
    o.up.resize(keep);
  } else if (res.outcome != ShotResult::Outcome::BlowUp) {
    res.outcome = ShotResult::Outcome::Timeout;
  }
  res.x_length = std::max(o.x_end(), opt.h);
  res.drift_per_x = res.drift / res.x_length;
  return res;
}

}  // namespace detail

/// Integrates the Hamiltonian system from (m + eps e, eps sqrt(mu) e) where e is a
/// unit combination of unstable directions (coefficients c on the eigenbasis).
inline ShotResult shoot(const Potential& v, const Diffusion& d, const MinimaSet& M, int m_index, const Vec& coeffs,
                        double d_Esc, ShootOptions opt = {}) {
  if (!(opt.epsilon >= 1e-8 && opt.epsilon <= 1e-4)) throw Error(ErrorKind::Config, "shooting amplitude outside [1e-8, 1e-4]");
  const auto dirs = unstable_directions(v, d, M.points[m_index]);
  const int n = v.dim();
  const Vec c = coeffs.normalized();
  Vec u0 = M.points[m_index], v0 = Vec::Zero(n);
  for (int i = 0; i < n; ++i) {
    u0 += opt.epsilon * c[i] * dirs[i].e;
    v0 += opt.epsilon * c[i] * std::sqrt(dirs[i].mu) * dirs[i].e;
  }
  for (int attempt = 0; attempt < 3; ++attempt) {
    ShotResult r = detail::shoot_once(v, d, M, m_index, u0, v0, d_Esc, opt);
    if (r.drift_per_x <= opt.drift_per_x) return r;
    opt.rtol *= 0.1;
    opt.atol *= 0.1;
    if (attempt == 2) {
      Error err(ErrorKind::DriftExceeded, "Hamiltonian drift above tolerance");
      err.detail = r.drift_per_x;
      throw err;
    }
  }
  return {};
}

/// Converts a connecting shot into a profile (tails from the linearization).
inline StationaryProfile profile_from_shot(const ShotResult& shot, const Potential& v, const Diffusion& d,
                                           const MinimaSet& M, int m_index) {
  StationaryProfile p;
  p.orbit = shot.orbit;
  p.m_minus = m_index;
  p.m_plus = shot.target;
  p.m_minus_pt = M.points[m_index];
  p.m_plus_pt = M.points[shot.target];
  p.homoclinic = m_index == shot.target;
  p.rate_minus = std::sqrt(unstable_directions(v, d, p.m_minus_pt).front().mu);
  p.rate_plus = std::sqrt(unstable_directions(v, d, p.m_plus_pt).front().mu);
  p.hamiltonian_drift = 0.0;
  for (int k = 0; k < p.orbit.size(); ++k)
    p.hamiltonian_drift = std::max(p.hamiltonian_drift, std::abs(hamiltonian(v, d, p.orbit.u[k], p.orbit.up[k])));
  p.energy = stationary_energy(p, v, d);
  return p;
}

// ---------------------------------------------------------------------------
// Catalog.

struct ConnectionOptions {
  double tol_end = 1e-5;
  int angles = 180;
  QuadratureOptions quadrature;
  ShootOptions shooting;
};

struct ConnectionSet {
  std::vector<StationaryProfile> profiles;
  std::optional<Vec> period;           // u-space symmetry, profiles stored once per class
  bool disc_hypothesis_doubtful = false;

  const StationaryProfile* find(const std::string& id) const {
    for (const auto& p : profiles)
      if (p.id == id) return &p;
    return nullptr;
  }
};

namespace detail {

inline std::string fmt_num(double x) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(6);
  os << (std::abs(x) < 1e-12 ? 0.0 : x);
  return os.str();
}

inline std::string profile_id(const StationaryProfile& p, int sign) {
  std::string s = p.homoclinic ? "hom" : "het";
  for (int i = 0; i < p.m_minus_pt.size(); ++i) s += "_" + fmt_num(p.m_minus_pt[i]);
  if (p.homoclinic) return s + (sign > 0 ? "_up" : "_down");
  for (int i = 0; i < p.m_plus_pt.size(); ++i) s += "_" + fmt_num(p.m_plus_pt[i]);
  return s;
}

/// True if (a-, a+) equals (b-, b+) up to one common period shift.
inline bool same_class(const Vec& am, const Vec& ap, const Vec& bm, const Vec& bp, const std::optional<Vec>& period) {
  if (!period) return (am - bm).norm() < 1e-6 && (ap - bp).norm() < 1e-6;
  const Vec shift = bm - am;
  const Vec& P = *period;
  for (int i = 0; i < shift.size(); ++i) {
    if (P[i] == 0.0) {
      if (std::abs(shift[i]) > 1e-6) return false;
    } else if (std::abs(shift[i] / P[i] - std::round(shift[i] / P[i])) > 1e-6) {
      return false;
    }
  }
  return (ap + shift - bp).norm() < 1e-6;
}

}  // namespace detail

/// Bistable stationary profiles between minima of M: exhaustive quadrature for
/// n = 1, angle scan plus golden-section refinement for n >= 2.
inline ConnectionSet find_connections(const Potential& v, const Diffusion& d, const MinimaSet& M, double d_Esc,
                                      const Box& box, double R_max, const ConnectionOptions& opt = {}) {
  ConnectionSet set;
  set.period = v.period();
  set.disc_hypothesis_doubtful = v.disc_hypothesis_doubtful();
  auto add = [&](StationaryProfile p, int sign) {
    for (const auto& q : set.profiles) {
      if (q.homoclinic != p.homoclinic) continue;
      if (detail::same_class(p.m_minus_pt, p.m_plus_pt, q.m_minus_pt, q.m_plus_pt, set.period)) {
        if (!p.homoclinic) return;
        // homoclinics to the same point differ by the side they leave on
        const Vec a = p.value(0.0) - p.m_minus_pt, b = q.value(0.0) - q.m_minus_pt;
        if (a.dot(b) > 0.0) return;
      }
    }
    normalize(p, d, d_Esc);
    p.id = detail::profile_id(p, sign);
    set.profiles.push_back(std::move(p));
  };

  if (v.dim() == 1) {
    for (std::size_t k = 0; k < M.size(); ++k) {
      for (int sigma : {+1, -1}) {
        auto p = scalar_quadrature(v, d, M, static_cast<int>(k), sigma, box, opt.quadrature);
        if (p) add(std::move(*p), sigma);
      }
    }
    return set;
  }

  ShootOptions so = opt.shooting;
  so.R_max = R_max;
  for (std::size_t k = 0; k < M.size(); ++k) {
    const int mi = static_cast<int>(k);
    auto dist_at = [&](double theta) {
      Vec c = Vec::Zero(v.dim());
      c[0] = std::cos(theta);
      c[1] = std::sin(theta);
      return shoot(v, d, M, mi, c, d_Esc, so);
    };
    std::vector<double> th(opt.angles), dist(opt.angles);
    for (int a = 0; a < opt.angles; ++a) {
      th[a] = 2.0 * std::numbers::pi * a / opt.angles;
      dist[a] = dist_at(th[a]).terminal_distance;
    }
    for (int a = 0; a < opt.angles; ++a) {
      const double dl = dist[(a + opt.angles - 1) % opt.angles], dr = dist[(a + 1) % opt.angles];
      if (!(dist[a] <= dl && dist[a] <= dr) || !std::isfinite(dist[a])) continue;
      // golden-section refinement on [th - step, th + step]
      const double step = 2.0 * std::numbers::pi / opt.angles;
      double lo = th[a] - step, hi = th[a] + step;
      const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
      double c1 = hi - gr * (hi - lo), c2 = lo + gr * (hi - lo);
      double f1 = dist_at(c1).terminal_distance, f2 = dist_at(c2).terminal_distance;
      for (int it = 0; it < 60 && hi - lo > 1e-14; ++it) {
        if (f1 < f2) {
          hi = c2;
          c2 = c1;
          f2 = f1;
          c1 = hi - gr * (hi - lo);
          f1 = dist_at(c1).terminal_distance;
        } else {
          lo = c1;
          c1 = c2;
          f1 = f2;
          c2 = lo + gr * (hi - lo);
          f2 = dist_at(c2).terminal_distance;
        }
      }
      const ShotResult best = dist_at(0.5 * (lo + hi));
      if (best.outcome == ShotResult::Outcome::Connection && best.terminal_distance < opt.tol_end)
        add(profile_from_shot(best, v, d, M, mi), a < opt.angles / 2 ? 1 : -1);
    }
  }
  return set;
}

/// Curves (u, u') of the catalog for the nearest-point index, resampled so that
/// consecutive points are at most `step` apart; period translates included
/// for every minimum in M.
inline PhaseIndex build_phase_index(const ConnectionSet& set, const MinimaSet& M, double step = 1e-2) {
  std::vector<PhaseCurve> curves;
  std::vector<Vec> points;
  for (const auto& m : M.points) {
    Vec q = Vec::Zero(2 * m.size());
    q.head(m.size()) = m;
    points.push_back(q);
  }
  for (const auto& p : set.profiles) {
    std::vector<Vec> shifts{Vec::Zero(p.m_minus_pt.size())};
    if (set.period) {
      shifts.clear();
      for (const auto& m : M.points) {
        const Vec s = m - p.m_minus_pt;
        shifts.push_back(s);
      }
    }
    for (const auto& s : shifts) {
      PhaseCurve c;
      const int n = static_cast<int>(p.m_minus_pt.size());
      auto phase = [&](double x) {
        Vec q(2 * n);
        q.head(n) = p.value(x) + s;
        q.tail(n) = p.derivative(x);
        return q;
      };
      const auto& o = p.orbit;
      for (int k = 0; k < o.size(); ++k) {
        Vec q(2 * n);
        q.head(n) = o.u[k] + s;
        q.tail(n) = o.up[k];
        if (!c.points.empty()) {
          const double gap = (q - c.points.back()).norm();
          const int extra = static_cast<int>(std::ceil(gap / step)) - 1;
          for (int j = 1; j <= extra; ++j) c.points.push_back(phase(o.x(k - 1) + o.h * j / (extra + 1)));
        }
        c.points.push_back(q);
      }
      curves.push_back(std::move(c));
    }
  }
  return PhaseIndex(std::move(curves), std::move(points));
}

// ---------------------------------------------------------------------------
// Generic orbits and the truncated Lagrangian.

/// Integrates the stationary ODE from (u0, v0) at x = 0 over [x_min, x_max].
inline Orbit integrate_orbit(const Potential& v, const Diffusion& d, const Vec& u0, const Vec& v0, double x_min,
                             double x_max, double h = 0.01, double rtol = 1e-12) {
  namespace odeint = boost::numeric::odeint;
  using state_t = std::vector<double>;
  const int n = v.dim();
  const Mat Dinv = d.inverse();
  auto run = [&](double sign, double len) {
    auto sys = [&](const state_t& y, state_t& dy, double) {
      Vec u = Eigen::Map<const Vec>(y.data(), n);
      const Vec g = Dinv * v.gradient(u);
      for (int i = 0; i < n; ++i) {
        dy[i] = sign * y[n + i];
        dy[n + i] = sign * g[i];
      }
    };
    state_t y(2 * n);
    for (int i = 0; i < n; ++i) {
      y[i] = u0[i];
      y[n + i] = v0[i];
    }
    std::vector<state_t> out;
    const int steps = static_cast<int>(std::llround(len / h));
    auto stepper = odeint::make_dense_output(rtol * 1e-2, rtol, odeint::runge_kutta_dopri5<state_t>());
    odeint::integrate_n_steps(stepper, sys, y, 0.0, h, steps, [&](const state_t& s, double) { out.push_back(s); });
    return out;
  };
  const auto fwd = run(1.0, x_max);
  const auto bwd = run(-1.0, -x_min);
  Orbit o;
  o.h = h;
  o.x0 = -(static_cast<double>(bwd.size()) - 1.0) * h;
  auto push = [&](const state_t& s, double sign) {
    o.u.push_back(Eigen::Map<const Vec>(s.data(), n));
    o.up.push_back(sign * Eigen::Map<const Vec>(s.data() + n, n));
  };
  for (std::size_t k = bwd.size(); k-- > 1;) push(bwd[k], -1.0);
  for (const auto& s : fwd) push(s, 1.0);
  return o;
}

/// int_{-l}^{l} (|u'|_D^2/2 + V(u)) dx by the trapezoid rule on the samples.
inline double truncated_lagrangian(const Orbit& o, const Potential& v, const Diffusion& d, double ell) {
  double s = 0.0;
  const double tol = 1e-9 * o.h;
  for (int k = 0; k < o.size(); ++k) {
    const double x = o.x(k);
    if (x < -ell - tol || x > ell + tol) continue;
    const bool end = std::abs(std::abs(x) - ell) <= tol;
    s += (end ? 0.5 : 1.0) * (0.5 * d.inner(o.up[k], o.up[k]) + v.value(o.u[k])) * o.h;
  }
  return s;
}

/// Lagrangian of a stationary profile restricted to [-l, l] around its normalization point.
inline double truncated_lagrangian(const StationaryProfile& p, const Potential& v, const Diffusion& d, double ell,
                                   double h = 0.01) {
  const int steps = static_cast<int>(std::llround(2.0 * ell / h));
  double s = 0.0;
  for (int k = 0; k <= steps; ++k) {
    const double x = -ell + k * h;
    const Vec up = p.derivative(x);
    s += ((k == 0 || k == steps) ? 0.5 : 1.0) * (0.5 * d.inner(up, up) + v.value(p.value(x))) * h;
  }
  return s;
}

}  // namespace gradflow
