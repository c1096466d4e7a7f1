#pragma once

// Minima of V, hypothesis checks, and the structural constants derived from (V, D).

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "gradflow/errors.hpp"
#include "gradflow/potential.hpp"

namespace gradflow {

struct MinimaSet {
  std::vector<Vec> points;
  double nu_min = 0.0;  // smallest Hessian eigenvalue over the set
  double nu_max = 0.0;  // largest

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  /// Index of the member nearest to u in |.|_D (ties to the lower index).
  std::size_t nearest(const Vec& u, const Diffusion& d, double* dist = nullptr) const {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double r = d.norm(u - points[i]);
      if (r < bd) {
        bd = r;
        best = i;
      }
    }
    if (dist) *dist = bd;
    return best;
  }

  /// Index of p (within tol), or -1.
  int find(const Vec& p, double tol = 1e-6) const {
    for (std::size_t i = 0; i < points.size(); ++i)
      if ((points[i] - p).norm() < tol) return static_cast<int>(i);
    return -1;
  }
};

struct MinimaOptions {
  int seeds_per_dim = 0;  // 0: 201 for n = 1, 41 for n = 2, 9 beyond
  double tol_crit = 1e-8;
  double tol_level = 1e-8;
  double tol_hess = 1e-6;
};

namespace detail {

inline Vec newton_critical(const Potential& v, Vec u, const Box& box, bool& ok) {
  ok = false;
  const double span = (box.hi - box.lo).norm();
  for (int it = 0; it < 200; ++it) {
    Vec g = v.gradient(u);
    const double gn = g.norm();
    if (gn < 1e-14) {
      ok = true;
      return u;
    }
    Mat h = v.hessian(u);
    Eigen::FullPivLU<Mat> lu(h);
    Vec step = lu.isInvertible() ? Vec(-lu.solve(g)) : Vec(-g);
    if (!step.allFinite()) step = -g;
    if (step.norm() > 0.25 * span) step *= 0.25 * span / step.norm();
    double lambda = 1.0;
    bool moved = false;
    for (int k = 0; k < 40; ++k) {
      Vec trial = u + lambda * step;
      if (v.gradient(trial).norm() < gn) {
        u = trial;
        moved = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!moved) {
      ok = gn < 1e-9;
      return u;
    }
    if (!box.contains(u, 0.1 * span)) return u;
    if (lambda * step.norm() < 1e-15 * (1.0 + u.norm())) {
      ok = v.gradient(u).norm() < 1e-9;
      return u;
    }
  }
  ok = v.gradient(u).norm() < 1e-9;
  return u;
}

/// Deterministic sample of the unit sphere in R^n.
inline std::vector<Vec> sphere_directions(int n, int count) {
  std::vector<Vec> dirs;
  if (n == 1) {
    dirs.push_back(Vec::Constant(1, 1.0));
    dirs.push_back(Vec::Constant(1, -1.0));
    return dirs;
  }
  if (n == 2) {
    for (int k = 0; k < count; ++k) {
      const double a = 2.0 * std::numbers::pi * k / count;
      dirs.push_back(Vec{{std::cos(a), std::sin(a)}});
    }
    return dirs;
  }
  for (int i = 0; i < n; ++i) {
    Vec e = Vec::Zero(n);
    e[i] = 1.0;
    dirs.push_back(e);
    dirs.push_back(-e);
  }
  // Halton points mapped through the Gaussian-free normalisation of a cube sample.
  static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  for (int k = 1; k <= count; ++k) {
    Vec p(n);
    for (int i = 0; i < n; ++i) {
      const int b = primes[i % 12];
      double f = 1.0, r = 0.0;
      for (int j = k; j > 0; j /= b) {
        f /= b;
        r += f * (j % b);
      }
      p[i] = 2.0 * r - 1.0;
    }
    if (p.norm() > 1e-12) dirs.push_back(p.normalized());
  }
  return dirs;
}

inline double min_eig(const Mat& h) {
  if (h.rows() == 1) return h(0, 0);
  return Eigen::SelfAdjointEigenSolver<Mat>(h, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

inline double max_eig(const Mat& h) {
  if (h.rows() == 1) return h(0, 0);
  return Eigen::SelfAdjointEigenSolver<Mat>(h, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

/// Visits every node of a tensor grid on the box.
template <class F>
void for_each_grid_point(const Box& box, int per_dim, F&& f) {
  const int n = box.dim();
  std::vector<int> idx(n, 0);
  Vec u(n);
  while (true) {
    for (int i = 0; i < n; ++i) u[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * idx[i] / (per_dim - 1);
    f(u);
    int k = 0;
    while (k < n && ++idx[k] == per_dim) idx[k++] = 0;
    if (k == n) break;
  }
}

}  // namespace detail

/// Nondegenerate minima of V in the level set {V = 0} inside the box.
inline MinimaSet find_minima(const Potential& v, const Box& box, const MinimaOptions& opt = {}) {
  const int n = v.dim();
  if (box.dim() != n) throw Error(ErrorKind::Config, "search box dimension mismatch");
  if (!((box.hi.array() > box.lo.array()).all())) throw Error(ErrorKind::Config, "degenerate search box");
  int per_dim = opt.seeds_per_dim;
  if (per_dim <= 1) per_dim = n == 1 ? 201 : (n == 2 ? 41 : 9);

  std::vector<Vec> crit;
  detail::for_each_grid_point(box, per_dim, [&](const Vec& seed) {
    bool ok = false;
    Vec c = detail::newton_critical(v, seed, box, ok);
    if (!ok || !box.contains(c, 1e-9) || v.gradient(c).norm() > opt.tol_crit) return;
    for (int k = 0; k < n; ++k) {
      if (c[k] == 0.0 || std::abs(c[k]) > 1e-12) continue;
      Vec z = c;
      z[k] = 0.0;
      if (v.gradient(z).norm() <= v.gradient(c).norm()) c = z;
    }
    for (const auto& p : crit)
      if ((p - c).norm() < 1e-6) return;
    crit.push_back(c);
  });
  std::sort(crit.begin(), crit.end(), [](const Vec& a, const Vec& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  });

  MinimaSet set;
  set.nu_min = std::numeric_limits<double>::infinity();
  set.nu_max = 0.0;
  for (const auto& c : crit) {
    if (std::abs(v.value(c)) >= opt.tol_level) continue;
    Mat h = v.hessian(c);
    const double lo = detail::min_eig(h);
    if (lo <= opt.tol_hess) {
      Error err(ErrorKind::HypothesisViolation,
                "critical point in the zero level set is not a nondegenerate minimum");
      err.point.assign(c.data(), c.data() + c.size());
      err.detail = lo;
      throw err;
    }
    set.points.push_back(c);
    set.nu_min = std::min(set.nu_min, lo);
    set.nu_max = std::max(set.nu_max, detail::max_eig(h));
  }
  if (set.points.empty()) throw Error(ErrorKind::NoMinimumFound, "no minimum of V in the zero level set inside the box");
  return set;
}

struct EscapeOptions {
  double cap = 10.0;
  double safety = 0.9;
  int radial_samples = 64;
  int directions = 64;
  int iterations = 60;
};

namespace detail {

inline bool hessian_band_holds(const Potential& v, const Diffusion& d, const MinimaSet& m, double r,
                               const std::vector<Vec>& dirs, int radial) {
  const double lo = m.nu_min / 2.0, hi = 2.0 * m.nu_max;
  for (const auto& p : m.points) {
    for (const auto& e : dirs) {
      const Vec de = d.inverse_sqrt() * e;  // |de|_D = 1
      for (int k = 1; k <= radial; ++k) {
        const Vec u = p + (r * k / radial) * de;
        const Mat h = v.hessian(u);
        if (h.rows() == 1) {
          if (h(0, 0) < lo || h(0, 0) > hi) return false;
        } else {
          const Vec ev = Eigen::SelfAdjointEigenSolver<Mat>(h, Eigen::EigenvaluesOnly).eigenvalues();
          if (ev.minCoeff() < lo || ev.maxCoeff() > hi) return false;
        }
      }
    }
  }
  return true;
}

}  // namespace detail

/// d_Esc: largest radius (in |.|_D) on which the Hessian spectrum stays in
/// [nu_min/2, 2 nu_max] around every minimum, times a safety factor.
/// Returns the cap itself when the condition holds everywhere up to it.
inline double escape_distance(const Potential& v, const Diffusion& d, const MinimaSet& m,
                              const EscapeOptions& opt = {}) {
  if (m.empty()) throw Error(ErrorKind::NoMinimumFound, "escape distance needs at least one minimum");
  const auto dirs = detail::sphere_directions(v.dim(), opt.directions);
  if (detail::hessian_band_holds(v, d, m, opt.cap, dirs, 4 * opt.radial_samples)) return opt.cap;
  double lo = 0.0, hi = opt.cap;
  for (int it = 0; it < opt.iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (detail::hessian_band_holds(v, d, m, mid, dirs, opt.radial_samples))
      lo = mid;
    else
      hi = mid;
  }
  if (lo <= 0.0) throw Error(ErrorKind::DegenerateBall, "no positive radius satisfies the Hessian band condition");
  return opt.safety * lo;
}

struct LowHull {
  double q = 0.0;      // min V(u)/|u-m|^2
  double w_en = 1.0;   // 1/max(1, -4q)
  Vec argmin;
  double check_min = 0.0;  // min of w_en V + |u-m|^2/4 over the scan
};

/// Lower quadratic hull of V around the minima, by grid scan plus local refinement.
inline LowHull low_hull(const Potential& v, const MinimaSet& m, const Box& box, int per_dim = 0) {
  const int n = v.dim();
  if (per_dim <= 1) per_dim = n == 1 ? 20001 : (n == 2 ? 401 : 31);
  LowHull out;
  out.q = std::numeric_limits<double>::infinity();
  auto ratio = [&](const Vec& u, const Vec& c) {
    const double r2 = (u - c).squaredNorm();
    return r2 < 1e-12 ? std::numeric_limits<double>::infinity() : v.value(u) / r2;
  };
  std::size_t best_m = 0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    detail::for_each_grid_point(box, per_dim, [&](const Vec& u) {
      const double r = ratio(u, m.points[k]);
      if (r < out.q) {
        out.q = r;
        out.argmin = u;
        best_m = k;
      }
    });
  }
  // The ratio tends to the half-Hessian at the minimum itself.
  for (const auto& c : m.points) out.q = std::min(out.q, 0.5 * detail::min_eig(v.hessian(c)));
  if (out.argmin.size() == 0) out.argmin = m.points[best_m];

  // compass search refinement, kept inside the box
  const Vec& c = m.points[best_m];
  Vec u = out.argmin;
  double h = (box.hi - box.lo).maxCoeff() / (per_dim - 1);
  double f = ratio(u, c);
  while (h > 1e-12 && std::isfinite(f)) {
    bool improved = false;
    for (int i = 0; i < n && !improved; ++i) {
      for (double s : {1.0, -1.0}) {
        Vec t = u;
        t[i] += s * h;
        t = t.cwiseMax(box.lo).cwiseMin(box.hi);
        const double ft = ratio(t, c);
        if (ft < f) {
          u = t;
          f = ft;
          improved = true;
          break;
        }
      }
    }
    if (!improved) h *= 0.5;
  }
  if (f < out.q) {
    out.q = f;
    out.argmin = u;
  }

  // a minimiser on the boundary with the ratio still decreasing outward means the box is too small
  const double span = (box.hi - box.lo).maxCoeff();
  for (int i = 0; i < n; ++i) {
    for (double s : {1.0, -1.0}) {
      const double edge = s > 0 ? box.hi[i] : box.lo[i];
      if (std::abs(out.argmin[i] - edge) > 1e-9 * (1.0 + span)) continue;
      Vec t = out.argmin;
      t[i] += s * 1e-3 * span;
      if (ratio(t, c) < out.q) {
        Error err(ErrorKind::NonCoerciveBox, "lower-hull minimiser sits on the box boundary");
        err.point.assign(out.argmin.data(), out.argmin.data() + n);
        throw err;
      }
    }
  }

  out.w_en = 1.0 / std::max(1.0, -4.0 * out.q);
  out.check_min = std::numeric_limits<double>::infinity();
  const int coarse = n == 1 ? 2001 : (n == 2 ? 101 : 11);
  for (const auto& p : m.points)
    detail::for_each_grid_point(box, coarse, [&](const Vec& w) {
      out.check_min = std::min(out.check_min, out.w_en * v.value(w) + 0.25 * (w - p).squaredNorm());
    });
  return out;
}

/// Smallest R such that u . grad V(u) > 0 whenever |u| >= R, times 1.1.
/// For potentials flagged non-coercive the default box radius is used
/// (the solutions of interest stay there by comparison).
inline double attracting_radius(const Potential& v) {
  const Box box = v.default_box();
  if (v.known_noncoercive()) return box.radius();
  const int n = v.dim();
  const auto dirs = detail::sphere_directions(n, 128);
  const double rmax = 10.0 * std::max(1.0, box.radius());
  const int steps = 4000;
  double last_bad = 0.0;
  for (int k = 1; k <= steps; ++k) {
    const double r = rmax * k / steps;
    for (const auto& e : dirs) {
      const Vec u = r * e;
      if (u.dot(v.gradient(u)) <= 0.0) {
        last_bad = r;
        break;
      }
    }
  }
  if (last_bad >= rmax) throw Error(ErrorKind::NonCoerciveBox, "u . grad V does not become positive at large |u|");
  return 1.1 * std::max(last_bad, rmax / steps);
}

struct CoercivityReport {
  std::vector<double> radii;
  std::vector<double> inf_ratio;  // inf over |u| = R of u . grad V / |u|^2
  bool pass = false;
};

inline CoercivityReport coercivity_probe(const Potential& v, const std::vector<double>& radii, double floor = 1e-3) {
  CoercivityReport rep;
  rep.radii = radii;
  const auto dirs = detail::sphere_directions(v.dim(), 256);
  for (double r : radii) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : dirs) {
      const Vec u = r * e;
      best = std::min(best, u.dot(v.gradient(u)) / (r * r));
    }
    rep.inf_ratio.push_back(best);
  }
  // stabilised above the floor across the largest third of the radii, swept
  // densely from the radius just below that third so that oscillating
  // ratios (sin u / u) are caught between samples
  if (radii.empty()) return rep;
  const std::size_t k0 = radii.size() - std::max<std::size_t>(1, radii.size() / 3);
  rep.pass = true;
  for (std::size_t k = k0; k < radii.size(); ++k) rep.pass = rep.pass && rep.inf_ratio[k] > floor;
  const double a = radii[k0 > 0 ? k0 - 1 : 0], b = radii.back();
  const int sweep = b > a ? 2000 : 0;
  for (int j = 0; j <= sweep && rep.pass; ++j) {
    const double r = a + (b - a) * j / sweep;
    for (const auto& e : dirs) {
      const Vec u = r * e;
      if (u.dot(v.gradient(u)) / (r * r) <= floor) {
        rep.pass = false;
        break;
      }
    }
  }
  return rep;
}

struct StructuralConstants {
  double d_Esc = 0.0;
  double q_low_hull = 0.0;
  double w_en = 1.0;
  double lambda_d_min = 1.0;
  double lambda_d_max = 1.0;
  double nu_v_min = 0.0;
  double nu_v_max = 0.0;
  double kappa = 0.0;
  double nu_F = 0.0;
  double nu_F_prime = 0.0;
  double d_esc = 0.0;
  double R_att = 0.0;
  double R = 0.0;        // radius the R-dependent constants were evaluated at
  double K_F = 0.0;      // K_F(R)
  double L = 0.0;        // L(R)
  double c_noesc = 0.0;  // c_noesc(R)
  double K_F_att = 0.0;  // K_F(R_att)
  double c_noinv = 0.0;
  double K_F_prime = 0.0;

  /// No-escape hull.
  double h_noesc(double x) const {
    if (x < 0.0) return std::numeric_limits<double>::infinity();
    if (x <= L) return d_esc * d_esc / 2.0 * (1.0 - x / (2.0 * L));
    return d_esc * d_esc / 4.0;
  }
};

/// max over |v| <= R and m in M of nu_F (w_en V(v) + |v-m|^2/2) - (v-m).grad V(v) + nu_min/4 |v-m|^2.
inline double pollution_constant(const Potential& v, const MinimaSet& m, double R, double nu_F, double w_en) {
  const int n = v.dim();
  const int per_dim = n == 1 ? 4001 : (n == 2 ? 201 : 21);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& c : m.points) {
    detail::for_each_grid_point(Box::centered(n, R), per_dim, [&](const Vec& u) {
      if (u.norm() > R * (1.0 + 1e-12)) return;
      const Vec w = u - c;
      const double val = nu_F * (w_en * v.value(u) + 0.5 * w.squaredNorm()) - w.dot(v.gradient(u)) +
                         0.25 * m.nu_min * w.squaredNorm();
      best = std::max(best, val);
    });
  }
  return best;
}

/// Evaluates the firewall constants; R_init <= 0 means R = R_att.
inline StructuralConstants structural_constants(const Potential& v, const Diffusion& d, const MinimaSet& m,
                                                double d_Esc, const LowHull& hull, double R_att,
                                                double R_init = 0.0) {
  StructuralConstants k;
  k.d_Esc = d_Esc;
  k.q_low_hull = hull.q;
  k.w_en = hull.w_en;
  k.lambda_d_min = d.lambda_min();
  k.lambda_d_max = d.lambda_max();
  k.nu_v_min = m.nu_min;
  k.nu_v_max = m.nu_max;
  k.R_att = R_att;

  const double ld = k.lambda_d_max, w = k.w_en;
  k.kappa = std::min(std::sqrt(2.0 / (w * ld)), std::sqrt(m.nu_min / (2.0 * ld)));
  k.nu_F = std::min(1.0 / w, m.nu_min / (4.0 * w * m.nu_max));
  k.nu_F_prime = std::min(k.nu_F, k.kappa / 2.0);
  k.d_esc = d_Esc * std::sqrt(std::min(w / 2.0, 0.25) / std::max((1.0 + k.kappa * ld) / 2.0, ld / 2.0));

  auto noesc = [&](double kf, double& L) {
    L = std::log(8.0 * kf / (k.nu_F * k.d_esc * k.d_esc * k.kappa)) / k.kappa;
    L = std::max(L, 0.0);
    return 8.0 * kf * L / (k.kappa * k.d_esc * k.d_esc);
  };

  k.K_F_att = pollution_constant(v, m, R_att, k.nu_F, w);
  double L_att = 0.0;
  const double c_att = noesc(k.K_F_att, L_att);
  k.c_noinv = c_att + 1.0;

  k.R = R_init > 0.0 ? std::max(R_init, R_att) : R_att;
  k.K_F = k.R == R_att ? k.K_F_att : pollution_constant(v, m, k.R, k.nu_F, w);
  k.c_noesc = noesc(k.K_F, k.L);
  k.K_F_prime = k.d_esc * k.d_esc / 4.0 + 2.0 * k.K_F_att / (k.kappa * k.kappa);
  return k;
}

/// Everything derived from (V, D) alone, bundled.
struct PotentialAnalysis {
  PotentialPtr potential;
  Diffusion diffusion;
  MinimaSet minima;
  LowHull hull;
  StructuralConstants constants;
  bool coercive = true;

  double d_Esc() const { return constants.d_Esc; }
};

inline PotentialAnalysis analyze(PotentialPtr v, const Diffusion& d, std::optional<Box> box = std::nullopt) {
  if (d.dim() != v->dim()) throw Error(ErrorKind::Config, "diffusion matrix dimension does not match the potential");
  PotentialAnalysis a;
  a.potential = v;
  a.diffusion = d;
  const Box search = box.value_or(v->default_box());
  a.minima = find_minima(*v, search);
  const double d_Esc = escape_distance(*v, d, a.minima);
  const double R_att = attracting_radius(*v);
  Box hull_box = Box::centered(v->dim(), 1.5 * R_att);
  if (v->known_noncoercive()) hull_box = search;
  a.hull = low_hull(*v, a.minima, hull_box);
  a.constants = structural_constants(*v, d, a.minima, d_Esc, a.hull, R_att);
  a.coercive = !v->known_noncoercive();
  return a;
}

}  // namespace gradflow
