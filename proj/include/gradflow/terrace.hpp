#pragma once

// Standing terraces: superpositions of stationary profiles and their detection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gradflow/diagnostics.hpp"
#include "gradflow/stationary.hpp"

namespace gradflow {

struct TerraceItem {
  std::string id;
  double position = 0.0;  // first-escape abscissa
  Vec shift;              // u-space translate (period symmetry), zero otherwise
};

struct TerraceDecomposition {
  int q = 0;
  std::vector<TerraceItem> items;
  std::vector<Vec> chain;  // m_0 .. m_q
  double residual = 0.0;   // sup |u - T|
  std::vector<double> match_distance;
};

struct TerraceEnergy {
  double total = 0.0;
  std::vector<double> per_item;
};

/// T(x) = m_0 + sum_i [u_i(x - x_i) - m_{i-1}].
inline Profile synthesize(const std::vector<Vec>& chain, const std::vector<TerraceItem>& items,
                          const ConnectionSet& library, const Grid& grid) {
  if (chain.empty() || chain.size() != items.size() + 1)
    throw Error(ErrorKind::ChainMismatch, "chain must have one more entry than items");
  const int n = static_cast<int>(chain.front().size());
  std::vector<const StationaryProfile*> prof;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto* p = library.find(items[i].id);
    if (!p) throw Error(ErrorKind::ChainMismatch, "unknown profile id " + items[i].id);
    const Vec shift = items[i].shift.size() == n ? items[i].shift : Vec::Zero(n);
    if ((p->m_minus_pt + shift - chain[i]).norm() > 1e-6 || (p->m_plus_pt + shift - chain[i + 1]).norm() > 1e-6)
      throw Error(ErrorKind::ChainMismatch, "item " + std::to_string(i + 1) + " does not connect the chain");
    if (i > 0 && !(items[i].position > items[i - 1].position))
      throw Error(ErrorKind::ChainMismatch, "positions must be strictly increasing");
    prof.push_back(p);
  }
  if (items.empty() && chain.size() != 1) throw Error(ErrorKind::ChainMismatch, "q = 0 needs m_0 = m_q");
  Profile out(grid, n);
  for (int k = 0; k < grid.N; ++k) {
    Vec u = chain.front();
    for (std::size_t i = 0; i < items.size(); ++i) {
      const Vec shift = items[i].shift.size() == n ? items[i].shift : Vec::Zero(n);
      u += prof[i]->value(grid.x(k) - items[i].position) + shift - chain[i];
    }
    out.set(k, u);
  }
  return out;
}

struct DecomposeOptions {
  double match_tol = 0.05;
  double window_pad = 0.0;  // 0: 5/sqrt(nu_min)
};

/// Segments the profile at its escape points and matches each core against the
/// compatible library items.
inline TerraceDecomposition decompose(const Profile& u, const ConnectionSet& library, const MinimaSet& M,
                                      const Diffusion& d, double d_Esc, const DecomposeOptions& opt = {}) {
  const int n = u.n;
  double end_dist = 0.0;
  M.nearest(u.at(0), d, &end_dist);
  double end_dist_r = 0.0;
  M.nearest(u.at(u.grid.N - 1), d, &end_dist_r);
  if (end_dist > d_Esc / 2.0 || end_dist_r > d_Esc / 2.0)
    throw Error(ErrorKind::ChainBroken, "profile ends are not close to minima");
  const auto scan = escape_points(u, M, d, d_Esc);
  if (scan.ambiguous || scan.points.size() % 2 != 0)
    throw Error(ErrorKind::ChainBroken, "profile escapes without re-entering an escape ball");

  TerraceDecomposition dec;
  for (int idx : scan.chain) dec.chain.push_back(M.points[idx]);
  dec.q = static_cast<int>(scan.points.size() / 2);
  const double pad = opt.window_pad > 0.0 ? opt.window_pad : 5.0 / std::sqrt(M.nu_min);

  for (int i = 0; i < dec.q; ++i) {
    const double xl = scan.points[2 * i].x;
    const double xr = scan.points[2 * i + 1].x;
    const Vec& a = dec.chain[i];
    const Vec& b = dec.chain[i + 1];
    double best = std::numeric_limits<double>::infinity();
    TerraceItem item;
    for (const auto& p : library.profiles) {
      const Vec shift = a - p.m_minus_pt;
      if ((p.m_plus_pt + shift - b).norm() > 1e-6) continue;
      if (!detail::same_class(p.m_minus_pt, p.m_plus_pt, a, b, library.period)) continue;
      double worst = 0.0;
      const int k0 = std::max(1, static_cast<int>(std::floor(u.grid.index_of(xl - pad))));
      const int k1 = std::min(u.grid.N - 2, static_cast<int>(std::ceil(u.grid.index_of(xr + pad))));
      for (int k = k0; k <= k1; ++k) {
        const double y = u.grid.x(k) - xl;
        const Vec du = u.at(k) - (p.value(y) + shift);
        const Vec dux = u.derivative(k) - p.derivative(y);
        worst = std::max(worst, std::sqrt(du.squaredNorm() + dux.squaredNorm()));
      }
      if (worst < best) {
        best = worst;
        item.id = p.id;
        item.position = xl;
        item.shift = shift;
      }
    }
    if (!(best <= opt.match_tol)) {
      Error err(ErrorKind::NoMatch, "core " + std::to_string(i + 1) + " matches no library item");
      err.detail = i + 1;
      throw err;
    }
    dec.items.push_back(item);
    dec.match_distance.push_back(best);
  }
  const Profile T = synthesize(dec.chain, dec.items, library, u.grid);
  for (int k = 0; k < u.grid.N; ++k) dec.residual = std::max(dec.residual, (u.at(k) - T.at(k)).norm());
  (void)n;
  return dec;
}

inline TerraceEnergy terrace_energy(const TerraceDecomposition& dec, const ConnectionSet& library) {
  TerraceEnergy e;
  for (const auto& it : dec.items) {
    const auto* p = library.find(it.id);
    if (!p) throw Error(ErrorKind::ChainMismatch, "unknown profile id " + it.id);
    e.per_item.push_back(p->energy);
  }
  for (double x : e.per_item) e.total += x;
  return e;
}

struct TopologyChange {
  double t = 0.0;
  int q_old = 0;
  int q_new = 0;
};

struct TerraceSnapshot {
  double t = 0.0;
  std::optional<TerraceDecomposition> dec;  // empty when unresolved
  std::string failure;
};

/// Sequential fold of decompositions over time.
class TerraceTracker {
 public:
  TerraceTracker(const ConnectionSet& library, const MinimaSet& M, const Diffusion& d, double d_Esc,
                 DecomposeOptions opt = {})
      : library_(&library), M_(&M), d_(d), d_Esc_(d_Esc), opt_(opt) {}

  const TerraceSnapshot& observe(double t, const Profile& u) {
    TerraceSnapshot s;
    s.t = t;
    try {
      s.dec = decompose(u, *library_, *M_, d_, d_Esc_, opt_);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NoMatch && e.kind() != ErrorKind::ChainBroken) throw;
      s.failure = e.what();
    }
    if (s.dec) {
      if (last_q_ && *last_q_ != s.dec->q) events_.push_back({t, *last_q_, s.dec->q});
      last_q_ = s.dec->q;
    }
    snaps_.push_back(std::move(s));
    return snaps_.back();
  }

  const std::vector<TerraceSnapshot>& snapshots() const { return snaps_; }
  const std::vector<TopologyChange>& events() const { return events_; }

  /// Position series of the last run of successful snapshots with constant q and ids.
  struct Series {
    std::vector<double> t;
    std::vector<std::vector<double>> x;         // x[i][k] position of item i at t[k]
    std::vector<std::vector<double>> velocity;  // centred differences
    std::vector<std::vector<double>> separation;
    bool converged = false;
  };

  Series series(double window_fraction = 0.2) const {
    Series s;
    int end = static_cast<int>(snaps_.size()) - 1;
    while (end >= 0 && !snaps_[end].dec) --end;
    if (end < 0) return s;
    const auto& ref = *snaps_[end].dec;
    auto same = [&](const TerraceDecomposition& d) {
      if (d.q != ref.q) return false;
      for (int i = 0; i < d.q; ++i)
        if (d.items[i].id != ref.items[i].id) return false;
      return true;
    };
    int begin = end;
    while (begin > 0 && snaps_[begin - 1].dec && same(*snaps_[begin - 1].dec)) --begin;
    s.x.assign(ref.q, {});
    for (int k = begin; k <= end; ++k) {
      s.t.push_back(snaps_[k].t);
      for (int i = 0; i < ref.q; ++i) s.x[i].push_back(snaps_[k].dec->items[i].position);
    }
    const std::size_t m = s.t.size();
    s.velocity.assign(ref.q, std::vector<double>(m, 0.0));
    for (int i = 0; i < ref.q; ++i) {
      for (std::size_t k = 0; k < m && m > 1; ++k) {
        const std::size_t a = k == 0 ? 0 : k - 1, b = k + 1 == m ? m - 1 : k + 1;
        s.velocity[i][k] = (s.x[i][b] - s.x[i][a]) / (s.t[b] - s.t[a]);
      }
    }
    for (int i = 0; i + 1 < ref.q; ++i) {
      std::vector<double> sep;
      for (std::size_t k = 0; k < m; ++k) sep.push_back(s.x[i + 1][k] - s.x[i][k]);
      s.separation.push_back(sep);
    }
    if (m >= 3) {
      const double t_end = s.t.back();
      const double t_win = t_end - window_fraction * (t_end - s.t.front());
      std::size_t k0 = 0;
      while (k0 + 1 < m && s.t[k0] < t_win) ++k0;
      double vmax = 0.0;
      for (int i = 0; i < ref.q; ++i) vmax = std::max(vmax, std::abs(s.velocity[i].back()));
      bool spreading = true;
      for (const auto& sep : s.separation) spreading = spreading && sep.back() > sep[k0];
      s.converged = vmax < 1e-3 && spreading;
    }
    return s;
  }

 private:
  const ConnectionSet* library_;
  const MinimaSet* M_;
  Diffusion d_;
  double d_Esc_;
  DecomposeOptions opt_;
  std::vector<TerraceSnapshot> snaps_;
  std::vector<TopologyChange> events_;
  std::optional<int> last_q_;
};

}  // namespace gradflow
