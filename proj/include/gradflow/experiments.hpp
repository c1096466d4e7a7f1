#pragma once

// Scenario drivers: presets, runs with the standard observer set, asymptotic
// energy, threshold bisection, upper semi-continuity probe, chain existence.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <locale>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gradflow/diagnostics.hpp"
#include "gradflow/stationary.hpp"
#include "gradflow/terrace.hpp"

namespace gradflow {

struct Scenario {
  std::string name = "custom";
  // [potential]
  std::string potential = "allen-cahn";
  double diffusion = 1.0;  // D = diffusion * I
  // [grid]
  double x_min = -40.0;
  double x_max = 40.0;
  double dx = 0.05;
  std::string boundary = "clamped";
  // [time]
  double dt = 1e-3;
  double T_final = 100.0;
  double cap_time = 1e4;  // classification runs of the threshold search
  // [initial]
  std::string initial = "constant";  // constant | tanh-step | plateau | terrace
  std::vector<double> m_minus{-1.0};
  std::vector<double> m_plus{1.0};
  double center = 0.0;
  double width = std::sqrt(2.0);
  std::vector<double> u_neg{1.0};
  double L = 10.0;
  double s = 1.0;
  double s_lo = 0.0;
  double s_hi = 1.0;
  double tol_s = 1e-3;
  std::string items;  // "id@x, id@x, ..."
  // [observers]
  int stride = 1000;
  int profile_every = 0;    // records between profile dumps; 0: first and last only
  double c_factor = 1.0;    // window speed in units of c_noinv
  double dense_until = 0.0; // record every step while t <= dense_until
};

inline std::vector<std::string> preset_names() {
  return {"ac-kink", "ac-pair", "sg-two-kink", "nagumo-threshold"};
}

inline Scenario preset(const std::string& name) {
  Scenario s;
  s.name = name;
  if (name == "ac-kink") {
    s.potential = "allen-cahn";
    s.x_min = -30.0;
    s.x_max = 30.0;
    s.T_final = 50.0;
    s.initial = "tanh-step";
    s.m_minus = {-1.0};
    s.m_plus = {1.0};
    s.stride = 500;
    return s;
  }
  if (name == "ac-pair") {
    s.potential = "allen-cahn";
    s.x_min = -25.0;
    s.x_max = 25.0;
    s.T_final = 3800.0;
    s.initial = "terrace";
    s.items = "het_-1_1@-4.2, het_1_-1@4.2";
    s.stride = 1000;
    s.dense_until = 30.0;
    return s;
  }
  if (name == "sg-two-kink") {
    s.potential = "sine-gordon";
    s.x_min = -200.0;
    s.x_max = 200.0;
    s.T_final = 300.0;
    s.initial = "terrace";
    s.items = "het_0_6.28319@-8, het_0_6.28319@8";
    s.stride = 1000;
    return s;
  }
  if (name == "nagumo-threshold") {
    s.potential = "nagumo:a=0.3";
    s.x_min = -60.0;
    s.x_max = 60.0;
    s.dx = 0.1;
    s.dt = 0.01;
    s.T_final = 200.0;
    s.cap_time = 1e4;
    s.initial = "plateau";
    s.m_minus = {0.0};
    s.m_plus = {0.0};
    s.u_neg = {1.0};
    s.L = 10.0;
    s.s = 1.0;
    s.stride = 100;
    return s;
  }
  throw Error(ErrorKind::UnknownPreset, "no preset named '" + name + "'");
}

// ---------------------------------------------------------------------------
// Run context.

struct RunContext {
  Scenario sc;
  PotentialAnalysis an;
  ConnectionSet library;
  PhaseIndex index;
  Grid grid;
  double c = 0.0;  // window speed
  Vec m_minus, m_plus;

  const Potential& V() const { return *an.potential; }
  const Diffusion& D() const { return an.diffusion; }
  const StructuralConstants& k() const { return an.constants; }
};

namespace detail {

inline Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

struct ParsedItem {
  std::string id;
  double x = 0.0;
};

inline std::vector<ParsedItem> parse_items(const std::string& text) {
  std::vector<ParsedItem> out;
  std::size_t pos = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (pos <= text.size()) {
    const auto next = text.find(',', pos);
    const std::string tok = trim(text.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
    if (!tok.empty()) {
      const auto at = tok.rfind('@');
      if (at == std::string::npos) throw Error(ErrorKind::Config, "terrace item '" + tok + "' needs the form id@x");
      ParsedItem it;
      it.id = trim(tok.substr(0, at));
      try {
        std::size_t used = 0;
        it.x = std::stod(tok.substr(at + 1), &used);
      } catch (const std::exception&) {
        throw Error(ErrorKind::Config, "bad position in terrace item '" + tok + "'");
      }
      out.push_back(it);
    }
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace detail

/// Chain and shifted items for a terrace initial condition; each item is moved
/// by a period translate so that it starts where the previous one ended.
inline std::pair<std::vector<Vec>, std::vector<TerraceItem>> terrace_from_items(const std::string& text,
                                                                               const ConnectionSet& lib) {
  const auto parsed = detail::parse_items(text);
  std::vector<Vec> chain;
  std::vector<TerraceItem> items;
  for (const auto& p : parsed) {
    const auto* prof = lib.find(p.id);
    if (!prof) throw Error(ErrorKind::Config, "no stationary profile with id '" + p.id + "'");
    if (chain.empty()) chain.push_back(prof->m_minus_pt);
    const Vec shift = chain.back() - prof->m_minus_pt;
    if (shift.norm() > 1e-9 && !lib.period)
      throw Error(ErrorKind::ChainMismatch, "item '" + p.id + "' does not start where the previous one ends");
    items.push_back({p.id, p.x, shift});
    chain.push_back(prof->m_plus_pt + shift);
  }
  return {chain, items};
}

inline Boundary parse_boundary(const std::string& s) {
  if (s == "clamped") return Boundary::Clamped;
  if (s == "neumann") return Boundary::Neumann;
  throw Error(ErrorKind::Config, "boundary must be clamped or neumann");
}

inline RunContext prepare(const Scenario& sc) {
  RunContext ctx;
  ctx.sc = sc;
  auto v = make_potential(sc.potential);
  if (!(sc.diffusion > 0.0)) throw Error(ErrorKind::Config, "diffusion must be positive");
  const Diffusion d(sc.diffusion * Mat::Identity(v->dim(), v->dim()));
  ctx.an = analyze(v, d);
  ctx.library = find_connections(*v, d, ctx.an.minima, ctx.an.d_Esc(), v->default_box(),
                                 std::max(ctx.an.constants.R_att, v->default_box().radius()));
  ctx.index = build_phase_index(ctx.library, ctx.an.minima);
  ctx.grid = Grid::span(sc.x_min, sc.x_max, sc.dx);
  ctx.c = sc.c_factor * ctx.an.constants.c_noinv;
  parse_boundary(sc.boundary);
  return ctx;
}

/// Plateau data u_{0,s}; s scales the excursion from the background.
inline InitialSpec plateau_spec(const RunContext& ctx, double s) {
  InitialSpec sp;
  sp.kind = InitialSpec::Kind::Plateau;
  sp.m_minus = detail::to_vec(ctx.sc.m_minus);
  sp.u_neg = detail::to_vec(ctx.sc.u_neg);
  sp.L = ctx.sc.L;
  sp.s = s;
  sp.center = ctx.sc.center;
  return sp;
}

inline State initial_state(RunContext& ctx) {
  const auto& sc = ctx.sc;
  InitialSpec sp;
  if (sc.initial == "constant") {
    sp.kind = InitialSpec::Kind::Constant;
    sp.m_minus = detail::to_vec(sc.m_minus);
  } else if (sc.initial == "tanh-step") {
    sp.kind = InitialSpec::Kind::TanhStep;
    sp.m_minus = detail::to_vec(sc.m_minus);
    sp.m_plus = detail::to_vec(sc.m_plus);
    sp.center = sc.center;
    sp.width = sc.width;
  } else if (sc.initial == "plateau") {
    sp = plateau_spec(ctx, sc.s);
  } else if (sc.initial == "terrace") {
    const auto [chain, items] = terrace_from_items(sc.items, ctx.library);
    sp.kind = InitialSpec::Kind::Samples;
    sp.samples = synthesize(chain, items, ctx.library, ctx.grid);
    sp.samples.set(0, chain.front());
    sp.samples.set(ctx.grid.N - 1, chain.back());
  } else {
    throw Error(ErrorKind::Config, "unknown initial kind '" + sc.initial + "'");
  }
  State st = init_state(sp, ctx.grid, ctx.an.minima);
  ctx.m_minus = st.u.at(0);
  ctx.m_plus = st.u.at(ctx.grid.N - 1);
  return st;
}

inline Stepper make_stepper(const RunContext& ctx, const State& st) {
  Stepper::Options o;
  o.dt = ctx.sc.dt;
  o.bc = parse_boundary(ctx.sc.boundary);
  o.blowup_radius = 10.0 * std::max({ctx.k().R_att, st.u.sup_norm(), 1.0});
  return Stepper(ctx.an.potential, ctx.D(), ctx.grid, o);
}

// ---------------------------------------------------------------------------
// Asymptotic energy.

struct AsymptoticEnergyEstimate {
  double value = 0.0;
  bool minus_infinity = false;
  double slope = 0.0;      // least-squares dE/dt over the last window
  double variation = 0.0;  // max - min over the last window
  double c_used = 0.0;
};

struct AsymptoticOptions {
  double window_fraction = 0.2;
  double variation_tol = 1e-3;
  double escape_floor = 1.0;
};

/// Mean of the windowed energy over the final window. Throws NotConverged if
/// the last-window variation exceeds the tolerance (and the run is not an invasion).
inline AsymptoticEnergyEstimate asymptotic_energy(const std::vector<double>& t, const std::vector<double>& E, double c,
                                                  const AsymptoticOptions& opt = {}) {
  if (t.size() != E.size() || t.size() < 2) throw Error(ErrorKind::NotConverged, "trajectory too short");
  AsymptoticEnergyEstimate est;
  est.c_used = c;
  const double t_end = t.back();
  const double t_win = t_end - opt.window_fraction * (t_end - t.front());
  std::vector<double> tw, ew;
  for (std::size_t k = 0; k < t.size(); ++k)
    if (t[k] >= t_win) {
      tw.push_back(t[k]);
      ew.push_back(E[k]);
    }
  if (tw.size() < 2) {
    tw = {t[t.size() - 2], t.back()};
    ew = {E[E.size() - 2], E.back()};
  }
  const double n = static_cast<double>(tw.size());
  const double mt = std::accumulate(tw.begin(), tw.end(), 0.0) / n;
  const double me = std::accumulate(ew.begin(), ew.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < tw.size(); ++k) {
    sxy += (tw[k] - mt) * (ew[k] - me);
    sxx += (tw[k] - mt) * (tw[k] - mt);
  }
  est.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  const auto [lo, hi] = std::minmax_element(ew.begin(), ew.end());
  est.variation = *hi - *lo;
  est.value = me;
  if (E.back() < -opt.escape_floor && est.slope < 0.0) {
    est.minus_infinity = true;
    est.value = -std::numeric_limits<double>::infinity();
    return est;
  }
  if (!(est.variation < opt.variation_tol)) {
    Error err(ErrorKind::NotConverged, "windowed energy still varies by " + std::to_string(est.variation));
    err.detail = est.variation;
    throw err;
  }
  return est;
}

// ---------------------------------------------------------------------------
// Standard run.

struct EscapeRow {
  double t = 0.0;
  int i = 0;
  int side = 0;
  double x = 0.0;
  double transversality = 0.0;
};

struct RunOptions {
  std::function<void(const State&, int record)> on_record;  // profile dumps etc.
  std::function<bool(const State&)> stop;                    // early termination
  bool track_terrace = true;
};

struct RunResult {
  Trajectory traj;
  std::vector<EscapeRow> escapes;
  std::optional<TerraceTracker> tracker;
  State final_state;
  double sup_ut = 0.0;
  double sup_H = 0.0;
  double dist_I = 0.0;
  std::optional<AsymptoticEnergyEstimate> E_inf;     // window c
  std::optional<AsymptoticEnergyEstimate> E_inf_2c;  // window 2c
  std::string not_converged;                         // message when the estimate failed
};

inline std::vector<std::string> standard_columns() {
  return {"t", "E_loc", "E_c", "E_2c", "Delta", "sup_ut", "sup_H", "logF_minus", "logF_plus", "flux_bound", "q"};
}

/// Evolves st to T_final with the standard observer set.
inline RunResult run(RunContext& ctx, State st, const RunOptions& ro = {}) {
  const auto& sc = ctx.sc;
  const Stepper stepper = make_stepper(ctx, st);
  const Potential& v = ctx.V();
  const Diffusion& d = ctx.D();
  const auto& k = ctx.k();
  const WindowSpec w{ctx.c, k.kappa};
  const FirewallParams fp{k.kappa, k.w_en};
  RunResult res;
  if (ro.track_terrace) res.tracker.emplace(ctx.library, ctx.an.minima, d, ctx.an.d_Esc());

  std::vector<ScalarObserver> obs{
      {"E_loc", [&](const State& s) { return localized_energy(s, v, d, w); }},
      {"E_c", [&](const State& s) { return window_energy(s, v, d, ctx.c * s.t); }},
      {"E_2c", [&](const State& s) { return window_energy(s, v, d, 2.0 * ctx.c * s.t); }},
      {"Delta", [&](const State& s) { return dissipation(s, w); }},
      {"sup_ut", [&](const State& s) { return sup_ut(s); }},
      {"sup_H", [&](const State& s) { return hamiltonian_field(s, v, d, ctx.c * s.t).sup; }},
      {"logF_minus", [&](const State& s) { return log_firewall(s, -ctx.c * s.t, ctx.m_minus, v, d, fp); }},
      {"logF_plus", [&](const State& s) { return log_firewall(s, ctx.c * s.t, ctx.m_plus, v, d, fp); }},
      {"flux_bound", [&](const State& s) { return energy_flux_bound(s, ctx.m_minus, ctx.m_plus, v, d, k, ctx.c); }},
      {"q",
       [&](const State& s) {
         if (!res.tracker) return -1.0;
         const auto& snap = res.tracker->observe(s.t, s.u);
         return snap.dec ? static_cast<double>(snap.dec->q) : -1.0;
       }},
  };
  int record = 0;
  auto hook = [&](const State& s) {
    const auto scan = escape_points(s.u, ctx.an.minima, d, ctx.an.d_Esc());
    for (const auto& e : scan.points) res.escapes.push_back({s.t, e.index, e.side, e.x, e.transversality});
    if (ro.on_record) ro.on_record(s, record);
    ++record;
    return ro.stop ? ro.stop(s) : false;
  };

  const double T = sc.T_final;
  if (sc.dense_until > st.t && sc.dense_until < T) {
    Trajectory a = evolve(stepper, st, sc.dense_until, obs, 1, hook);
    res.traj = a;
    const bool stopped = ro.stop && ro.stop(st);
    if (!stopped) {
      Trajectory b = evolve(stepper, st, T, obs, sc.stride, hook, false);
      res.traj.rows.insert(res.traj.rows.end(), b.rows.begin(), b.rows.end());
    }
  } else {
    res.traj = evolve(stepper, st, T, obs, sc.stride, hook);
  }
  res.traj.columns = standard_columns();
  res.final_state = st;
  res.sup_ut = sup_ut(st);
  res.sup_H = hamiltonian_field(st, v, d, ctx.c * st.t).sup;
  res.dist_I = distance_to_stationary_set(st, ctx.index, ctx.c * st.t);
  const auto t = res.traj.column("t");
  try {
    res.E_inf = asymptotic_energy(t, res.traj.column("E_c"), ctx.c);
    res.E_inf_2c = asymptotic_energy(t, res.traj.column("E_2c"), 2.0 * ctx.c);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NotConverged) throw;
    res.not_converged = e.what();
  }
  return res;
}

// ---------------------------------------------------------------------------
// Threshold between relaxation and escape.

enum class Verdict { Relax, Escape, Undecided };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Relax: return "RELAX";
    case Verdict::Escape: return "ESCAPE";
    case Verdict::Undecided: return "UNDECIDED";
  }
  return "?";
}

struct ThresholdRun {
  double s = 0.0;
  Verdict verdict = Verdict::Undecided;
  double t_end = 0.0;
  double E_end = 0.0;
  double sup_dev = 0.0;  // sup |u - m| at the end
};

struct ClassifyOptions {
  double cap = 1e4;
  double escape_energy = -1.0;
  double relax_fraction = 0.5;  // of d_Esc
  int check_every = 10;         // steps
  std::optional<Profile> perturbation;
  std::function<void(const State&)> observe;  // called at every check
};

/// Evolves u_{0,s} until it relaxes to the background or its energy drops below
/// the escape level.
inline ThresholdRun classify(const RunContext& ctx, double s, const ClassifyOptions& opt = {}) {
  InitialSpec sp = plateau_spec(ctx, s);
  State st = init_state(sp, ctx.grid, ctx.an.minima);
  if (opt.perturbation) {
    for (std::size_t k = 0; k < st.u.values.size(); ++k) st.u.values[k] += opt.perturbation->values[k];
    st.u.set(0, sp.m_minus);
    st.u.set(ctx.grid.N - 1, sp.m_minus);
  }
  const Stepper stepper = make_stepper(ctx, st);
  const Vec m = sp.m_minus;
  const double d_Esc = ctx.an.d_Esc();
  ThresholdRun out;
  out.s = s;
  auto dev = [&](const State& x) {
    double r = 0.0;
    for (int i = 0; i < x.u.grid.N; ++i) r = std::max(r, ctx.D().norm(x.u.at(i) - m));
    return r;
  };
  auto energy = [&](const State& x) { return window_energy(x, ctx.V(), ctx.D(), std::numeric_limits<double>::infinity()); };
  evolve(stepper, st, opt.cap, {}, opt.check_every, [&](const State& x) {
    if (opt.observe) opt.observe(x);
    if (dev(x) < opt.relax_fraction * d_Esc) {
      out.verdict = Verdict::Relax;
      return true;
    }
    if (energy(x) < opt.escape_energy) {
      out.verdict = Verdict::Escape;
      return true;
    }
    return false;
  });
  out.t_end = st.t;
  out.E_end = energy(st);
  out.sup_dev = dev(st);
  return out;
}

struct ThresholdResult {
  double s_lo = 0.0;  // RELAX side
  double s_hi = 0.0;  // ESCAPE side
  double L_used = 0.0;
  double E_initial = 0.0;  // energy of u_{0,1}
  std::vector<std::pair<double, double>> brackets;
  ThresholdRun lo_run, hi_run;
  int iterations = 0;
};

/// Energy of u_{0,1} on the context grid.
inline double plateau_energy(const RunContext& ctx) {
  State st = init_state(plateau_spec(ctx, 1.0), ctx.grid, ctx.an.minima);
  return window_energy(st, ctx.V(), ctx.D(), std::numeric_limits<double>::infinity());
}

/// Grows L (and the grid with it) until E[u_{0,1}] < 0.
inline void ensure_negative_plateau(RunContext& ctx) {
  for (int it = 0; it < 40; ++it) {
    const double margin = 40.0;
    if (ctx.sc.L + margin > std::min(-ctx.sc.x_min, ctx.sc.x_max)) {
      ctx.sc.x_min = std::min(ctx.sc.x_min, -(ctx.sc.L + margin));
      ctx.sc.x_max = std::max(ctx.sc.x_max, ctx.sc.L + margin);
      ctx.grid = Grid::span(ctx.sc.x_min, ctx.sc.x_max, ctx.sc.dx);
    }
    if (plateau_energy(ctx) < 0.0) return;
    ctx.sc.L *= 1.25;
  }
  throw Error(ErrorKind::Config, "could not make the plateau energy negative; does V take negative values at u_neg?");
}

inline ThresholdResult threshold_bisect(RunContext& ctx, double tol_s, const ClassifyOptions& copt = {}) {
  const Vec u_neg = detail::to_vec(ctx.sc.u_neg);
  if (!(ctx.V().value(u_neg) < 0.0)) throw Error(ErrorKind::Config, "threshold search needs V(u_neg) < 0");
  ensure_negative_plateau(ctx);
  ThresholdResult r;
  r.L_used = ctx.sc.L;
  r.E_initial = plateau_energy(ctx);
  ClassifyOptions o = copt;
  o.cap = ctx.sc.cap_time;
  ThresholdRun lo = classify(ctx, ctx.sc.s_lo, o);
  ThresholdRun hi = classify(ctx, ctx.sc.s_hi, o);
  if (lo.verdict == hi.verdict)
    throw Error(ErrorKind::NoSignChange, std::string("both ends of the s range classify as ") + to_string(lo.verdict));
  if (lo.verdict == Verdict::Escape) std::swap(lo, hi);
  if (lo.verdict != Verdict::Relax || hi.verdict != Verdict::Escape)
    throw Error(ErrorKind::NoSignChange, "an end of the s range is undecided at the cap time");
  r.brackets.emplace_back(lo.s, hi.s);
  while (std::abs(hi.s - lo.s) > tol_s) {
    const ThresholdRun mid = classify(ctx, 0.5 * (lo.s + hi.s), o);
    if (mid.verdict == Verdict::Escape) hi = mid;
    else lo = mid;  // undecided runs sit on the stable side of the cap
    r.brackets.emplace_back(lo.s, hi.s);
    ++r.iterations;
  }
  r.s_lo = lo.s;
  r.s_hi = hi.s;
  r.lo_run = lo;
  r.hi_run = hi;
  return r;
}

struct NearThreshold {
  double s = 0.0;
  double s_gap = 0.0;        // bracket width after refinement
  double t_cap = 0.0;        // time of minimal sup |u_t|
  double sup_ut_min = 0.0;
  double match_error = 0.0;  // sup |u - h(. - shift)|
  double shift = 0.0;
  double energy = 0.0;       // energy at t_cap
  std::string homoclinic_id;
  Profile profile;           // state at t_cap
};

/// Peak abscissa of a homoclinic: the sample farthest from its end point.
inline double homoclinic_peak(const StationaryProfile& h) {
  const auto& o = h.orbit;
  int best = 0;
  double far = -1.0;
  for (int k = 0; k < o.size(); ++k) {
    const double r = (o.u[k] - h.m_minus_pt).norm();
    if (r > far) {
      far = r;
      best = k;
    }
  }
  return o.x(best);
}

/// Sup distance between a profile and the translate of h whose peak sits at the profile's peak.
inline std::pair<double, double> homoclinic_match(const Profile& u, const StationaryProfile& h) {
  const Vec m = h.m_minus_pt;
  int best = 0;
  double far = -1.0;
  for (int i = 0; i < u.grid.N; ++i) {
    const double r = (u.at(i) - m).norm();
    if (r > far) {
      far = r;
      best = i;
    }
  }
  double xp = u.grid.x(best);
  if (best > 0 && best + 1 < u.grid.N) {
    const double a = (u.at(best - 1) - m).norm(), b = far, c = (u.at(best + 1) - m).norm();
    const double den = a - 2.0 * b + c;
    if (den < 0.0) xp += 0.5 * (a - c) / den * u.grid.dx;
  }
  const double shift = xp - homoclinic_peak(h);
  double err = 0.0;
  for (int i = 0; i < u.grid.N; ++i) err = std::max(err, (u.at(i) - h.value(u.grid.x(i) - shift)).norm());
  return {err, shift};
}

/// Continues the bisection far below tol_s and inspects the relaxing run at
/// the time its sup |u_t| is smallest.
inline NearThreshold near_threshold(const RunContext& ctx, const ThresholdResult& tr, const StationaryProfile& h,
                                    double refine_to = 1e-13) {
  ClassifyOptions o;
  o.cap = ctx.sc.cap_time;
  double lo = tr.s_lo, hi = tr.s_hi;
  while (hi - lo > refine_to * std::max(1.0, std::abs(hi))) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (classify(ctx, mid, o).verdict == Verdict::Escape) hi = mid;
    else lo = mid;
  }
  NearThreshold nt;
  nt.s = lo;
  nt.s_gap = hi - lo;
  nt.homoclinic_id = h.id;
  nt.sup_ut_min = std::numeric_limits<double>::infinity();
  o.observe = [&](const State& x) {
    const double su = sup_ut(x);
    if (su < nt.sup_ut_min) {
      nt.sup_ut_min = su;
      nt.t_cap = x.t;
      nt.profile = x.u;
    }
  };
  classify(ctx, lo, o);
  const auto [err, shift] = homoclinic_match(nt.profile, h);
  nt.match_error = err;
  nt.shift = shift;
  State tmp;
  tmp.u = nt.profile;
  tmp.t = nt.t_cap;
  nt.energy = window_energy(tmp, ctx.V(), ctx.D(), std::numeric_limits<double>::infinity());
  return nt;
}

struct UscReport {
  double base = 0.0;
  double tol = 0.02;
  std::vector<double> deltas;
  std::vector<double> inward;   // E_inf(delta) for -delta * bump
  std::vector<double> outward;  // E_inf(delta) for +delta * bump
  double limsup = 0.0;          // max over the two smallest deltas
  bool pass = false;
};

/// Asymptotic energy of a classified run: 0 after relaxation, -inf after escape,
/// the final energy otherwise.
inline double classified_energy(const ThresholdRun& r) {
  if (r.verdict == Verdict::Relax) return 0.0;
  if (r.verdict == Verdict::Escape) return -std::numeric_limits<double>::infinity();
  return r.E_end;
}

/// Bump used for the probe: smooth cut-off of half-width 2 around the plateau centre.
inline Profile usc_bump(const RunContext& ctx) {
  Profile v(ctx.grid, ctx.V().dim());
  for (int i = 0; i < ctx.grid.N; ++i) {
    const double b = smooth_cutoff(std::abs(ctx.grid.x(i) - ctx.sc.center) - 2.0);
    for (int c = 0; c < v.n; ++c) v(i, c) = b;
  }
  return v;
}

inline UscReport usc_probe(const RunContext& ctx, double s_base, double base_value, const Profile& bump,
                           std::vector<double> deltas, double tol = 0.02) {
  UscReport rep;
  rep.base = base_value;
  rep.tol = tol;
  std::sort(deltas.begin(), deltas.end(), std::greater<>());
  rep.deltas = deltas;
  ClassifyOptions o;
  o.cap = ctx.sc.cap_time;
  for (double dl : deltas) {
    for (int sign : {-1, +1}) {
      Profile p = bump;
      for (auto& x : p.values) x *= sign * dl;
      o.perturbation = p;
      const double e = classified_energy(classify(ctx, s_base, o));
      (sign < 0 ? rep.inward : rep.outward).push_back(e);
    }
  }
  rep.limsup = -std::numeric_limits<double>::infinity();
  for (std::size_t k = deltas.size() >= 2 ? deltas.size() - 2 : 0; k < deltas.size(); ++k)
    rep.limsup = std::max({rep.limsup, rep.inward[k], rep.outward[k]});
  rep.pass = rep.limsup <= base_value + tol;
  return rep;
}

// ---------------------------------------------------------------------------
// Existence corollaries.

struct ChainVerdict {
  bool takes_negative_values = false;
  std::string heteroclinic_chain;  // FOUND | SEARCH-INCOMPLETE | NOT-PROMISED
  std::string homoclinic;          // FOUND | SEARCH-INCOMPLETE | NOT-PROMISED
  std::vector<std::string> ids;
};

/// Reports whether the objects promised by the existence corollaries are in the catalog.
inline ChainVerdict chain_existence(const PotentialAnalysis& an, const ConnectionSet& lib) {
  ChainVerdict v;
  const Box box = an.potential->known_noncoercive() ? an.potential->default_box()
                                                    : Box::centered(an.potential->dim(), 1.5 * an.constants.R_att);
  v.takes_negative_values = potential_floor(*an.potential, box) < -1e-10;
  for (const auto& p : lib.profiles) v.ids.push_back(p.id);
  const auto& M = an.minima;
  if (v.takes_negative_values) {
    v.heteroclinic_chain = "NOT-PROMISED";
    const bool found = std::any_of(lib.profiles.begin(), lib.profiles.end(), [](const auto& p) { return p.homoclinic; });
    v.homoclinic = found ? "FOUND" : "SEARCH-INCOMPLETE";
    return v;
  }
  v.homoclinic = "NOT-PROMISED";
  if (M.size() < 2) {
    v.heteroclinic_chain = "NOT-PROMISED";
    return v;
  }
  // connectivity of the minima graph under heteroclinics (and period translates)
  std::vector<int> comp(M.size());
  std::iota(comp.begin(), comp.end(), 0);
  std::function<int(int)> root = [&](int a) { return comp[a] == a ? a : comp[a] = root(comp[a]); };
  for (const auto& p : lib.profiles) {
    if (p.homoclinic) continue;
    for (std::size_t a = 0; a < M.size(); ++a)
      for (std::size_t b = 0; b < M.size(); ++b)
        if (detail::same_class(p.m_minus_pt, p.m_plus_pt, M.points[a], M.points[b], lib.period))
          comp[root(static_cast<int>(a))] = root(static_cast<int>(b));
  }
  bool connected = true;
  for (std::size_t a = 1; a < M.size(); ++a) connected = connected && root(static_cast<int>(a)) == root(0);
  v.heteroclinic_chain = connected ? "FOUND" : "SEARCH-INCOMPLETE";
  return v;
}

// ---------------------------------------------------------------------------
// Assertions.

struct ReportRecord {
  std::string name;
  std::string expected;
  double observed = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string note;
};

namespace detail {

inline std::string num(double x) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(10);
  os << x;
  return os.str();
}

}  // namespace detail

/// Records for a converged run: relaxation diagnostics and E_inf well-definedness.
inline void converged_run_records(const RunResult& r, std::vector<ReportRecord>& out, const std::string& prefix) {
  out.push_back({prefix + ".sup_ut", "< 1e-3", r.sup_ut, 1e-3, r.sup_ut < 1e-3, ""});
  out.push_back({prefix + ".sup_H", "< 1e-3", r.sup_H, 1e-3, r.sup_H < 1e-3, ""});
  out.push_back({prefix + ".dist_I", "< 0.02", r.dist_I, 0.02, r.dist_I < 0.02, ""});
  if (!r.E_inf || !r.E_inf_2c) {
    out.push_back({prefix + ".E_inf_converged", "last-window variation < 1e-3", 0.0, 1e-3, false, r.not_converged});
    return;
  }
  const double a = r.E_inf->value, b = r.E_inf_2c->value;
  const bool finite = std::isfinite(a) && std::isfinite(b);
  out.push_back({prefix + ".E_inf_c_vs_2c", "|E(c) - E(2c)| <= 1e-3", finite ? std::abs(a - b) : a, 1e-3,
                 finite && std::abs(a - b) <= 1e-3, ""});
  out.push_back({prefix + ".E_inf_nonneg", ">= -1e-3", a, 1e-3, !finite || a >= -1e-3, ""});
}

struct PresetOutcome {
  std::vector<ReportRecord> records;
  std::optional<RunResult> run;
  std::optional<ThresholdResult> threshold;
  std::optional<NearThreshold> near;
  std::optional<UscReport> usc;
  RunContext ctx;
};

inline bool all_pass(const std::vector<ReportRecord>& r) {
  return std::all_of(r.begin(), r.end(), [](const ReportRecord& x) { return x.pass; });
}

/// Least-squares slope of y(t) over t in [a, b], skipping non-finite values.
inline double fitted_slope(const std::vector<double>& t, const std::vector<double>& y, double a, double b) {
  double st = 0, sy = 0, stt = 0, sty = 0, n = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (t[k] < a || t[k] > b || !std::isfinite(y[k])) continue;
    st += t[k];
    sy += y[k];
    stt += t[k] * t[k];
    sty += t[k] * y[k];
    n += 1;
  }
  const double den = n * stt - st * st;
  return den > 0.0 ? (n * sty - st * sy) / den : std::numeric_limits<double>::quiet_NaN();
}

/// Worst slack of E(t_{k+1}) - E(t_k) <= -Delta dt / 2 + flux dt + 1e-3 dt over records with t_k >= t_from
/// (Delta and the flux bound averaged over the interval by the trapezoid rule). Positive means violated.
inline double ledger_violation(const Trajectory& tr, double t_from, double tol_rate = 1e-3) {
  const auto t = tr.column("t"), E = tr.column("E_loc"), D = tr.column("Delta"), F = tr.column("flux_bound");
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < t.size(); ++k) {
    if (t[k] < t_from) continue;
    const double h = t[k + 1] - t[k];
    const double rhs = -0.25 * (D[k] + D[k + 1]) * h + 0.5 * (F[k] + F[k + 1]) * h + tol_rate * h;
    worst = std::max(worst, (E[k + 1] - E[k]) - rhs);
  }
  return worst;
}

/// Runs a preset and evaluates its assertions.
inline PresetOutcome verify_preset(const std::string& name, const RunOptions& ro = {}) {
  PresetOutcome out;
  Scenario sc = preset(name);
  out.ctx = prepare(sc);
  auto& ctx = out.ctx;
  auto& rec = out.records;

  if (name == "nagumo-threshold") {
    const StationaryProfile* h = nullptr;
    for (const auto& p : ctx.library.profiles)
      if (p.homoclinic && (h == nullptr || p.value(homoclinic_peak(p))[0] > h->value(homoclinic_peak(*h))[0])) h = &p;
    if (!h) {
      rec.push_back({name + ".homoclinic", "present in catalog", 0.0, 0.0, false, "no homoclinic found"});
      return out;
    }
    out.threshold = threshold_bisect(ctx, sc.tol_s);
    const auto& tr = *out.threshold;
    rec.push_back({name + ".bracket", "s_hi - s_lo <= tol_s", tr.s_hi - tr.s_lo, sc.tol_s, tr.s_hi - tr.s_lo <= sc.tol_s, ""});
    bool halves = true;
    for (std::size_t k = 1; k < tr.brackets.size(); ++k) {
      const double w0 = tr.brackets[k - 1].second - tr.brackets[k - 1].first;
      const double w1 = tr.brackets[k].second - tr.brackets[k].first;
      halves = halves && std::abs(std::abs(w1) - 0.5 * std::abs(w0)) <= 1e-15 * std::abs(w0) + 1e-300;
    }
    rec.push_back({name + ".bracket_halving", "each width half the previous", 0.0, 0.0, halves, ""});
    out.near = near_threshold(ctx, tr, *h);
    const auto& nt = *out.near;
    rec.push_back({name + ".homoclinic_match", "sup |u - h(. - x0)| < 0.05", nt.match_error, 0.05, nt.match_error < 0.05, ""});
    rec.push_back({name + ".E_near", "E[h] = " + detail::num(h->energy), nt.energy, 0.05,
                   std::abs(nt.energy - h->energy) <= 0.05, ""});
    out.usc = usc_probe(ctx, nt.s, nt.energy, usc_bump(ctx), {1e-2, 1e-3, 1e-4});
    rec.push_back({name + ".usc", "limsup <= base + 0.02", out.usc->limsup, 0.02, out.usc->pass, ""});
    return out;
  }

  State st = initial_state(ctx);
  out.run = run(ctx, st, ro);
  const auto& r = *out.run;
  converged_run_records(r, rec, name);

  if (name == "ac-kink") {
    const double e = r.E_inf ? r.E_inf->value : std::numeric_limits<double>::quiet_NaN();
    const auto* k = ctx.library.find("het_-1_1");
    const double ek = k ? k->energy : std::numeric_limits<double>::quiet_NaN();
    rec.push_back({name + ".E_inf", "E[kink] = " + detail::num(ek), e, 1e-3, std::abs(e - ek) <= 1e-3, ""});
  } else if (name == "ac-pair") {
    const double viol = ledger_violation(r.traj, 1.0);
    rec.push_back({name + ".energy_ledger", "max slack <= 0", viol, 0.0, viol <= 0.0, ""});
    const auto t = r.traj.column("t");
    const double s1 = fitted_slope(t, r.traj.column("logF_plus"), 5.0, 20.0);
    const double s2 = fitted_slope(t, r.traj.column("logF_minus"), 5.0, 20.0);
    const double slope = std::max(s1, s2);
    const double bound = -ctx.k().nu_F_prime / 2.0;
    rec.push_back({name + ".firewall_slope", "<= -nu'_F/2 = " + detail::num(bound), slope, 0.0, slope <= bound, ""});
    const auto& ev = r.tracker->events();
    const bool one = ev.size() == 1 && ev[0].q_old == 2 && ev[0].q_new == 0;
    rec.push_back({name + ".annihilation", "exactly one TopologyChange 2->0", static_cast<double>(ev.size()), 0.0, one,
                   ev.empty() ? "" : "t = " + detail::num(ev[0].t)});
    const double e = r.E_inf ? r.E_inf->value : std::numeric_limits<double>::quiet_NaN();
    rec.push_back({name + ".E_inf", "0", e, 1e-3, std::abs(e) <= 1e-3, ""});
  } else if (name == "sg-two-kink") {
    const auto& snaps = r.tracker->snapshots();
    const auto& last = snaps.back();
    const int q = last.dec ? last.dec->q : -1;
    rec.push_back({name + ".q", "2", static_cast<double>(q), 0.0, q == 2, last.failure});
    const double e = r.E_inf ? r.E_inf->value : std::numeric_limits<double>::quiet_NaN();
    rec.push_back({name + ".E_inf", "16", e, 0.05, std::abs(e - 16.0) <= 0.05, ""});
    const auto ser = r.tracker->series();
    bool increasing = false;
    double growth = 0.0;
    if (!ser.separation.empty() && ser.t.size() >= 3) {
      const double t_win = ser.t.back() - 0.2 * (ser.t.back() - ser.t.front());
      std::size_t k0 = 0;
      while (k0 + 1 < ser.t.size() && ser.t[k0] < t_win) ++k0;
      const auto& sep = ser.separation[0];
      growth = sep.back() - sep[k0];
      increasing = true;
      for (std::size_t k = k0 + 1; k < sep.size(); ++k) increasing = increasing && sep[k] > sep[k - 1];
    }
    rec.push_back({name + ".separation_increasing", "strictly increasing over the last window", growth, 0.0, increasing, ""});
  }
  return out;
}

}  // namespace gradflow
