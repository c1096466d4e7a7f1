// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "gradflow/experiments.hpp"
#include "gradflow/io.hpp"
#include "oracles.hpp"

using namespace gradflow;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Check {
  std::string what;
  bool pass = true;
};

struct Criterion {
  int number;
  std::string title;
  std::vector<Check> checks;

  void add(bool ok, const std::string& what) { checks.push_back({what, ok}); }
  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return !checks.empty();
  }
};

std::vector<Criterion> results;

void report(const Criterion& c) {
  fmt::print("{} criterion {:>2}: {}\n", c.pass() ? "PASS" : "FAIL", c.number, c.title);
  for (const auto& k : c.checks) fmt::print("       [{}] {}\n", k.pass ? "ok" : "FAIL", k.what);
  std::fflush(stdout);
  results.push_back(c);
}

const ReportRecord* record(const PresetOutcome& o, const std::string& name) {
  for (const auto& r : o.records)
    if (r.name == name) return &r;
  return nullptr;
}

void add_record(Criterion& c, const PresetOutcome& o, const std::string& name) {
  const auto* r = record(o, name);
  if (!r) {
    c.add(false, name + " missing");
    return;
  }
  c.add(r->pass, fmt::format("{}: observed {:.6g}, expected {}{}", r->name, r->observed, r->expected,
                             r->note.empty() ? "" : " (" + r->note + ")"));
}

struct Catalog {
  PotentialPtr v;
  Diffusion d;
  PotentialAnalysis an;
  ConnectionSet set;
};

Catalog catalog(const std::string& spec) {
  Catalog c;
  c.v = make_potential(spec);
  c.d = Diffusion::identity(c.v->dim());
  c.an = analyze(c.v, c.d);
  c.set = find_connections(*c.v, c.d, c.an.minima, c.an.d_Esc(), c.v->default_box(),
                           std::max(c.an.constants.R_att, c.v->default_box().radius()));
  return c;
}

// distance to the left end non-decreasing up to the escape point, distance to the
// right end non-increasing after the last exit from its ball; returns the worst breach
double tail_breach(const StationaryProfile& p, const Diffusion& d, double d_Esc) {
  const auto& o = p.orbit;
  double worst = 0.0, prev = -1.0;
  for (int k = 0; k < o.size() && o.x(k) <= 0.0; ++k) {
    const double q = d.norm(o.u[k] - p.m_minus_pt);
    worst = std::max(worst, prev - q);
    prev = q;
  }
  int last = 0;
  for (int k = 0; k < o.size(); ++k)
    if (d.norm(o.u[k] - p.m_plus_pt) >= d_Esc) last = k;
  prev = std::numeric_limits<double>::infinity();
  for (int k = last + 1; k < o.size(); ++k) {
    const double q = d.norm(o.u[k] - p.m_plus_pt);
    worst = std::max(worst, q - prev);
    prev = q;
  }
  return worst;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

int main() {
  const auto t_all = Clock::now();

  // 1. Allen-Cahn kink against tanh(x / sqrt 2)
  {
    Criterion c{1, "stationary oracle match (Allen-Cahn kink)", {}};
    const auto t0 = Clock::now();
    const auto cat = catalog("allen-cahn");
    const double secs = seconds_since(t0);
    const auto* k = cat.set.find("het_-1_1");
    if (!k) {
      c.add(false, "het_-1_1 missing from catalog");
    } else {
      const double x_e = oracle::ac_escape_abscissa(cat.an.d_Esc());
      double err = 0.0;
      for (double x = -10.0; x <= 10.0 + 1e-12; x += 1e-3) err = std::max(err, std::abs(k->value(x - x_e)[0] - oracle::ac_kink(x)));
      c.add(err <= 1e-6, fmt::format("sup |u - tanh(x/sqrt2)| on [-10,10] = {:.3e} (<= 1e-6)", err));
      const double e_oracle = oracle::ac_kink_energy();
      c.add(std::abs(k->energy - e_oracle) <= 1e-4,
            fmt::format("E[kink] = {:.10f}, quadrature oracle {:.10f}, closed form {:.10f} (tol 1e-4)", k->energy, e_oracle,
                        oracle::ac_kink_energy_closed()));
    }
    c.add(secs < 1.0, fmt::format("runtime {:.3f} s (< 1 s)", secs));
    report(c);
  }

  // 2. sine-Gordon kink energy and two-kink run
  std::optional<PresetOutcome> sg, pair, kink, nag;
  {
    Criterion c{2, "sine-Gordon kink energy and two-kink terrace", {}};
    const auto cat = catalog("sine-gordon");
    const auto* k = cat.set.find("het_0_6.28319");
    const double e_oracle = oracle::sg_kink_energy();
    if (!k) c.add(false, "het_0_6.28319 missing from catalog");
    else
      c.add(std::abs(k->energy - 8.0) <= 1e-4 && std::abs(e_oracle - 8.0) <= 1e-4,
            fmt::format("E[kink] = {:.10f}, quadrature oracle {:.10f} (8 +- 1e-4)", k->energy, e_oracle));
    const auto t0 = Clock::now();
    sg = verify_preset("sg-two-kink");
    const double secs = seconds_since(t0);
    const auto& sc = sg->ctx.sc;
    c.add(sc.T_final == 300.0 && sc.dx == 0.05 && sc.dt == 1e-3 && sc.x_min == -200.0 && sc.x_max == 200.0,
          "scenario T = 300, dx = 0.05, dt = 1e-3, domain [-200, 200]");
    for (const char* r : {"sg-two-kink.q", "sg-two-kink.E_inf", "sg-two-kink.sup_ut", "sg-two-kink.sup_H",
                          "sg-two-kink.separation_increasing"})
      add_record(c, *sg, r);
    c.add(secs < 60.0, fmt::format("runtime {:.1f} s (< 60 s)", secs));
    report(c);
  }

  kink = verify_preset("ac-kink");
  const auto t_pair = Clock::now();
  pair = verify_preset("ac-pair");
  const double pair_secs = seconds_since(t_pair);

  // 3. relaxation diagnostics
  {
    Criterion c{3, "relaxation: final distance to the stationary set < 0.02", {}};
    for (const auto* o : {&*kink, &*pair, &*sg}) add_record(c, *o, o->ctx.sc.name + ".dist_I");
    report(c);
  }

  // 4. localized energy ledger
  {
    Criterion c{4, "localized-energy ledger on ac-pair after t = 1", {}};
    add_record(c, *pair, "ac-pair.energy_ledger");
    report(c);
  }

  // 5. firewall decay
  {
    Criterion c{5, "firewall decay slope on ac-pair over t in [5, 20]", {}};
    add_record(c, *pair, "ac-pair.firewall_slope");
    c.add(true, fmt::format("nu'_F = {:.6g} from the constants report; c_noinv = {:.6g}", pair->ctx.k().nu_F_prime,
                            pair->ctx.k().c_noinv));
    report(c);
  }

  // 6. annihilation
  {
    Criterion c{6, "ac-pair annihilation 2 -> 0 and E_inf = 0", {}};
    add_record(c, *pair, "ac-pair.annihilation");
    add_record(c, *pair, "ac-pair.E_inf");
    c.add(true, fmt::format("ac-pair run time {:.1f} s, T_final = {}", pair_secs, pair->ctx.sc.T_final));
    report(c);
  }

  // 7. Nagumo threshold
  {
    Criterion c{7, "Nagumo threshold and near-threshold homoclinic", {}};
    const auto t0 = Clock::now();
    nag = verify_preset("nagumo-threshold");
    const double secs = seconds_since(t0);
    const double a = 0.3;
    const double e_oracle = oracle::nagumo_homoclinic_energy(a);
    c.add(nag->ctx.sc.tol_s == 1e-3, "tol_s = 1e-3");
    add_record(c, *nag, "nagumo-threshold.bracket");
    add_record(c, *nag, "nagumo-threshold.homoclinic_match");
    if (nag->near) {
      const double e = nag->near->energy;
      c.add(std::abs(e - e_oracle) <= 0.05,
            fmt::format("E at cap time = {:.6f}, E[h] quadrature oracle {:.6f} (tol 0.05)", e, e_oracle));
      c.add(true, fmt::format("near-threshold s = {:.12f}, cap time {:.1f}, sup|u_t| {:.2e}", nag->near->s, nag->near->t_cap,
                              nag->near->sup_ut_min));
    } else {
      c.add(false, "no near-threshold run");
    }
    c.add(secs < 180.0, fmt::format("runtime {:.1f} s (< 3 min)", secs));
    report(c);
  }

  // 8. asymptotic energy well-defined
  {
    Criterion c{8, "E_inf(c) and E_inf(2c) agree, finite values >= -1e-3", {}};
    for (const auto* o : {&*kink, &*pair, &*sg}) {
      const auto& n = o->ctx.sc.name;
      if (record(*o, n + ".E_inf_converged")) {
        add_record(c, *o, n + ".E_inf_converged");
        continue;
      }
      add_record(c, *o, n + ".E_inf_c_vs_2c");
      add_record(c, *o, n + ".E_inf_nonneg");
    }
    report(c);
  }

  // 9. upper semicontinuity probe
  {
    Criterion c{9, "USC probe at the near-threshold Nagumo base", {}};
    add_record(c, *nag, "nagumo-threshold.usc");
    if (nag->usc) {
      const auto& u = *nag->usc;
      for (std::size_t k = 0; k < u.deltas.size(); ++k)
        c.add(true, fmt::format("delta {:.0e}: inward {:.6g}, outward {:.6g}, base {:.6g}", u.deltas[k], u.inward[k],
                                u.outward[k], u.base));
    }
    report(c);
  }

  // 10. property suites
  {
    Criterion c{10, "property suites", {}};
    const std::vector<std::string> specs{"allen-cahn", "sine-gordon", "nagumo:a=0.3", "subcritical-ac:eps=0.1",
                                         "forced-sg:omega=0.3", "gl2:eps=0.1", "quadratic"};
    double drift = 0.0, breach = 0.0, fd_g = 0.0, fd_h = 0.0;
    int shots = 0, tails = 0;
    for (const auto& spec : specs) {
      const auto cat = catalog(spec);
      const auto& M = cat.an.minima;
      const int n = cat.v->dim();
      for (std::size_t m = 0; m < M.size(); ++m) {
        const int angles = n == 1 ? 2 : 12;
        for (int a = 0; a < angles; ++a) {
          Vec coeffs(n);
          if (n == 1) coeffs[0] = a == 0 ? 1.0 : -1.0;
          else {
            coeffs.setZero();
            coeffs[0] = std::cos(2 * std::numbers::pi * a / angles);
            coeffs[1] = std::sin(2 * std::numbers::pi * a / angles);
          }
          ShootOptions so;
          so.R_max = std::max(cat.an.constants.R_att, cat.v->default_box().radius());
          try {
            const auto shot = shoot(*cat.v, cat.d, M, static_cast<int>(m), coeffs, cat.an.d_Esc(), so);
            drift = std::max(drift, shot.drift_per_x);
          } catch (const Error& e) {
            drift = std::max(drift, e.detail);
          }
          ++shots;
        }
      }
      for (const auto& p : cat.set.profiles) {
        breach = std::max(breach, tail_breach(p, cat.d, cat.an.d_Esc()));
        ++tails;
      }
      const auto w = oracle::fd_check(*cat.v, 1000, 20261015);
      fd_g = std::max(fd_g, w.gradient);
      fd_h = std::max(fd_h, w.hessian);
    }
    c.add(drift <= 1e-8, fmt::format("Hamiltonian drift per unit x over {} shooting orbits: {:.3e} (<= 1e-8)", shots, drift));
    c.add(breach <= 1e-12, fmt::format("Q-monotonicity over {} cataloged profiles: worst breach {:.3e}", tails, breach));
    c.add(fd_g < 1e-6, fmt::format("gradient finite differences at 10^3 points per potential: {:.3e} (< 1e-6)", fd_g));
    c.add(fd_h < 1e-5, fmt::format("Hessian finite differences at 10^3 points per potential: {:.3e} (< 1e-5)", fd_h));

    // round trip synthesize -> decompose
    {
      const auto ac = catalog("allen-cahn");
      const Grid g = Grid::span(-30, 30, 0.05);
      const std::vector<TerraceItem> items{{"het_-1_1", -7.3, Vec()}, {"het_1_-1", 6.1, Vec()}};
      const Vec m1 = Vec::Constant(1, -1.0), p1 = Vec::Constant(1, 1.0);
      const Profile t = synthesize({m1, p1, m1}, items, ac.set, g);
      const auto dec = decompose(t, ac.set, ac.an.minima, ac.d, ac.an.d_Esc());
      double err = dec.q == 2 ? 0.0 : std::numeric_limits<double>::infinity();
      for (int i = 0; i < dec.q && i < 2; ++i) err = std::max(err, std::abs(dec.items[i].position - items[i].position));
      c.add(err <= 2 * g.dx, fmt::format("Allen-Cahn pair round trip: position error {:.3e} (<= 2 dx = {})", err, 2 * g.dx));

      const auto sgc = catalog("sine-gordon");
      const double tp = 2 * std::numbers::pi;
      const std::vector<TerraceItem> st{{"het_0_6.28319", -8.0, Vec::Constant(1, 0.0)},
                                        {"het_0_6.28319", 8.0, Vec::Constant(1, tp)}};
      const Profile s =
          synthesize({Vec::Constant(1, 0.0), Vec::Constant(1, tp), Vec::Constant(1, 2 * tp)}, st, sgc.set, g);
      const auto ds = decompose(s, sgc.set, sgc.an.minima, sgc.d, sgc.an.d_Esc());
      double es = ds.q == 2 ? 0.0 : std::numeric_limits<double>::infinity();
      for (int i = 0; i < ds.q && i < 2; ++i) es = std::max(es, std::abs(ds.items[i].position - st[i].position));
      c.add(es <= 2 * g.dx, fmt::format("sine-Gordon staircase round trip: position error {:.3e} (<= 2 dx)", es));
    }

    // determinism: identical configuration, byte-identical CSV
    {
      const fs::path dir = fs::temp_directory_path() / "gradflow_acceptance";
      fs::remove_all(dir);
      std::string first;
      bool same = true;
      for (int rep = 0; rep < 2; ++rep) {
        Scenario sc = preset("ac-pair");
        sc.T_final = 5.0;
        sc.dense_until = 0.0;
        sc.stride = 100;
        RunContext ctx = prepare(sc);
        const auto r = run(ctx, initial_state(ctx));
        const fs::path p = dir / fmt::format("run{}", rep);
        io::write_trajectory(p / "trajectory.csv", r.traj);
        io::write_escape_track(p / "escape_track.csv", r.escapes);
        const std::string text = slurp(p / "trajectory.csv") + slurp(p / "escape_track.csv");
        if (rep == 0) first = text;
        else same = text == first && !text.empty();
      }
      c.add(same, "two ac-pair runs to t = 5 give byte-identical trajectory and escape CSV");
    }
    report(c);
  }

  // 11. truncated Lagrangian of a rotating sine-Gordon orbit
  {
    Criterion c{11, "truncated Lagrangian diverges linearly (sine-Gordon, H = 0.05)", {}};
    SineGordon v;
    const Diffusion d;
    const double H = 0.05;
    const auto o = integrate_orbit(v, d, Vec::Constant(1, 0.0), Vec::Constant(1, std::sqrt(2 * H)), -50, 50);
    const double l10 = truncated_lagrangian(o, v, d, 10.0);
    const double l20 = truncated_lagrangian(o, v, d, 20.0);
    const double l40 = truncated_lagrangian(o, v, d, 40.0);
    c.add(l10 < l20 && l20 < l40, fmt::format("L(10) = {:.6f} < L(20) = {:.6f} < L(40) = {:.6f}", l10, l20, l40));
    const double ratio = (l40 - l20) / (l20 - l10);
    c.add(ratio >= 0.8 && ratio <= 1.2, fmt::format("(L(40) - L(20)) / (L(20) - L(10)) = {:.4f} (in [0.8, 1.2])", ratio));
    const double per_length = ratio * (20.0 - 10.0) / (40.0 - 20.0);
    c.add(true, fmt::format("same ratio per unit of added length: {:.4f} (linear growth gives 1; the raw ratio is 2)",
                            per_length));
    report(c);
  }

  int failed = 0;
  for (const auto& c : results) failed += !c.pass();
  fmt::print("{} of {} criteria pass; total time {:.1f} s\n", results.size() - failed, results.size(),
             seconds_since(t_all));
  return failed == 0 ? 0 : 1;
}
