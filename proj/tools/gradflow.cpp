// gradflow: constants | stationary | simulate | threshold | verify

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "gradflow/config.hpp"
#include "gradflow/experiments.hpp"
#include "gradflow/io.hpp"

namespace fs = std::filesystem;
using namespace gradflow;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config:
    case ErrorKind::UnknownPreset:
    case ErrorKind::SpecEndpointMismatch:
    case ErrorKind::ChainMismatch:
    case ErrorKind::NoMinimumFound:
    case ErrorKind::HypothesisViolation:
    case ErrorKind::NonCoerciveBox:
    case ErrorKind::DegenerateBall:
      return 2;
    default:
      return 3;
  }
}

struct Common {
  std::string preset;
  std::string config;
  std::vector<std::string> overrides;
  std::string out = ".";
  int stride = 0;
  std::uint64_t seed = 1;
  bool dump_defaults = false;
};

Scenario scenario_from(const Common& c) {
  Scenario s;
  if (!c.preset.empty() && !c.config.empty()) throw Error(ErrorKind::Config, "use either --preset or --config");
  if (!c.preset.empty()) s = preset(c.preset);
  else if (!c.config.empty()) s = load_config(c.config);
  for (const auto& kv : c.overrides) apply_override(s, kv);
  if (c.stride > 0) s.stride = c.stride;
  return s;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--preset", c.preset, "preset scenario name");
  app->add_option("--config", c.config, "scenario file");
  app->add_option("--override", c.overrides, "key=value, repeatable")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)->allow_extra_args(false);
  app->add_option("--out", c.out, "output directory");
  app->add_option("--stride", c.stride, "record every N steps");
  app->add_option("--seed", c.seed, "seed for sampled checks");
  app->add_flag("--dump-defaults", c.dump_defaults, "print the scenario configuration and exit");
}

/// Gradient and Hessian against central differences at random points of the default box.
std::vector<ReportRecord> derivative_checks(const Potential& v, std::uint64_t seed, int count = 1000) {
  std::mt19937_64 rng(seed);
  const Box box = v.default_box();
  const int n = v.dim();
  double worst_g = 0.0, worst_h = 0.0;
  for (int k = 0; k < count; ++k) {
    Vec u(n);
    for (int i = 0; i < n; ++i) u[i] = std::uniform_real_distribution<double>(box.lo[i], box.hi[i])(rng);
    const Vec g = v.gradient(u);
    const Mat H = v.hessian(u);
    for (int i = 0; i < n; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(u[i]));
      Vec a = u, b = u;
      a[i] += h;
      b[i] -= h;
      const double fd = (v.value(a) - v.value(b)) / (2 * h);
      worst_g = std::max(worst_g, std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i])));
      const Vec fdh = (v.gradient(a) - v.gradient(b)) / (2 * h);
      for (int j = 0; j < n; ++j) worst_h = std::max(worst_h, std::abs(fdh[j] - H(j, i)) / std::max(1.0, std::abs(H(j, i))));
    }
  }
  return {{"gradient_fd", "rel. error < 1e-6", worst_g, 1e-6, worst_g < 1e-6, ""},
          {"hessian_fd", "rel. error < 1e-5", worst_h, 1e-5, worst_h < 1e-5, ""}};
}

int cmd_constants(const std::string& spec_in, const Common& c) {
  std::string spec = spec_in;
  if (spec.empty() && !c.preset.empty()) spec = preset(c.preset).potential;
  if (spec.empty()) throw Error(ErrorKind::Config, "constants needs a potential spec");
  auto v = make_potential(spec);
  const auto an = analyze(v, Diffusion::identity(v->dim()));
  const auto& k = an.constants;
  std::vector<double> radii{5, 10, 20, 40};
  const auto coerc = coercivity_probe(*v, radii);
  auto row = [](const std::string& name, double x) { fmt::print("{:<14} {}\n", name, x); };
  fmt::print("potential      {}\n", v->name());
  for (std::size_t i = 0; i < an.minima.size(); ++i) fmt::print("minimum        {}\n", io::vec_text(an.minima.points[i]));
  row("nu_V_min", k.nu_v_min);
  row("nu_V_max", k.nu_v_max);
  row("d_Esc", k.d_Esc);
  row("q_low_hull", k.q_low_hull);
  row("w_en", k.w_en);
  row("kappa", k.kappa);
  row("nu_F", k.nu_F);
  row("nu_F_prime", k.nu_F_prime);
  row("d_esc", k.d_esc);
  row("R_att", k.R_att);
  row("K_F", k.K_F);
  row("L", k.L);
  row("c_noesc", k.c_noesc);
  row("c_noinv", k.c_noinv);
  row("K_F_prime", k.K_F_prime);
  fmt::print("coercive       {}\n", coerc.pass ? "PASS" : "FAIL");
  if (v->disc_hypothesis_doubtful()) fmt::print("warning        isolated-profile assumption is doubtful for this potential\n");
  return 0;
}

int cmd_stationary(const std::string& spec_in, const Common& c) {
  std::string spec = spec_in;
  if (spec.empty() && !c.preset.empty()) spec = preset(c.preset).potential;
  if (spec.empty()) throw Error(ErrorKind::Config, "stationary needs a potential spec");
  auto v = make_potential(spec);
  const auto an = analyze(v, Diffusion::identity(v->dim()));
  const auto set = find_connections(*v, an.diffusion, an.minima, an.d_Esc(), v->default_box(),
                                    std::max(an.constants.R_att, v->default_box().radius()));
  io::write_connections(c.out, set);
  for (const auto& p : set.profiles)
    fmt::print("{:<24} E = {:.12f}  drift = {:.2e}\n", p.id, p.energy, p.hamiltonian_drift);
  const auto verdict = chain_existence(an, set);
  fmt::print("heteroclinic chain: {}\nhomoclinic:         {}\n", verdict.heteroclinic_chain, verdict.homoclinic);
  if (set.disc_hypothesis_doubtful) fmt::print("warning: profiles may form continua for this potential\n");
  return 0;
}

int cmd_simulate(const Common& c) {
  Scenario sc = scenario_from(c);
  if (c.dump_defaults) {
    std::cout << dump_config(sc);
    return 0;
  }
  RunContext ctx = prepare(sc);
  State st = initial_state(ctx);
  const fs::path out = c.out;
  RunOptions ro;
  ro.on_record = [&](const State& s, int record) {
    if (record == 0 || (sc.profile_every > 0 && record % sc.profile_every == 0))
      io::write_profile(out / io::profile_name(s.t), s.u);
  };
  RunResult r = run(ctx, st, ro);
  io::write_profile(out / io::profile_name(r.final_state.t), r.final_state.u);
  io::write_trajectory(out / "trajectory.csv", r.traj);
  io::write_escape_track(out / "escape_track.csv", r.escapes);
  io::write_terrace(out / "terrace.csv", *r.tracker, ctx.library);
  io::write_events(out / "events.log", r.tracker->events());
  std::vector<ReportRecord> recs;
  converged_run_records(r, recs, sc.name);
  nlohmann::json extra;
  extra["seed"] = c.seed;
  extra["T_final"] = r.final_state.t;
  if (!r.not_converged.empty()) extra["NotConverged"] = r.not_converged;
  io::write_report(out / "report.json", recs, extra);
  fmt::print("t = {}  sup|u_t| = {:.3e}  sup|H| = {:.3e}  dist_I = {:.3e}\n", r.final_state.t, r.sup_ut, r.sup_H, r.dist_I);
  if (r.E_inf) fmt::print("E_inf = {}\n", r.E_inf->minus_infinity ? std::string("MINUS_INFINITY") : fmt::format("{:.6f}", r.E_inf->value));
  if (!r.not_converged.empty()) fmt::print("note: {}\n", r.not_converged);
  for (const auto& e : r.tracker->events()) fmt::print("{} TOPOLOGY_CHANGE {} {}\n", e.t, e.q_old, e.q_new);
  return 0;
}

int cmd_threshold(const Common& c, double tol_s) {
  Scenario sc = scenario_from(c);
  if (tol_s > 0.0) sc.tol_s = tol_s;
  if (c.dump_defaults) {
    std::cout << dump_config(sc);
    return 0;
  }
  RunContext ctx = prepare(sc);
  const auto tr = threshold_bisect(ctx, sc.tol_s);
  fmt::print("s in [{:.10f}, {:.10f}]  width {:.3e}  iterations {}  L = {}\n", tr.s_lo, tr.s_hi, tr.s_hi - tr.s_lo,
             tr.iterations, tr.L_used);
  nlohmann::json extra;
  extra["seed"] = c.seed;
  extra["L"] = tr.L_used;
  extra["E_initial"] = tr.E_initial;
  extra["brackets"] = nlohmann::json::array();
  for (const auto& b : tr.brackets) extra["brackets"].push_back({b.first, b.second});
  extra["lo_run"] = {{"s", tr.lo_run.s}, {"verdict", to_string(tr.lo_run.verdict)}, {"t_end", tr.lo_run.t_end}};
  extra["hi_run"] = {{"s", tr.hi_run.s}, {"verdict", to_string(tr.hi_run.verdict)}, {"t_end", tr.hi_run.t_end}};
  std::vector<ReportRecord> recs{{"bracket", "s_hi - s_lo <= tol_s", tr.s_hi - tr.s_lo, sc.tol_s, tr.s_hi - tr.s_lo <= sc.tol_s, ""}};
  io::write_report(fs::path(c.out) / "report.json", recs, extra);
  return all_pass(recs) ? 0 : 1;
}

int cmd_verify(std::vector<std::string> names, const Common& c) {
  if (names.empty()) names = preset_names();
  for (const auto& n : names) preset(n);  // unknown names fail before any work
  std::vector<ReportRecord> all;
  for (const auto& n : names) {
    PresetOutcome o = verify_preset(n);
    for (auto r : derivative_checks(o.ctx.V(), c.seed)) {
      r.name = n + "." + r.name;
      o.records.push_back(r);
    }
    io::write_report(fs::path(c.out) / n / "report.json", o.records);
    const bool ok = all_pass(o.records);
    fmt::print("{} {}\n", ok ? "PASS" : "FAIL", n);
    for (const auto& r : o.records)
      if (!r.pass) fmt::print("  FAIL {} observed {} expected {}\n", r.name, r.observed, r.expected);
    all.insert(all.end(), o.records.begin(), o.records.end());
  }
  io::write_report(fs::path(c.out) / "report.json", all);
  return all_pass(all) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient reaction-diffusion laboratory"};
  app.require_subcommand(1);
  Common c;
  std::string spec;
  std::vector<std::string> names;
  double tol_s = 0.0;

  auto* constants = app.add_subcommand("constants", "structural constants of a potential");
  constants->add_option("potential", spec, "potential spec, e.g. nagumo:a=0.3");
  add_common(constants, c);
  auto* stationary = app.add_subcommand("stationary", "catalog of stationary profiles");
  stationary->add_option("potential", spec, "potential spec");
  add_common(stationary, c);
  auto* simulate = app.add_subcommand("simulate", "run a scenario");
  add_common(simulate, c);
  auto* threshold = app.add_subcommand("threshold", "bisection on the plateau scaling");
  add_common(threshold, c);
  threshold->add_option("--tol-s", tol_s, "bracket width");
  auto* verify = app.add_subcommand("verify", "run preset assertions");
  verify->add_option("presets", names, "preset names (default: all)");
  add_common(verify, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (*constants) return cmd_constants(spec, c);
    if (*stationary) return cmd_stationary(spec, c);
    if (*simulate) return cmd_simulate(c);
    if (*threshold) return cmd_threshold(c, tol_s);
    if (*verify) return cmd_verify(names, c);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
