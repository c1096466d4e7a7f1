#include <gtest/gtest.h>

#include <sstream>

#include "gradflow/config.hpp"
#include "gradflow/experiments.hpp"
#include "oracles.hpp"

using namespace gradflow;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Config;
}

RunContext& nagumo() {
  static RunContext ctx = prepare(preset("nagumo-threshold"));
  return ctx;
}

}  // namespace

TEST(Presets, AllNamedPresetsPrepare) {
  for (const auto& name : preset_names()) {
    const Scenario s = preset(name);
    EXPECT_EQ(s.name, name);
    RunContext ctx = prepare(s);
    const State st = initial_state(ctx);
    EXPECT_EQ(st.u.grid.N, ctx.grid.N) << name;
    EXPECT_FALSE(ctx.library.profiles.empty()) << name;
  }
}

TEST(Presets, UnknownPreset) {
  EXPECT_EQ(kind_of([] { preset("bogus"); }), ErrorKind::UnknownPreset);
}

TEST(Presets, PairInitialConditionIsTheTerrace) {
  RunContext ctx = prepare(preset("ac-pair"));
  const State st = initial_state(ctx);
  EXPECT_EQ(st.u(0, 0), -1.0);
  EXPECT_EQ(st.u(ctx.grid.N - 1, 0), -1.0);
  const auto [chain, items] = terrace_from_items(ctx.sc.items, ctx.library);
  ASSERT_EQ(chain.size(), 3u);
  EXPECT_NEAR(chain[1][0], 1.0, 1e-10);
  EXPECT_EQ(items[0].position, -4.2);
  EXPECT_EQ(items[1].position, 4.2);
}

TEST(Presets, StaircaseItemsAreShifted) {
  RunContext ctx = prepare(preset("sg-two-kink"));
  const auto [chain, items] = terrace_from_items(ctx.sc.items, ctx.library);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_NEAR(items[1].shift[0], 2.0 * std::numbers::pi, 1e-12);
  EXPECT_NEAR(chain.back()[0], 4.0 * std::numbers::pi, 1e-12);
}

TEST(Items, ParseErrors) {
  const auto& lib = nagumo().library;
  EXPECT_EQ(kind_of([&] { terrace_from_items("hom_0_up", lib); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([&] { terrace_from_items("hom_0_up@x", lib); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([&] { terrace_from_items("het_a_b@0", lib); }), ErrorKind::Config);
  const auto parsed = detail::parse_items(" a@1.5 ,b@-2, ");
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed[0].id, "a");
  EXPECT_EQ(parsed[1].x, -2.0);
}

TEST(AsymptoticEnergy, ConstantSeries) {
  std::vector<double> t, e;
  for (int k = 0; k <= 100; ++k) {
    t.push_back(k);
    e.push_back(1.25);
  }
  const auto est = asymptotic_energy(t, e, 1.0);
  EXPECT_EQ(est.value, 1.25);
  EXPECT_EQ(est.variation, 0.0);
  EXPECT_EQ(est.slope, 0.0);
  EXPECT_FALSE(est.minus_infinity);
}

TEST(AsymptoticEnergy, WindowMeanOfSettlingSeries) {
  std::vector<double> t, e;
  for (int k = 0; k <= 1000; ++k) {
    t.push_back(k * 0.1);
    e.push_back(2.0 + std::exp(-k * 0.1));
  }
  const auto est = asymptotic_energy(t, e, 1.0);
  EXPECT_NEAR(est.value, 2.0, 1e-3);
  EXPECT_LT(est.variation, 1e-3);
}

TEST(AsymptoticEnergy, OscillationIsNotConverged) {
  std::vector<double> t, e;
  for (int k = 0; k <= 100; ++k) {
    t.push_back(k);
    e.push_back(std::sin(k));
  }
  EXPECT_EQ(kind_of([&] { asymptotic_energy(t, e, 1.0); }), ErrorKind::NotConverged);
  EXPECT_EQ(kind_of([&] { asymptotic_energy({0.0}, {1.0}, 1.0); }), ErrorKind::NotConverged);
}

TEST(AsymptoticEnergy, EscapeIsMinusInfinity) {
  std::vector<double> t, e;
  for (int k = 0; k <= 100; ++k) {
    t.push_back(k);
    e.push_back(-0.5 * k);
  }
  const auto est = asymptotic_energy(t, e, 1.0);
  EXPECT_TRUE(est.minus_infinity);
  EXPECT_EQ(est.value, -std::numeric_limits<double>::infinity());
}

TEST(Classify, BackgroundRelaxesAndFullPlateauEscapes) {
  auto& ctx = nagumo();
  const auto r0 = classify(ctx, 0.0);
  EXPECT_EQ(r0.verdict, Verdict::Relax);
  EXPECT_EQ(classified_energy(r0), 0.0);
  const auto r1 = classify(ctx, 1.0);
  EXPECT_EQ(r1.verdict, Verdict::Escape);
  EXPECT_LT(r1.E_end, -1.0);
  EXPECT_EQ(classified_energy(r1), -std::numeric_limits<double>::infinity());
}

TEST(Classify, PlateauEnergyIsNegative) {
  RunContext ctx = prepare(preset("nagumo-threshold"));
  ensure_negative_plateau(ctx);
  EXPECT_LT(plateau_energy(ctx), 0.0);
  // the discrete energy is a Riemann sum; compare on a fine grid
  ctx.grid = Grid::span(ctx.sc.x_min, ctx.sc.x_max, 0.005);
  // u = chi(|x| - L) with chi the smooth unit-width step; E = int u'^2/2 + V(u)
  auto chi = [](double y) {
    if (y <= 0) return 1.0;
    if (y >= 1) return 0.0;
    return 1.0 / (1.0 + std::exp(1.0 / (1.0 - y) - 1.0 / y));
  };
  const double L = ctx.sc.L;
  auto u = [&](double x) { return chi(std::abs(x) - L); };
  auto density = [&](double x) {
    const double h = 1e-6;
    const double up = (u(x + h) - u(x - h)) / (2 * h);
    return 0.5 * up * up + oracle::nagumo_v(u(x), 0.3);
  };
  const double e = 2.0 * (oracle::simpson(density, 0.0, L, 2000) + oracle::simpson(density, L, L + 1.0, 20000));
  EXPECT_NEAR(plateau_energy(ctx), e, 2e-3);
}

TEST(Threshold, BracketHalves) {
  RunContext ctx = prepare(preset("nagumo-threshold"));
  ctx.sc.cap_time = 400.0;
  const auto r = threshold_bisect(ctx, 0.2);
  ASSERT_GE(r.brackets.size(), 2u);
  EXPECT_EQ(r.brackets.front(), std::make_pair(0.0, 1.0));
  for (std::size_t k = 1; k < r.brackets.size(); ++k) {
    const double w0 = r.brackets[k - 1].second - r.brackets[k - 1].first;
    const double w1 = r.brackets[k].second - r.brackets[k].first;
    EXPECT_DOUBLE_EQ(w1, 0.5 * w0);
  }
  EXPECT_LE(r.s_hi - r.s_lo, 0.2);
  EXPECT_EQ(r.hi_run.verdict, Verdict::Escape);
  EXPECT_NE(r.lo_run.verdict, Verdict::Escape);
  EXPECT_EQ(r.iterations + 1, static_cast<int>(r.brackets.size()));
}

TEST(Threshold, NoSignChange) {
  RunContext ctx = prepare(preset("nagumo-threshold"));
  ctx.sc.s_hi = 1e-3;
  EXPECT_EQ(kind_of([&] { threshold_bisect(ctx, 1e-4); }), ErrorKind::NoSignChange);
}

TEST(Threshold, NeedsNegativePotential) {
  RunContext ctx = prepare(preset("nagumo-threshold"));
  ctx.sc.u_neg = {0.2};
  EXPECT_EQ(kind_of([&] { threshold_bisect(ctx, 1e-2); }), ErrorKind::Config);
}

TEST(Usc, ZeroBumpReproducesBase) {
  const auto& ctx = nagumo();
  Profile zero(ctx.grid, 1);
  const auto rep = usc_probe(ctx, 0.0, 0.0, zero, {0.1, 0.05});
  EXPECT_EQ(rep.deltas, (std::vector<double>{0.1, 0.05}));
  for (double e : rep.inward) EXPECT_EQ(e, 0.0);
  for (double e : rep.outward) EXPECT_EQ(e, 0.0);
  EXPECT_TRUE(rep.pass);
}

TEST(Usc, BumpIsLocalized) {
  const auto& ctx = nagumo();
  const Profile b = usc_bump(ctx);
  for (int i = 0; i < ctx.grid.N; ++i) {
    const double x = ctx.grid.x(i);
    if (std::abs(x) > 4.0) {
      EXPECT_EQ(b(i, 0), 0.0);
    }
    EXPECT_GE(b(i, 0), 0.0);
    EXPECT_LE(b(i, 0), 1.0);
  }
  EXPECT_EQ(b.at(static_cast<int>(ctx.grid.index_of(0.0)))[0], 1.0);
}

TEST(ChainExistence, Verdicts) {
  auto verdict = [](const std::string& spec) {
    RunContext ctx = prepare([&] {
      Scenario s;
      s.potential = spec;
      return s;
    }());
    return chain_existence(ctx.an, ctx.library);
  };
  const auto ac = verdict("allen-cahn");
  EXPECT_FALSE(ac.takes_negative_values);
  EXPECT_EQ(ac.heteroclinic_chain, "FOUND");
  EXPECT_EQ(ac.homoclinic, "NOT-PROMISED");

  const auto sg = verdict("sine-gordon");
  EXPECT_EQ(sg.heteroclinic_chain, "FOUND");

  const auto ng = verdict("nagumo:a=0.3");
  EXPECT_TRUE(ng.takes_negative_values);
  EXPECT_EQ(ng.homoclinic, "FOUND");
  EXPECT_EQ(ng.heteroclinic_chain, "NOT-PROMISED");

  const auto q = verdict("quadratic");
  EXPECT_FALSE(q.takes_negative_values);
  EXPECT_EQ(q.heteroclinic_chain, "NOT-PROMISED");
  EXPECT_EQ(q.homoclinic, "NOT-PROMISED");
  EXPECT_TRUE(q.ids.empty());
}

TEST(Config, DumpReadRoundTrip) {
  Scenario s = preset("nagumo-threshold");
  apply_override(s, "initial.L=12.5");
  apply_override(s, "stride=7");
  apply_override(s, "m_minus=0");
  const std::string text = dump_config(s);
  Scenario r;
  std::istringstream in(text);
  read_config(r, in);
  EXPECT_EQ(dump_config(r), text);
  EXPECT_EQ(r.L, 12.5);
  EXPECT_EQ(r.stride, 7);
  EXPECT_EQ(r.potential, "nagumo:a=0.3");
}

TEST(Config, Errors) {
  Scenario s;
  EXPECT_EQ(kind_of([&] { apply_override(s, "nope=1"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([&] { apply_override(s, "dt"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([&] { apply_override(s, "dt=fast"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([&] { apply_override(s, "stride=1.5"); }), ErrorKind::Config);
  std::istringstream bad_section("[nowhere]\nx = 1\n");
  EXPECT_EQ(kind_of([&] { read_config(s, bad_section); }), ErrorKind::Config);
  std::istringstream outside("dt = 1\n");
  EXPECT_EQ(kind_of([&] { read_config(s, outside); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { load_config("/nonexistent/gradflow.cfg"); }), ErrorKind::Config);
  Scenario b;
  b.boundary = "periodic";
  EXPECT_EQ(kind_of([&] { prepare(b); }), ErrorKind::Config);
}

TEST(Run, ShortKinkRunSettles) {
  Scenario s = preset("ac-kink");
  s.T_final = 20.0;
  RunContext ctx = prepare(s);
  const auto res = run(ctx, initial_state(ctx));
  EXPECT_NEAR(res.final_state.t, 20.0, 1e-9);
  EXPECT_LT(res.sup_ut, 1e-3);
  EXPECT_LT(res.dist_I, 0.02);
  ASSERT_TRUE(res.E_inf.has_value());
  EXPECT_NEAR(res.E_inf->value, oracle::ac_kink_energy_closed(), 1e-3);
  ASSERT_TRUE(res.tracker.has_value());
  const auto& snap = res.tracker->snapshots().back();
  ASSERT_TRUE(snap.dec.has_value());
  EXPECT_EQ(snap.dec->q, 1);
  EXPECT_EQ(snap.dec->items[0].id, "het_-1_1");
  // the discrete energy never increases between records
  const auto t = res.traj.column("t");
  EXPECT_NEAR(t.back(), 20.0, 1e-9);
  EXPECT_LT(ledger_violation(res.traj, 0.0), 0.0);
}

TEST(Run, FittedSlope) {
  std::vector<double> t{0, 1, 2, 3, 4}, y{1, 3, 5, 7, std::numeric_limits<double>::infinity()};
  EXPECT_NEAR(fitted_slope(t, y, 0, 4), 2.0, 1e-14);
  EXPECT_NEAR(fitted_slope(t, y, 1, 2), 2.0, 1e-14);
}
