#include <gtest/gtest.h>

#include "gradflow/diagnostics.hpp"
#include "gradflow/stationary.hpp"
#include "oracles.hpp"

using namespace gradflow;

namespace {

const double inf = std::numeric_limits<double>::infinity();

State sampled(const Grid& g, const std::function<double(double)>& f, double left, double right) {
  State st;
  st.u = Profile(g, 1);
  for (int i = 0; i < g.N; ++i) st.u(i, 0) = f(g.x(i));
  st.u(0, 0) = left;
  st.u(g.N - 1, 0) = right;
  st.rhs = Profile(g, 1);
  return st;
}

void refresh_rhs(State& st, PotentialPtr v) {
  Stepper::Options o;
  o.dt = 1e-3;
  Stepper(std::move(v), Diffusion(), st.u.grid, o).compute_rhs(st);
}

struct AcSetup {
  PotentialPtr v = std::make_shared<AllenCahn>();
  Diffusion d;
  MinimaSet M = find_minima(*v, v->default_box());
  double d_Esc = escape_distance(*v, d, M);
};

}  // namespace

TEST(LocalizedEnergy, ConstantIsZero) {
  AcSetup s;
  const Grid g = Grid::span(-10, 10, 0.05);
  State st = sampled(g, [](double) { return 1.0; }, 1.0, 1.0);
  st.t = 3.0;
  EXPECT_EQ(localized_energy(st, *s.v, s.d, {1.0, 1.0}), 0.0);
  EXPECT_EQ(window_energy(st, *s.v, s.d, inf), 0.0);
}

TEST(LocalizedEnergy, KinkEnergies) {
  AcSetup s;
  const Grid g = Grid::span(-20, 20, 0.05);
  State st = sampled(g, oracle::ac_kink, -1.0, 1.0);
  st.t = 100.0;
  EXPECT_NEAR(localized_energy(st, *s.v, s.d, {1.0, 1.0}), oracle::ac_kink_energy(), 1e-3);
  EXPECT_NEAR(oracle::ac_kink_energy(), oracle::ac_kink_energy_closed(), 1e-12);

  SineGordon sg;
  const Grid g2 = Grid::span(-30, 30, 0.05);
  State s2 = sampled(g2, oracle::sg_kink, 0.0, 2.0 * std::numbers::pi);
  EXPECT_NEAR(window_energy(s2, sg, s.d, inf), oracle::sg_kink_energy(), 1e-3);
}

TEST(LocalizedEnergy, WeightIsWindowWithTails) {
  EXPECT_EQ(window_weight(3.0, 1.0, 4.0, 1.0), 1.0);
  EXPECT_NEAR(window_weight(6.0, 1.0, 4.0, 0.5), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(window_weight(-6.0, 1.0, 4.0, 0.5), std::exp(-1.0), 1e-15);
}

TEST(Dissipation, EquilibriumKinkAndPair) {
  AcSetup s;
  const Grid g = Grid::span(-20, 20, 0.05);
  State eq = sampled(g, [](double) { return -1.0; }, -1.0, -1.0);
  refresh_rhs(eq, s.v);
  EXPECT_EQ(dissipation(eq, {1.0, 1.0}), 0.0);

  State kink = sampled(g, oracle::ac_kink, -1.0, 1.0);
  refresh_rhs(kink, s.v);
  EXPECT_LT(dissipation(kink, {1e3, 1.0}), 1e-6);

  State pair = sampled(g, [](double x) { return -oracle::ac_kink(x + 4) * oracle::ac_kink(x - 4); }, -1.0, -1.0);
  refresh_rhs(pair, s.v);
  EXPECT_GT(dissipation(pair, {1e3, 1.0}), 0.0);
}

TEST(Firewall, ConstantAtMinimumVanishes) {
  AcSetup s;
  const Grid g = Grid::span(-10, 10, 0.05);
  State st = sampled(g, [](double) { return -1.0; }, -1.0, -1.0);
  const Vec m = Vec::Constant(1, -1.0);
  EXPECT_EQ(log_firewall(st, 0.0, m, *s.v, s.d, {1.0, 1.0}), -inf);
  EXPECT_EQ(firewall(st, 0.0, m, *s.v, s.d, {1.0, 1.0}), 0.0);
}

TEST(Firewall, CoercivityAndFarEvaluation) {
  AcSetup s;
  const Grid g = Grid::span(-20, 20, 0.05);
  State st = sampled(g, oracle::ac_kink, -1.0, 1.0);
  const Vec m = Vec::Constant(1, -1.0);
  const FirewallParams p{1.0, 1.0};
  for (double xi : {-15.0, -10.0, -5.0, 0.0, 5.0}) {
    const double F = firewall(st, xi, m, *s.v, s.d, p);
    EXPECT_GE(F, firewall_coercive_bound(st, xi, m, s.d, p) - 1e-14) << xi;
  }
  // far outside the grid the value is tiny but its logarithm stays finite
  const double lf = log_firewall(st, -1e5, m, *s.v, s.d, p);
  EXPECT_TRUE(std::isfinite(lf));
  EXPECT_NEAR(lf - log_firewall(st, -1e5 - 10.0, m, *s.v, s.d, p), 10.0, 1e-9);
  const auto an = analyze(s.v, s.d);
  EXPECT_LE(firewall(st, -10.0, m, *s.v, s.d, p), an.constants.d_esc * an.constants.d_esc / 4.0);
}

TEST(Hamiltonian, EquilibriumKinkOffset) {
  AcSetup s;
  const Grid g = Grid::span(-20, 20, 0.05);
  State eq = sampled(g, [](double) { return 1.0; }, 1.0, 1.0);
  EXPECT_EQ(hamiltonian_field(eq, *s.v, s.d).sup, 0.0);

  State kink = sampled(g, oracle::ac_kink, -1.0, 1.0);
  EXPECT_LT(hamiltonian_field(kink, *s.v, s.d, 15.0).sup, 1e-5);

  State off = sampled(g, [](double) { return -0.9; }, -0.9, -0.9);
  const auto h = hamiltonian_field(off, *s.v, s.d);
  for (double x : h.h) EXPECT_NEAR(x, -oracle::ac_v(-0.9), 1e-15);
  EXPECT_LT(h.h.front(), 0.0);
}

TEST(EscapePoints, ConstantHasNone) {
  AcSetup s;
  const Grid g = Grid::span(-10, 10, 0.05);
  const State st = sampled(g, [](double) { return -1.0; }, -1.0, -1.0);
  const auto scan = escape_points(st.u, s.M, s.d, s.d_Esc);
  EXPECT_TRUE(scan.points.empty());
  EXPECT_FALSE(scan.ambiguous);
}

TEST(EscapePoints, KinkCrossingsMatchClosedForm) {
  AcSetup s;
  const Grid g = Grid::span(-20, 20, 0.05);
  const State st = sampled(g, oracle::ac_kink, -1.0, 1.0);
  const auto scan = escape_points(st.u, s.M, s.d, s.d_Esc);
  ASSERT_EQ(scan.points.size(), 2u);
  EXPECT_NEAR(scan.points[0].x, oracle::ac_escape_abscissa(s.d_Esc), 1e-3);
  EXPECT_NEAR(scan.points[1].x, -oracle::ac_escape_abscissa(s.d_Esc), 1e-3);
  EXPECT_EQ(scan.points[0].side, -1);
  EXPECT_EQ(scan.points[1].side, +1);
  ASSERT_EQ(scan.chain.size(), 2u);
  for (const auto& e : scan.points) {
    const Vec u = Vec::Constant(1, std::tanh(e.x / std::numbers::sqrt2));
    EXPECT_NEAR(std::min((u - s.M.points[0]).norm(), (u - s.M.points[1]).norm()), s.d_Esc, 1e-3);
  }
}

TEST(EscapePoints, SineGordonStaircase) {
  SineGordon v;
  const Diffusion d;
  const auto M = find_minima(v, v.default_box());
  const double d_Esc = escape_distance(v, d, M);
  const Grid g = Grid::span(-40, 40, 0.05);
  const State st =
      sampled(g, [](double x) { return oracle::sg_kink(x + 15) + oracle::sg_kink(x - 15); }, 0.0, 4 * std::numbers::pi);
  const auto scan = escape_points(st.u, M, d, d_Esc);
  ASSERT_EQ(scan.points.size(), 4u);
  for (std::size_t k = 1; k < 4; ++k) EXPECT_LT(scan.points[k - 1].x, scan.points[k].x);
  EXPECT_LT(scan.points[1].x, 0.0);
  EXPECT_GT(scan.points[2].x, 0.0);
  ASSERT_EQ(scan.chain.size(), 3u);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(M.points[scan.chain[k]][0], 2 * std::numbers::pi * k, 1e-9);
}

TEST(EscapeVelocity, StationaryAndRigidTranslate) {
  AcSetup s;
  const Grid g = Grid::span(-20, 20, 0.05);
  State kink = sampled(g, oracle::ac_kink, -1.0, 1.0);
  refresh_rhs(kink, s.v);
  const auto v0 = escape_velocity({0.0, 1.0}, {-1.6, -1.6}, kink, s.M, s.d, s.d_Esc);
  EXPECT_EQ(v0.slope, 0.0);
  EXPECT_LT(std::abs(v0.formula), 1e-4);

  // u(x, t) = kink(x - c t): u_t = -c u_x
  const double c = 0.1;
  State moving = kink;
  for (int i = 0; i < g.N; ++i) {
    const double sech = 1.0 / std::cosh(g.x(i) / std::numbers::sqrt2);
    moving.rhs(i, 0) = -c * sech * sech / std::numbers::sqrt2;
  }
  const auto v1 = escape_velocity({}, {}, moving, s.M, s.d, s.d_Esc);
  EXPECT_NEAR(v1.formula, c, 1e-3);
}

TEST(EscapeVelocity, TransversalityLoss) {
  AcSetup s;
  const Grid g = Grid::span(-10, 10, 0.05);
  State st = sampled(g, [&](double x) { return -1.0 + s.d_Esc * (1.0 + 1e-5 * x); }, -1.0, -1.0 + s.d_Esc * 1.0001);
  try {
    escape_velocity({}, {}, st, s.M, s.d, s.d_Esc);
    FAIL() << "expected TransversalityLoss";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TransversalityLoss);
  }
}

TEST(StationarySetDistance, EquilibriumKinkCollision) {
  AcSetup s;
  const auto lib = find_connections(*s.v, s.d, s.M, s.d_Esc, s.v->default_box(), 2.0);
  const auto index = build_phase_index(lib, s.M);
  const Grid g = Grid::span(-20, 20, 0.05);
  const State eq = sampled(g, [](double) { return -1.0; }, -1.0, -1.0);
  EXPECT_LT(distance_to_stationary_set(eq, index), 1e-15);
  const State kink = sampled(g, [](double x) { return oracle::ac_kink(x - 1.234); }, -1.0, 1.0);
  EXPECT_LT(distance_to_stationary_set(kink, index, 18.0), 1e-4);
  const State pair = sampled(g, [](double x) { return -oracle::ac_kink(x + 2) * oracle::ac_kink(x - 2); }, -1.0, -1.0);
  EXPECT_GT(distance_to_stationary_set(pair, index), 1e-2);
}

TEST(BallFunctionals, ZeroFieldAndOrdering) {
  Quadratic q;
  const Diffusion d;
  const Grid g = Grid::span(-20, 20, 0.05);
  const State zero = sampled(g, [](double) { return 0.0; }, 0.0, 0.0);
  const auto z = appendix_ball_functionals(zero, 0.0, 0.5, q, d, 0.0);
  EXPECT_EQ(z.F0, 0.0);
  EXPECT_EQ(z.Q, 0.0);

  Nagumo v(0.3);
  const double vmin = potential_floor(v, Box::interval(-2, 2));
  EXPECT_NEAR(vmin, oracle::nagumo_v(1.0, 0.3), 1e-9);
  const State plateau = sampled(g, [](double x) { return smooth_cutoff(std::abs(x - 12.0) - 4.0); }, 0.0, 0.0);
  const auto a = appendix_ball_functionals(plateau, 0.0, 0.5, v, d, vmin);
  const auto b = appendix_ball_functionals(plateau, 10.0, 0.5, v, d, vmin);
  EXPECT_GE(a.F0, a.Q);
  EXPECT_GE(b.F0, b.Q);
  EXPECT_GT(b.F0, a.F0);
}

TEST(FluxBound, NonNegative) {
  AcSetup s;
  const auto an = analyze(s.v, s.d);
  const Grid g = Grid::span(-20, 20, 0.05);
  State st = sampled(g, oracle::ac_kink, -1.0, 1.0);
  st.t = 1e-3;
  const double f = energy_flux_bound(st, s.M.points[0], s.M.points[1], *s.v, s.d, an.constants, 1.0);
  EXPECT_GE(f, 0.0);
  EXPECT_TRUE(std::isfinite(f));
}
