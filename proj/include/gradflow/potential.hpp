#pragma once

// Potentials V : R^n -> R and the diffusion matrix D of u_t = -grad V(u) + D u_xx.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gradflow/errors.hpp"

namespace gradflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Axis-aligned region of R^n.
struct Box {
  Vec lo;
  Vec hi;

  int dim() const { return static_cast<int>(lo.size()); }
  /// Largest Euclidean norm of a corner.
  double radius() const { return lo.cwiseAbs().cwiseMax(hi.cwiseAbs()).norm(); }
  bool contains(const Vec& u, double slack = 0.0) const {
    return ((u.array() >= lo.array() - slack) && (u.array() <= hi.array() + slack)).all();
  }
  static Box interval(double a, double b) {
    Box box{Vec(1), Vec(1)};
    box.lo[0] = a;
    box.hi[0] = b;
    return box;
  }
  static Box centered(int n, double r) { return Box{Vec::Constant(n, -r), Vec::Constant(n, r)}; }
};

/// Scalar potential with gradient and Hessian.
///
/// Point-level calls take spans so the semiflow can evaluate whole fields
/// without allocating; the Eigen overloads are for the non-hot paths.
class Potential {
 public:
  virtual ~Potential() = default;

  virtual int dim() const = 0;
  virtual std::string name() const = 0;

  virtual double value(std::span<const double> u) const = 0;
  virtual void gradient(std::span<const double> u, std::span<double> g) const = 0;
  /// Row-major n x n.
  virtual void hessian(std::span<const double> u, std::span<double> h) const = 0;

  /// Gradient at every point of an interleaved (npts x n) field.
  virtual void gradient_field(std::span<const double> u, std::span<double> g) const {
    const auto n = static_cast<std::size_t>(dim());
    for (std::size_t i = 0; i + n <= u.size(); i += n) gradient(u.subspan(i, n), g.subspan(i, n));
  }

  /// Region where minima are searched by default.
  virtual Box default_box() const = 0;

  /// Translation symmetry in u-space (sine-Gordon: 2 pi), if any.
  virtual std::optional<Vec> period() const { return std::nullopt; }

  /// Known not to satisfy the coercivity hypothesis; the caller must
  /// provide a bound on the solution (maximum principle) instead.
  virtual bool known_noncoercive() const { return false; }

  /// Set for potentials whose zero-level minima are not isolated.
  virtual bool disc_hypothesis_doubtful() const { return false; }

  double value(const Vec& u) const { return value(std::span<const double>(u.data(), u.size())); }
  Vec gradient(const Vec& u) const {
    Vec g(dim());
    gradient(std::span<const double>(u.data(), u.size()), std::span<double>(g.data(), g.size()));
    return g;
  }
  Mat hessian(const Vec& u) const {
    Mat h(dim(), dim());
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> hr(dim(), dim());
    hessian(std::span<const double>(u.data(), u.size()), std::span<double>(hr.data(), hr.size()));
    h = hr;
    return h;
  }
};

using PotentialPtr = std::shared_ptr<const Potential>;

/// Symmetric positive-definite diffusion matrix with its spectral data.
class Diffusion {
 public:
  Diffusion() : Diffusion(Mat::Identity(1, 1)) {}

  explicit Diffusion(const Mat& d) : d_(d) {
    if (d.rows() != d.cols() || d.rows() == 0) throw Error(ErrorKind::Config, "diffusion matrix must be square");
    if (!d.isApprox(d.transpose(), 1e-14)) throw Error(ErrorKind::Config, "diffusion matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(d);
    eig_ = es.eigenvalues();
    basis_ = es.eigenvectors();
    if (eig_.minCoeff() <= 0.0) throw Error(ErrorKind::Config, "diffusion matrix must be positive definite");
    inv_ = basis_ * eig_.cwiseInverse().asDiagonal() * basis_.transpose();
    inv_sqrt_ = basis_ * eig_.cwiseSqrt().cwiseInverse().asDiagonal() * basis_.transpose();
  }

  static Diffusion scalar(double d) { return Diffusion(Mat::Constant(1, 1, d)); }
  static Diffusion identity(int n) { return Diffusion(Mat::Identity(n, n)); }

  int dim() const { return static_cast<int>(d_.rows()); }
  const Mat& matrix() const { return d_; }
  const Mat& inverse() const { return inv_; }
  /// D^{-1/2}; maps the unit sphere of |.|_D onto the Euclidean unit sphere.
  const Mat& inverse_sqrt() const { return inv_sqrt_; }
  const Vec& eigenvalues() const { return eig_; }
  /// Columns are the orthonormal eigenvectors.
  const Mat& eigenvectors() const { return basis_; }
  double lambda_min() const { return eig_.minCoeff(); }
  double lambda_max() const { return eig_.maxCoeff(); }
  bool is_diagonal() const { return (d_ - Mat(d_.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0; }

  /// <a, b>_D = a . D b
  double inner(const Vec& a, const Vec& b) const { return a.dot(d_ * b); }
  double norm(const Vec& a) const { return std::sqrt(inner(a, a)); }

 private:
  Mat d_;
  Vec eig_;
  Mat basis_;
  Mat inv_;
  Mat inv_sqrt_;
};

// ---------------------------------------------------------------------------
// Built-in scalar potentials.

namespace detail {

class ScalarPotential : public Potential {
 public:
  int dim() const final { return 1; }
  double value(std::span<const double> u) const final { return v(u[0]); }
  void gradient(std::span<const double> u, std::span<double> g) const final { g[0] = dv(u[0]); }
  void hessian(std::span<const double> u, std::span<double> h) const final { h[0] = d2v(u[0]); }

  virtual double v(double u) const = 0;
  virtual double dv(double u) const = 0;
  virtual double d2v(double u) const = 0;
};

/// Batched gradient with the derivative call resolved statically.
template <class Derived>
class ScalarPotentialImpl : public ScalarPotential {
 public:
  void gradient_field(std::span<const double> u, std::span<double> g) const final {
    const auto& self = static_cast<const Derived&>(*this);
    for (std::size_t i = 0; i < u.size(); ++i) g[i] = self.Derived::dv(u[i]);
  }
};

}  // namespace detail

/// V(u) = -u^2/2 + u^4/4 + 1/4, minima at -1 and +1.
class AllenCahn final : public detail::ScalarPotentialImpl<AllenCahn> {
 public:
  std::string name() const override { return "allen-cahn"; }
  double v(double u) const override { return -0.5 * u * u + 0.25 * u * u * u * u + 0.25; }
  double dv(double u) const override { return u * u * u - u; }
  double d2v(double u) const override { return 3.0 * u * u - 1.0; }
  Box default_box() const override { return Box::interval(-2.0, 2.0); }
};

/// V(u) = 1 - cos u. Not coercive; solutions stay bounded by comparison.
class SineGordon final : public detail::ScalarPotentialImpl<SineGordon> {
 public:
  std::string name() const override { return "sine-gordon"; }
  double v(double u) const override { return 1.0 - std::cos(u); }
  double dv(double u) const override { return std::sin(u); }
  double d2v(double u) const override { return std::cos(u); }
  Box default_box() const override { return Box::interval(-0.5, 4.0 * std::numbers::pi + 0.5); }
  std::optional<Vec> period() const override { return Vec::Constant(1, 2.0 * std::numbers::pi); }
  bool known_noncoercive() const override { return true; }
};

/// V(u) = a u^2/2 - (a+1) u^3/3 + u^4/4 with 0 < a < 1/2.
class Nagumo final : public detail::ScalarPotentialImpl<Nagumo> {
 public:
  explicit Nagumo(double a) : a_(a) {
    if (!(a > 0.0 && a < 0.5)) throw Error(ErrorKind::Config, "nagumo requires 0 < a < 1/2");
  }
  std::string name() const override { return "nagumo:a=" + fmt_param(a_); }
  double v(double u) const override {
    return a_ * u * u / 2.0 - (a_ + 1.0) * u * u * u / 3.0 + u * u * u * u / 4.0;
  }
  double dv(double u) const override { return u * (u - a_) * (u - 1.0); }
  double d2v(double u) const override { return a_ - 2.0 * (a_ + 1.0) * u + 3.0 * u * u; }
  Box default_box() const override { return Box::interval(-0.5, 1.5); }
  double a() const { return a_; }

  static std::string fmt_param(double x) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << x;
    return os.str();
  }

 private:
  double a_;
};

/// Over-damped sine-Gordon with constant forcing: V'(u) = sin u - omega,
/// shifted so that V vanishes at the minimum asin(omega).
class ForcedSineGordon final : public detail::ScalarPotentialImpl<ForcedSineGordon> {
 public:
  explicit ForcedSineGordon(double omega) : omega_(omega), u0_(std::asin(omega)) {
    if (!(omega > 0.0 && omega < 1.0)) throw Error(ErrorKind::Config, "forced-sg requires 0 < omega < 1");
  }
  std::string name() const override { return "forced-sg:omega=" + Nagumo::fmt_param(omega_); }
  double v(double u) const override { return std::cos(u0_) - std::cos(u) - omega_ * (u - u0_); }
  double dv(double u) const override { return std::sin(u) - omega_; }
  double d2v(double u) const override { return std::cos(u); }
  Box default_box() const override { return Box::interval(-std::numbers::pi, 3.0 * std::numbers::pi); }
  bool known_noncoercive() const override { return true; }
  double rest_state() const { return u0_; }

 private:
  double omega_;
  double u0_;
};

/// V(u) = u^2/2 - u^4/4 + eps u^6/6.
class SubcriticalAllenCahn final : public detail::ScalarPotentialImpl<SubcriticalAllenCahn> {
 public:
  explicit SubcriticalAllenCahn(double eps) : eps_(eps) {
    if (!(eps > 0.0)) throw Error(ErrorKind::Config, "subcritical-ac requires eps > 0");
  }
  std::string name() const override { return "subcritical-ac:eps=" + Nagumo::fmt_param(eps_); }
  double v(double u) const override {
    const double w = u * u;
    return w / 2.0 - w * w / 4.0 + eps_ * w * w * w / 6.0;
  }
  double dv(double u) const override {
    const double w = u * u;
    return u * (1.0 - w + eps_ * w * w);
  }
  double d2v(double u) const override {
    const double w = u * u;
    return 1.0 - 3.0 * w + 5.0 * eps_ * w * w;
  }
  Box default_box() const override {
    // outer critical points sit at u^2 = (1 + sqrt(1 - 4 eps)) / (2 eps) when eps < 1/4
    double r = 2.0;
    if (eps_ < 0.25) r = std::sqrt((1.0 + std::sqrt(1.0 - 4.0 * eps_)) / (2.0 * eps_));
    return Box::interval(-1.3 * r, 1.3 * r);
  }

 private:
  double eps_;
};

/// V(u) = u^2/2.
class Quadratic final : public detail::ScalarPotentialImpl<Quadratic> {
 public:
  std::string name() const override { return "quadratic"; }
  double v(double u) const override { return 0.5 * u * u; }
  double dv(double u) const override { return u; }
  double d2v(double) const override { return 1.0; }
  Box default_box() const override { return Box::interval(-2.0, 2.0); }
};

/// Tilted Ginzburg-Landau potential on R^2:
/// V(u) = -|u|^2/2 + |u|^4/4 - eps u_1 + c, with c chosen so that min V = 0.
/// For eps = 0 the minima form a circle (degenerate).
class GinzburgLandau2 final : public Potential {
 public:
  explicit GinzburgLandau2(double eps) : eps_(eps) {
    if (eps < 0.0) throw Error(ErrorKind::Config, "gl2 requires eps >= 0");
    // largest root of r^3 - r - eps = 0
    double r = 1.0 + eps;
    for (int i = 0; i < 100; ++i) r -= (r * r * r - r - eps) / (3.0 * r * r - 1.0);
    r0_ = r;
    shift_ = r * r / 2.0 - r * r * r * r / 4.0 + eps * r;
  }
  int dim() const override { return 2; }
  std::string name() const override { return "gl2:eps=" + Nagumo::fmt_param(eps_); }
  double value(std::span<const double> u) const override {
    const double w = u[0] * u[0] + u[1] * u[1];
    return -w / 2.0 + w * w / 4.0 - eps_ * u[0] + shift_;
  }
  void gradient(std::span<const double> u, std::span<double> g) const override {
    const double w = u[0] * u[0] + u[1] * u[1];
    g[0] = (w - 1.0) * u[0] - eps_;
    g[1] = (w - 1.0) * u[1];
  }
  void hessian(std::span<const double> u, std::span<double> h) const override {
    const double w = u[0] * u[0] + u[1] * u[1];
    h[0] = w - 1.0 + 2.0 * u[0] * u[0];
    h[1] = 2.0 * u[0] * u[1];
    h[2] = h[1];
    h[3] = w - 1.0 + 2.0 * u[1] * u[1];
  }
  Box default_box() const override { return Box::centered(2, 2.0); }
  bool disc_hypothesis_doubtful() const override { return true; }
  Vec minimum() const { return Vec{{r0_, 0.0}}; }

 private:
  double eps_;
  double r0_ = 1.0;
  double shift_ = 0.25;
};

/// Multivariate polynomial, one monomial per table line: "e_1 ... e_n coeff".
class PolynomialPotential final : public Potential {
 public:
  struct Term {
    std::vector<int> exponents;
    double coeff = 0.0;
  };

  PolynomialPotential(std::vector<Term> terms, std::string label, std::optional<Box> box = std::nullopt)
      : terms_(std::move(terms)), label_(std::move(label)) {
    if (terms_.empty()) throw Error(ErrorKind::Config, "polynomial table has no terms");
    n_ = static_cast<int>(terms_.front().exponents.size());
    for (const auto& t : terms_) {
      if (static_cast<int>(t.exponents.size()) != n_)
        throw Error(ErrorKind::Config, "polynomial table rows have inconsistent dimension");
      for (int e : t.exponents)
        if (e < 0) throw Error(ErrorKind::Config, "negative exponent in polynomial table");
    }
    box_ = box.value_or(Box::centered(n_, 2.0));
  }

  /// Parses the table format; '#' starts a comment, blank lines are skipped.
  static std::shared_ptr<PolynomialPotential> parse(std::istream& in, std::string label) {
    std::vector<Term> terms;
    std::string line;
    while (std::getline(in, line)) {
      if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
      std::istringstream ls(line);
      ls.imbue(std::locale::classic());
      std::vector<double> fields;
      double x;
      while (ls >> x) fields.push_back(x);
      if (!ls.eof()) throw Error(ErrorKind::Config, "malformed polynomial table line: " + line);
      if (fields.empty()) continue;
      if (fields.size() < 2) throw Error(ErrorKind::Config, "polynomial line needs exponents and coefficient");
      Term t;
      for (std::size_t i = 0; i + 1 < fields.size(); ++i) {
        if (fields[i] != std::floor(fields[i])) throw Error(ErrorKind::Config, "non-integer exponent");
        t.exponents.push_back(static_cast<int>(fields[i]));
      }
      t.coeff = fields.back();
      terms.push_back(std::move(t));
    }
    return std::make_shared<PolynomialPotential>(std::move(terms), std::move(label));
  }

  int dim() const override { return n_; }
  std::string name() const override { return label_; }
  Box default_box() const override { return box_; }

  double value(std::span<const double> u) const override {
    double s = 0.0;
    for (const auto& t : terms_) {
      double p = t.coeff;
      for (int i = 0; i < n_; ++i) p *= ipow(u[i], t.exponents[i]);
      s += p;
    }
    return s;
  }
  void gradient(std::span<const double> u, std::span<double> g) const override {
    for (int k = 0; k < n_; ++k) g[k] = 0.0;
    for (const auto& t : terms_) {
      for (int k = 0; k < n_; ++k) {
        if (t.exponents[k] == 0) continue;
        double p = t.coeff * t.exponents[k];
        for (int i = 0; i < n_; ++i) p *= ipow(u[i], t.exponents[i] - (i == k ? 1 : 0));
        g[k] += p;
      }
    }
  }
  void hessian(std::span<const double> u, std::span<double> h) const override {
    for (int k = 0; k < n_ * n_; ++k) h[k] = 0.0;
    for (const auto& t : terms_) {
      for (int a = 0; a < n_; ++a) {
        for (int b = 0; b < n_; ++b) {
          std::vector<int> e = t.exponents;
          double p = t.coeff;
          p *= e[a];
          e[a] -= 1;
          if (p == 0.0) continue;
          p *= e[b];
          e[b] -= 1;
          if (p == 0.0) continue;
          for (int i = 0; i < n_; ++i) p *= ipow(u[i], e[i]);
          h[a * n_ + b] += p;
        }
      }
    }
  }

 private:
  static double ipow(double x, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= x;
    return r;
  }

  std::vector<Term> terms_;
  std::string label_;
  int n_ = 1;
  Box box_;
};

/// Parses "name" or "name:key=value,key=value".
inline std::pair<std::string, std::map<std::string, double>> parse_named_spec(const std::string& spec) {
  std::map<std::string, double> params;
  const auto colon = spec.find(':');
  std::string name = spec.substr(0, colon);
  if (colon != std::string::npos) {
    std::string rest = spec.substr(colon + 1);
    std::istringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw Error(ErrorKind::Config, "bad parameter '" + item + "' in " + spec);
      std::istringstream vs(item.substr(eq + 1));
      vs.imbue(std::locale::classic());
      double v;
      if (!(vs >> v)) throw Error(ErrorKind::Config, "bad number in " + spec);
      params[item.substr(0, eq)] = v;
    }
  }
  return {name, params};
}

/// Built-in potential by name: allen-cahn, sine-gordon, nagumo:a=, forced-sg:omega=,
/// subcritical-ac:eps=, gl2:eps=, quadratic, poly:<path>.
inline PotentialPtr make_potential(const std::string& spec) {
  if (spec.rfind("poly:", 0) == 0) {
    const std::string path = spec.substr(5);
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Config, "cannot open polynomial table " + path);
    return PolynomialPotential::parse(in, spec);
  }
  auto [name, params] = parse_named_spec(spec);
  auto get = [&](const char* key, double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  };
  if (name == "allen-cahn") return std::make_shared<AllenCahn>();
  if (name == "sine-gordon") return std::make_shared<SineGordon>();
  if (name == "nagumo") return std::make_shared<Nagumo>(get("a", 0.3));
  if (name == "forced-sg") return std::make_shared<ForcedSineGordon>(get("omega", 0.3));
  if (name == "subcritical-ac") return std::make_shared<SubcriticalAllenCahn>(get("eps", 0.1));
  if (name == "gl2") return std::make_shared<GinzburgLandau2>(get("eps", 0.1));
  if (name == "quadratic") return std::make_shared<Quadratic>();
  throw Error(ErrorKind::UnknownPreset, "unknown potential '" + spec + "'");
}

}  // namespace gradflow
