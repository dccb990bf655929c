#include "odfatlas/sh_basis.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>

namespace odfatlas::sh {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

SphericalCoord to_spherical(const Vec3& dir) {
  const double rxy = std::hypot(dir.x(), dir.y());
  SphericalCoord c;
  c.theta = std::atan2(rxy, dir.z());
  if (rxy < 1e-14) {
    c.phi = 0.0;  // pole convention
  } else {
    c.phi = std::atan2(dir.y(), dir.x());
    if (c.phi < 0.0) c.phi += 2.0 * kPi;
  }
  return c;
}

Vec3 to_direction(const SphericalCoord& c) {
  const double st = std::sin(c.theta);
  return Vec3(st * std::cos(c.phi), st * std::sin(c.phi), std::cos(c.theta));
}

int coef_count(int l_max) {
  if (l_max < 0 || l_max % 2 != 0)
    throw ValidationError("coef_count: l_max must be even and non-negative");
  return (l_max + 1) * (l_max + 2) / 2;
}

std::vector<ShIndex> index_map(int l_max) {
  if (l_max < 0 || l_max % 2 != 0 || l_max > 16)
    throw ValidationError("index_map: l_max must be even, in [0, 16]");
  std::vector<ShIndex> out;
  out.reserve(coef_count(l_max));
  for (int l = 0; l <= l_max; l += 2)
    for (int m = -l; m <= l; ++m) out.push_back({l, m, (l * l + l + 2) / 2 + m});
  return out;
}

double assoc_legendre(int l, int m, double x) {
  if (m < 0 || m > l) throw ValidationError("assoc_legendre: require 0 <= m <= l");
  if (std::abs(x) > 1.0) throw ValidationError("assoc_legendre: require |x| <= 1");

  // P_m^m = (-1)^m (2m-1)!! (1-x^2)^(m/2), built incrementally.
  double pmm = 1.0;
  if (m > 0) {
    const double somx2 = std::sqrt((1.0 - x) * (1.0 + x));
    double fact = 1.0;
    for (int i = 0; i < m; ++i) {
      pmm *= -fact * somx2;
      fact += 2.0;
    }
  }
  if (l == m) return pmm;

  double pmmp1 = x * (2.0 * m + 1.0) * pmm;  // P_{m+1}^m
  if (l == m + 1) return pmmp1;

  double pll = 0.0;
  for (int ll = m + 2; ll <= l; ++ll) {
    pll = (x * (2.0 * ll - 1.0) * pmmp1 - (ll + m - 1.0) * pmm) / (ll - m);
    pmm = pmmp1;
    pmmp1 = pll;
  }
  return pll;
}

double legendre_at_zero(int l) {
  if (l < 0 || l % 2 != 0) throw ValidationError("legendre_at_zero: l must be even");
  double v = 1.0;
  for (int k = 2; k <= l; k += 2) v *= -(k - 1.0) / k;
  return v;
}

namespace {

// sqrt((2l+1)/(4pi) * (l-m)!/(l+m)!) without forming either factorial.
double sh_normalization(int l, int m) {
  double ratio = 1.0;
  for (int k = l - m + 1; k <= l + m; ++k) ratio /= k;
  return std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * ratio);
}

}  // namespace

Eigen::VectorXd eval_basis_row(const SphericalCoord& c, int l_max) {
  const auto idx = index_map(l_max);
  Eigen::VectorXd row(static_cast<Eigen::Index>(idx.size()));
  const double x = std::cos(c.theta);
  for (const auto& e : idx) {
    const int am = std::abs(e.m);
    const double nrm = sh_normalization(e.l, am);
    const double p = assoc_legendre(e.l, am, x);
    double v;
    if (e.m == 0) {
      v = nrm * p;
    } else if (e.m < 0) {
      v = std::sqrt(2.0) * nrm * p * std::cos(am * c.phi);
    } else {
      const double sign = (e.m % 2 == 0) ? -1.0 : 1.0;  // (-1)^(m+1)
      v = std::sqrt(2.0) * sign * nrm * p * std::sin(e.m * c.phi);
    }
    row(e.j - 1) = v;
  }
  return row;
}

Eigen::VectorXd eval_basis_row(const Vec3& dir, int l_max) {
  return eval_basis_row(to_spherical(dir), l_max);
}

BasisMatrix build_basis(const std::vector<Vec3>& dirs, int l_max) {
  BasisMatrix b;
  b.l_max = l_max;
  b.dirs = dirs;
  const int nc = coef_count(l_max);
  b.entries.resize(static_cast<Eigen::Index>(dirs.size()), nc);
  for (std::size_t i = 0; i < dirs.size(); ++i)
    b.entries.row(static_cast<Eigen::Index>(i)) = eval_basis_row(dirs[i], l_max).transpose();

  b.lb_diag.resize(nc);
  for (const auto& e : index_map(l_max)) {
    const double ll1 = static_cast<double>(e.l) * (e.l + 1);
    b.lb_diag(e.j - 1) = ll1 * ll1;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(b.entries);
  const double smin = svd.singularValues().tail(1)(0);
  b.condition = smin > 0.0 ? svd.singularValues()(0) / smin
                           : std::numeric_limits<double>::infinity();
  b.rank_warning = static_cast<int>(dirs.size()) < nc;
  return b;
}

double eval_sh(const Eigen::VectorXd& coeffs, const Vec3& dir, int l_max) {
  if (coeffs.size() != coef_count(l_max))
    throw ValidationError("eval_sh: coefficient count does not match l_max");
  return eval_basis_row(dir, l_max).dot(coeffs);
}

Eigen::VectorXd eval_sh(const Eigen::VectorXd& coeffs, const std::vector<Vec3>& dirs, int l_max) {
  if (coeffs.size() != coef_count(l_max))
    throw ValidationError("eval_sh: coefficient count does not match l_max");
  Eigen::VectorXd out(static_cast<Eigen::Index>(dirs.size()));
  for (std::size_t i = 0; i < dirs.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = eval_basis_row(dirs[i], l_max).dot(coeffs);
  return out;
}

}  // namespace odfatlas::sh
