#pragma once

#include "odfatlas/common.hpp"

#include <vector>

namespace odfatlas::sh {

// Polar angle theta in [0, pi], azimuth phi in [0, 2*pi).
struct SphericalCoord {
  double theta;
  double phi;
};

// Directions at the poles map to phi = 0 canonically.
SphericalCoord to_spherical(const Vec3& dir);
Vec3 to_direction(const SphericalCoord& c);

// One basis function of the real symmetric basis. j is the 1-based linear
// index, j = (l^2 + l + 2)/2 + m, covering even orders only.
struct ShIndex {
  int l;
  int m;
  int j;
};

// Number of coefficients for even orders up to l_max: (l_max+1)(l_max+2)/2.
int coef_count(int l_max);

// All (l, m, j) for even l <= l_max, sorted by j (contiguous from 1).
std::vector<ShIndex> index_map(int l_max);

// Associated Legendre polynomial P_l^m(x) with the Condon-Shortley phase,
// computed by upward recurrence (first in m, then in l).
double assoc_legendre(int l, int m, double x);

// Legendre polynomial at zero, P_l(0) = (-1)^(l/2) (l-1)!!/l!! for even l.
double legendre_at_zero(int l);

// Row of the real, symmetric, orthonormal basis evaluated at one direction:
//   m < 0 : sqrt(2) * Re(Y_l^|m|)
//   m = 0 : Y_l^0
//   m > 0 : sqrt(2) * (-1)^(m+1) * Im(Y_l^m)
// Output has coef_count(l_max) entries ordered by j.
Eigen::VectorXd eval_basis_row(const SphericalCoord& c, int l_max);
Eigen::VectorXd eval_basis_row(const Vec3& dir, int l_max);

struct BasisMatrix {
  Eigen::MatrixXd entries;   // n_dirs x n_coef
  std::vector<Vec3> dirs;
  int l_max = 0;
  Eigen::VectorXd lb_diag;   // Laplace-Beltrami penalty l^2 (l+1)^2 per column
  double condition = 0.0;    // singular value ratio of `entries`
  bool rank_warning = false; // fewer directions than coefficients
};

BasisMatrix build_basis(const std::vector<Vec3>& dirs, int l_max);

// Pointwise synthesis sum_j coeffs[j] * Ytilde_j(dir).
double eval_sh(const Eigen::VectorXd& coeffs, const Vec3& dir, int l_max);
Eigen::VectorXd eval_sh(const Eigen::VectorXd& coeffs, const std::vector<Vec3>& dirs, int l_max);

}  // namespace odfatlas::sh
