#pragma once

#include "odfatlas/sh_basis.hpp"
#include "odfatlas/volume.hpp"

#include <cstdint>
#include <vector>

namespace odfatlas::reorient {

// Fixed dictionary of axially symmetric lobes exp(-kappa (1 - (g.v)^2));
// decompositions add an explicit isotropic atom so that constant signals
// never leak into the directional weights.
struct DirectionalBasisSet {
  std::vector<Vec3> directions;  // unit, one per antipodal pair
  double kappa = 10.0;
};

// Level-2 tessellation hemisphere, 81 directions.
DirectionalBasisSet default_basis();

// a = I + grad(u) in mm units; central differences at interior voxels,
// one-sided at the grid boundary.
Mat3 local_affine_at(const DisplacementField& field, int x, int y, int z);

// min ||A w - b|| subject to w >= 0 (Lawson-Hanson active set).
// tol <= 0 picks a scale-aware default; max_iter <= 0 means 3 * cols.
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                     double tol = 0.0, int max_iter = 0);

enum class ReorientStatus : std::int32_t {
  kOk = 0,
  kIdentityFallback = 1,  // non-positive determinant, direction action skipped
  kResidualWarning = 2,   // lobe decomposition left > 10% relative residual
};

struct ReorientedCoef {
  Eigen::VectorXd values;
  ReorientStatus status = ReorientStatus::kOk;
};

// Decompose-reorient-recompose for SH coefficient vectors.  The lobes enter
// through their band-limited projections (zonal spectrum lambda_l, so a lobe
// at v has coefficients lambda_l * Ytilde_j(v)), which makes recomposition
// exact under rotation of the directions.  The part of the signal the
// nonnegative decomposition cannot express is carried through unchanged.
class Reorienter {
 public:
  Reorienter(int l_max, DirectionalBasisSet basis);

  // a acts on lobe directions as v -> a v / ||a v||.
  ReorientedCoef apply(const Eigen::VectorXd& coef, const Mat3& a) const;

  int l_max() const { return l_max_; }
  const DirectionalBasisSet& basis() const { return basis_; }
  const Eigen::MatrixXd& dictionary() const { return dict_; }

 private:
  Eigen::VectorXd zonal_column(const Vec3& v) const;

  int l_max_ = 0;
  DirectionalBasisSet basis_;
  Eigen::VectorXd spectrum_;  // lambda_{l(j)} per coefficient index
  Eigen::MatrixXd dict_;      // n_coef x (1 + k), column 0 isotropic
};

ReorientedCoef reorient_signal(const Eigen::VectorXd& coef, int l_max, const Mat3& a,
                               const DirectionalBasisSet& basis);

// Raw-sample variant for DWI volumes: decomposition and recomposition on the
// acquisition directions themselves, no SH round trip.
class SampleReorienter {
 public:
  SampleReorienter(std::vector<Vec3> dirs, DirectionalBasisSet basis);

  ReorientedCoef apply(const Eigen::VectorXd& samples, const Mat3& a) const;

 private:
  Eigen::VectorXd lobe_row(const Vec3& v) const;

  std::vector<Vec3> dirs_;
  DirectionalBasisSet basis_;
  Eigen::MatrixXd dict_;  // n_dirs x (1 + k) raw lobe values
};

// Pullback warp: output voxel x reads the source at x + u(x) by trilinear
// interpolation and reorients with the inverse local Jacobian.  Voxels whose
// source stencil leaves the source mask are removed from the output mask.
struct WarpedField {
  ShField field;
  LabelVolume status;  // ReorientStatus codes per voxel
};
WarpedField apply_warp(const ShField& src, const DisplacementField& field,
                       const DirectionalBasisSet& basis, int threads = 1);
WarpedField apply_warp(const ShField& src, const DisplacementField& field,
                       int threads = 1);

struct WarpedDwi {
  DwiVolume data;
  MaskVolume mask;
  LabelVolume status;
};
WarpedDwi apply_warp_dwi(const DwiVolume& src, const MaskVolume& src_mask,
                         const DisplacementField& field,
                         const DirectionalBasisSet& basis, int threads = 1);
WarpedDwi apply_warp_dwi(const DwiVolume& src, const MaskVolume& src_mask,
                         const DisplacementField& field, int threads = 1);

}  // namespace odfatlas::reorient
