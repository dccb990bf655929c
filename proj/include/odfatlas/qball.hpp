#pragma once

#include "odfatlas/sh_basis.hpp"
#include "odfatlas/tessellation.hpp"
#include "odfatlas/volume.hpp"

#include <vector>

namespace odfatlas::qball {

struct QBallConfig {
  int l_max = 6;
  double lambda = 0.006;  // Laplace-Beltrami regularization weight
};

struct ShCoefficients {
  Eigen::VectorXd values;
  int l_max = 0;
  ShKind kind = ShKind::signal;
};

// Per-scheme solver: one factorization of (B^T B + lambda L) shared by all
// voxels, L = diag(l^2 (l+1)^2).
class QBallFitter {
public:
  QBallFitter(const dwi::GradientScheme& scheme, const QBallConfig& cfg);

  // Fits the already-normalized diffusion-weighted signal (one value per
  // nonzero-b entry, scheme order).
  ShCoefficients fit_normalized(const Eigen::VectorXd& s) const;

  // Full raw signal over the scheme: normalizes by the mean baseline, clamps
  // S/S0 to [0, 1.5], then fits. valid=false when mean baseline <= 0.
  struct VoxelFit {
    ShCoefficients coef;
    bool valid = false;
  };
  VoxelFit fit_voxel(const Eigen::VectorXd& raw_signal) const;

  int n_coef() const { return static_cast<int>(solve_.rows()); }
  const QBallConfig& config() const { return cfg_; }
  const Eigen::MatrixXd& solve_matrix() const { return solve_; }

private:
  QBallConfig cfg_;
  std::vector<int> b0_idx_;
  std::vector<int> dwi_idx_;
  Eigen::MatrixXd solve_;  // n_coef x n_dwi, (B^T B + lambda L)^(-1) B^T
};

// Funk-Radon transform in SH: coefficient j scaled by 2 pi P_l(0).
ShCoefficients frt_to_odf(const ShCoefficients& c);

// sqrt(1 - c_1^2 / sum c_j^2); all-zero coefficients give 0.
double gfa_closed_form(const ShCoefficients& odf);
double gfa_closed_form(const Eigen::VectorXd& odf_values);

// Sample-based estimate over tessellation vertices, samples clamped at 0:
// sqrt(n sum (psi - mean)^2 / ((n-1) sum psi^2)).
double gfa_sampled(const ShCoefficients& odf, const sh::Tessellation& t);
double gfa_sampled_rows(const Eigen::VectorXd& odf_values, const Eigen::MatrixXd& sample_rows);

// Per-voxel SH fit over the mask; voxels whose baseline is invalid are
// cleared from the output mask. Bitwise-identical for any worker count.
ShField fit_sh_volume(const DwiVolume& dwi, const MaskVolume& mask,
                      const QBallConfig& cfg, bool to_odf, int threads);

// Closed-form GFA of an ODF field; zero outside the mask.
ScalarVolume gfa_map(const ShField& field, int threads);

}  // namespace odfatlas::qball
