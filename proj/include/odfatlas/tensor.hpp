#pragma once

#include "odfatlas/common.hpp"
#include "odfatlas/gradient_scheme.hpp"
#include "odfatlas/volume.hpp"

#include <utility>
#include <vector>

namespace odfatlas::dwi {

// Symmetric diffusion tensor in mm^2/s.
struct DiffusionTensor {
  double dxx = 0, dyy = 0, dzz = 0, dxy = 0, dxz = 0, dyz = 0;

  Mat3 matrix() const;
  static DiffusionTensor from_matrix(const Mat3& m);
};

// Axially symmetric tensor with the given principal axis and diffusivities.
DiffusionTensor prolate_tensor(const Vec3& axis, double axial, double radial);
DiffusionTensor isotropic_tensor(double d);

// Eigenvalues sorted descending.
Vec3 tensor_eigenvalues(const DiffusionTensor& t);
// Principal eigenvector (largest eigenvalue).
Vec3 tensor_principal_axis(const DiffusionTensor& t);

struct TensorScalars {
  double fa = 0, md = 0, rd = 0, ad = 0;
};

// Standard eigenvalue formulas; FA of the zero tensor is 0 by convention.
// Eigenvalues below -1e-12 raise a validation error.
TensorScalars tensor_scalars(const DiffusionTensor& t);

// S(g) = s0 * sum_i f_i exp(-b g^T D_i g); fractions must sum to 1.
Eigen::VectorXd multi_tensor_signal(
    const std::vector<std::pair<double, DiffusionTensor>>& compartments,
    const GradientScheme& scheme, double s0);

struct TensorFit {
  DiffusionTensor tensor;
  double s0 = 0;
  bool valid = false;  // false when any signal is non-positive
};

// Log-linear least squares on ln S = ln s0 - b g^T D g, eigenvalues clamped
// at zero.
TensorFit fit_tensor(const Eigen::VectorXd& signal, const GradientScheme& scheme);

struct TensorMaps {
  ScalarVolume fa, md, rd, ad;
  ScalarVolume baseline;  // mean of the measured b=0 entries
  MaskVolume mask;        // input mask minus voxels whose fit was invalid
};

// Voxel-wise tensor fits sharing a single design factorization.  Voxels
// outside the mask or with non-positive signals produce zeros and are
// removed from the output mask.
TensorMaps tensor_scalar_maps(const DwiVolume& dwi, const MaskVolume& mask,
                              int threads = 1);

}  // namespace odfatlas::dwi
