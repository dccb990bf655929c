#pragma once

#include "odfatlas/common.hpp"

#include <string>
#include <vector>

namespace odfatlas::dwi {

// Diffusion sampling protocol: per-volume b-value (s/mm^2) and unit gradient
// direction. Zero directions are allowed only on b=0 baselines; at least one
// baseline entry is required.
struct GradientScheme {
  std::vector<double> bvals;
  std::vector<Vec3> bvecs;

  int size() const { return static_cast<int>(bvals.size()); }
  std::vector<int> baseline_indices() const;
  std::vector<int> dwi_indices() const;
  std::vector<Vec3> dwi_directions() const;
  double shell_bvalue() const;  // max b-value present
};

// Validates lengths, renormalizes near-unit vectors (tolerance 1e-3) and
// checks for a baseline entry.
GradientScheme validate_scheme(const std::vector<double>& bvals, const std::vector<Vec3>& bvecs);

// FSL-style text files: bvals is one whitespace-separated row, bvecs is three
// rows (x, y, z) of the same length.
GradientScheme load_fsl_scheme(const std::string& bvals_path, const std::string& bvecs_path);
void save_fsl_scheme(const GradientScheme& scheme, const std::string& bvals_path,
                     const std::string& bvecs_path);

// Deterministic half-sphere protocol: n_b0 baselines followed by n_dirs
// spiral-distributed directions with z > 0 at the given b-value.
GradientScheme make_halfsphere_scheme(int n_dirs, double bval, int n_b0 = 1);

}  // namespace odfatlas::dwi
