#pragma once

#include "odfatlas/volume.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace odfatlas::metrics {

// Pearson correlation of two scalar maps over the mask, in [-1, 1].
// Summation runs in a fixed voxel order so the result is reproducible.
// A map that is constant on the mask raises a numerical error.
double ncc(const ScalarVolume& a, const ScalarVolume& b, const MaskVolume& mask);

struct NamedMap {
  std::string name;
  ScalarVolume volume;
};

struct NccReport {
  std::vector<std::string> names;
  Eigen::MatrixXd r;  // symmetric with unit diagonal
  int least_i = 0;    // least-correlated pair: smallest |r| off the diagonal
  int least_j = 0;
  std::string summary;
};

NccReport ncc_matrix(const std::vector<NamedMap>& maps, const MaskVolume& mask);

}  // namespace odfatlas::metrics
