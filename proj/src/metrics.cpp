#include "odfatlas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace odfatlas::metrics {

double ncc(const ScalarVolume& a, const ScalarVolume& b, const MaskVolume& mask) {
  if (!same_grid(a, mask) || !same_grid(b, mask)) {
    throw ValidationError("ncc: volumes and mask must share one grid");
  }
  if (a.ncomp != 1 || b.ncomp != 1) {
    throw ValidationError("ncc: expected single-component volumes");
  }

  const std::size_t n_vox = a.data.size();
  std::int64_t n = 0;
  double mean_a = 0, mean_b = 0;
  for (std::size_t i = 0; i < n_vox; ++i) {
    if (!mask.data[i]) continue;
    mean_a += a.data[i];
    mean_b += b.data[i];
    ++n;
  }
  if (n < 2) {
    throw ValidationError("ncc: mask selects fewer than two voxels");
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);

  double saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < n_vox; ++i) {
    if (!mask.data[i]) continue;
    const double da = a.data[i] - mean_a;
    const double db = b.data[i] - mean_b;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (!(saa > 0) || !(sbb > 0)) {
    throw NumericalError("ncc: correlation undefined for an image that is constant on the mask");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

NccReport ncc_matrix(const std::vector<NamedMap>& maps, const MaskVolume& mask) {
  const int n = static_cast<int>(maps.size());
  if (n < 2) {
    throw ValidationError("ncc_matrix: need at least two maps");
  }
  std::set<std::string> seen;
  for (const auto& m : maps) {
    if (!seen.insert(m.name).second) {
      throw ValidationError("ncc_matrix: duplicate map name '" + m.name + "'");
    }
  }

  NccReport report;
  report.r = Eigen::MatrixXd::Identity(n, n);
  for (const auto& m : maps) report.names.push_back(m.name);

  double least = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double v = ncc(maps[static_cast<std::size_t>(i)].volume,
                           maps[static_cast<std::size_t>(j)].volume, mask);
      report.r(i, j) = v;
      report.r(j, i) = v;
      if (std::abs(v) < least) {
        least = std::abs(v);
        report.least_i = i;
        report.least_j = j;
      }
    }
  }

  std::ostringstream out;
  out << "least correlated pair: " << report.names[static_cast<std::size_t>(report.least_i)]
      << " and " << report.names[static_cast<std::size_t>(report.least_j)]
      << " (r = " << report.r(report.least_i, report.least_j) << ")";
  report.summary = out.str();
  return report;
}

}  // namespace odfatlas::metrics
