#include "odfatlas/gradient_scheme.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace odfatlas::dwi {

std::vector<int> GradientScheme::baseline_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (bvals[static_cast<std::size_t>(i)] == 0.0) out.push_back(i);
  return out;
}

std::vector<int> GradientScheme::dwi_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (bvals[static_cast<std::size_t>(i)] != 0.0) out.push_back(i);
  return out;
}

std::vector<Vec3> GradientScheme::dwi_directions() const {
  std::vector<Vec3> out;
  for (int i : dwi_indices()) out.push_back(bvecs[static_cast<std::size_t>(i)]);
  return out;
}

double GradientScheme::shell_bvalue() const {
  return *std::max_element(bvals.begin(), bvals.end());
}

GradientScheme validate_scheme(const std::vector<double>& bvals, const std::vector<Vec3>& bvecs) {
  if (bvals.size() != bvecs.size())
    throw ValidationError("gradient scheme: " + std::to_string(bvals.size()) + " b-values vs " +
                          std::to_string(bvecs.size()) + " directions");
  if (bvals.empty()) throw ValidationError("gradient scheme: empty");

  GradientScheme s;
  s.bvals = bvals;
  s.bvecs.reserve(bvecs.size());
  bool has_baseline = false;
  for (std::size_t i = 0; i < bvecs.size(); ++i) {
    if (bvals[i] < 0.0)
      throw ValidationError("gradient scheme: negative b-value at entry " + std::to_string(i));
    if (bvals[i] == 0.0) {
      has_baseline = true;
      s.bvecs.push_back(Vec3::Zero());
      continue;
    }
    const double n = bvecs[i].norm();
    if (std::abs(n - 1.0) > 1e-3)
      throw ValidationError("gradient scheme: direction " + std::to_string(i) +
                            " has norm " + std::to_string(n) + " (must be unit within 1e-3)");
    s.bvecs.push_back(bvecs[i] / n);
  }
  if (!has_baseline) throw ValidationError("gradient scheme: no b=0 baseline entry");
  return s;
}

namespace {

std::vector<std::vector<double>> read_numeric_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (!ss.eof()) throw IoError(path + ": non-numeric token on line " +
                                 std::to_string(rows.size() + 1));
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

GradientScheme load_fsl_scheme(const std::string& bvals_path, const std::string& bvecs_path) {
  const auto brows = read_numeric_rows(bvals_path);
  if (brows.size() != 1) throw IoError(bvals_path + ": expected a single row of b-values");
  const auto vrows = read_numeric_rows(bvecs_path);
  if (vrows.size() != 3) throw IoError(bvecs_path + ": expected exactly 3 rows (x, y, z)");
  const std::size_t n = brows[0].size();
  if (vrows[0].size() != n || vrows[1].size() != n || vrows[2].size() != n)
    throw IoError(bvecs_path + ": column count does not match " + bvals_path);
  std::vector<Vec3> vecs(n);
  for (std::size_t i = 0; i < n; ++i) vecs[i] = Vec3(vrows[0][i], vrows[1][i], vrows[2][i]);
  return validate_scheme(brows[0], vecs);
}

void save_fsl_scheme(const GradientScheme& scheme, const std::string& bvals_path,
                     const std::string& bvecs_path) {
  std::ofstream bv(bvals_path);
  if (!bv) throw IoError("cannot write " + bvals_path);
  bv.precision(17);
  for (int i = 0; i < scheme.size(); ++i) bv << (i ? " " : "") << scheme.bvals[static_cast<std::size_t>(i)];
  bv << "\n";

  std::ofstream gv(bvecs_path);
  if (!gv) throw IoError("cannot write " + bvecs_path);
  gv.precision(17);
  for (int axis = 0; axis < 3; ++axis) {
    for (int i = 0; i < scheme.size(); ++i)
      gv << (i ? " " : "") << scheme.bvecs[static_cast<std::size_t>(i)](axis);
    gv << "\n";
  }
}

GradientScheme make_halfsphere_scheme(int n_dirs, double bval, int n_b0) {
  if (n_dirs < 1 || n_b0 < 1) throw ValidationError("make_halfsphere_scheme: need n_dirs, n_b0 >= 1");
  std::vector<double> bvals;
  std::vector<Vec3> bvecs;
  for (int i = 0; i < n_b0; ++i) {
    bvals.push_back(0.0);
    bvecs.push_back(Vec3::Zero());
  }
  // golden-angle spiral on the upper hemisphere
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n_dirs; ++i) {
    const double z = (i + 0.5) / n_dirs;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    bvals.push_back(bval);
    bvecs.push_back(Vec3(r * std::cos(phi), r * std::sin(phi), z));
  }
  return validate_scheme(bvals, bvecs);
}

}  // namespace odfatlas::dwi
