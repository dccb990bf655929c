#include "odfatlas/reorient.hpp"

#include "odfatlas/tessellation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace odfatlas::reorient {

namespace {

// 2 pi * integral_{-1}^{1} exp(-kappa (1 - t^2)) P_l(t) dt, composite Simpson.
// The integrand is entire and bounded by 1, so a fixed fine grid is plenty.
double lobe_band_coef(int l, double kappa) {
  constexpr int kIntervals = 20000;
  const double h = 2.0 / kIntervals;
  double acc = 0;
  for (int i = 0; i <= kIntervals; ++i) {
    const double t = -1.0 + h * i;
    const double f = std::exp(-kappa * (1.0 - t * t)) * sh::assoc_legendre(l, 0, t);
    const double w = (i == 0 || i == kIntervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * f;
  }
  return 2.0 * M_PI * acc * h / 3.0;
}

void check_basis(const DirectionalBasisSet& basis) {
  if (basis.directions.empty()) {
    throw ValidationError("reorient: basis has no directions");
  }
  if (!(basis.kappa > 0)) {
    throw ValidationError("reorient: basis concentration must be positive");
  }
  for (const Vec3& v : basis.directions) {
    if (std::abs(v.norm() - 1.0) > 1e-6) {
      throw ValidationError("reorient: basis directions must be unit vectors");
    }
  }
}

void check_field(const DisplacementField& field) {
  if (field.dims[0] < 1 || field.dims[1] < 1 || field.dims[2] < 1) {
    throw ValidationError("displacement field: non-positive dimensions");
  }
  if (static_cast<std::int64_t>(field.u.size()) != field.n_voxels()) {
    throw ValidationError("displacement field: vector count does not match the grid");
  }
  for (const Vec3& u : field.u) {
    if (!u.allFinite()) {
      throw ValidationError("displacement field: non-finite displacement");
    }
  }
}

// Trilinear sample of all components at a continuous voxel coordinate.
// Fails when the point leaves the grid or any stencil corner with nonzero
// weight is unmasked.
bool sample_masked(const Volume<double>& vol, const MaskVolume& mask, const Vec3& pvox,
                   Eigen::VectorXd& out) {
  const double px = pvox.x(), py = pvox.y(), pz = pvox.z();
  if (!(px >= 0.0 && px <= vol.dims[0] - 1.0 && py >= 0.0 && py <= vol.dims[1] - 1.0 &&
        pz >= 0.0 && pz <= vol.dims[2] - 1.0)) {
    return false;
  }
  const int x0 = static_cast<int>(std::floor(px));
  const int y0 = static_cast<int>(std::floor(py));
  const int z0 = static_cast<int>(std::floor(pz));
  const double tx = px - x0, ty = py - y0, tz = pz - z0;

  out.setZero(vol.ncomp);
  const std::int64_t n_vox = vol.n_voxels();
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
        if (w == 0.0) continue;
        const int x = x0 + dx, y = y0 + dy, z = z0 + dz;
        if (!vol.in_bounds(x, y, z) || !mask.at(x, y, z)) return false;
        const std::int64_t v = vol.voxel_index(x, y, z);
        for (int c = 0; c < vol.ncomp; ++c) {
          out[c] += w * vol.data[static_cast<std::size_t>(v + n_vox * c)];
        }
      }
    }
  }
  return true;
}

bool exact_identity(const Mat3& a) {
  return (a - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

DirectionalBasisSet default_basis() {
  DirectionalBasisSet basis;
  basis.directions = sh::hemisphere_directions(sh::tessellate_sphere(2));
  basis.kappa = 10.0;
  return basis;
}

Mat3 local_affine_at(const DisplacementField& field, int x, int y, int z) {
  const int c[3] = {x, y, z};
  for (int axis = 0; axis < 3; ++axis) {
    if (c[axis] < 0 || c[axis] >= field.dims[axis]) {
      throw ValidationError("local_affine_at: voxel out of range");
    }
  }
  Mat3 a = Mat3::Identity();
  for (int axis = 0; axis < 3; ++axis) {
    int lo[3] = {x, y, z};
    int hi[3] = {x, y, z};
    if (c[axis] + 1 < field.dims[axis]) ++hi[axis];
    if (c[axis] - 1 >= 0) --lo[axis];
    if (hi[axis] == lo[axis]) continue;  // single-slice axis, no derivative
    const Vec3 du = field.at(hi[0], hi[1], hi[2]) - field.at(lo[0], lo[1], lo[2]);
    const double dx = (hi[axis] - lo[axis]) * field.voxel_size[axis];
    a.col(axis) += du / dx;
  }
  return a;
}

Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double tol,
                     int max_iter) {
  const Eigen::Index m = A.rows();
  const Eigen::Index n = A.cols();
  if (b.size() != m) {
    throw ValidationError("nnls: right-hand side does not match the matrix");
  }
  if (tol <= 0) {
    tol = 10.0 * std::numeric_limits<double>::epsilon() * A.cwiseAbs().maxCoeff() *
          static_cast<double>(std::max(m, n)) * std::max(b.cwiseAbs().maxCoeff(), 1.0);
  }
  if (max_iter <= 0) max_iter = 3 * static_cast<int>(n);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Index> passive;
  std::vector<bool> in_passive(static_cast<std::size_t>(n), false);

  const auto solve_passive = [&]() {
    Eigen::MatrixXd Ap(m, static_cast<Eigen::Index>(passive.size()));
    for (std::size_t k = 0; k < passive.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(passive[k]);
    return Ap.colPivHouseholderQr().solve(b).eval();
  };

  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::VectorXd grad = A.transpose() * (b - A * w);
    Eigen::Index best = -1;
    double best_g = tol;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!in_passive[static_cast<std::size_t>(i)] && grad[i] > best_g) {
        best_g = grad[i];
        best = i;
      }
    }
    if (best < 0) break;
    passive.push_back(best);
    in_passive[static_cast<std::size_t>(best)] = true;

    Eigen::VectorXd z = solve_passive();
    while (z.minCoeff() <= 0.0) {
      double alpha = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < passive.size(); ++k) {
        const double zi = z[static_cast<Eigen::Index>(k)];
        if (zi <= 0.0) {
          const double wi = w[passive[k]];
          alpha = std::min(alpha, wi / (wi - zi));
        }
      }
      for (std::size_t k = 0; k < passive.size(); ++k) {
        const Eigen::Index i = passive[k];
        w[i] += alpha * (z[static_cast<Eigen::Index>(k)] - w[i]);
      }
      std::vector<Eigen::Index> kept;
      for (std::size_t k = 0; k < passive.size(); ++k) {
        const Eigen::Index i = passive[k];
        if (w[i] > 0.0 && z[static_cast<Eigen::Index>(k)] > 0.0) {
          kept.push_back(i);
        } else {
          w[i] = 0.0;
          in_passive[static_cast<std::size_t>(i)] = false;
        }
      }
      passive.swap(kept);
      if (passive.empty()) break;
      z = solve_passive();
    }
    for (std::size_t k = 0; k < passive.size(); ++k) w[passive[k]] = z[static_cast<Eigen::Index>(k)];
  }
  return w;
}

Reorienter::Reorienter(int l_max, DirectionalBasisSet basis)
    : l_max_(l_max), basis_(std::move(basis)) {
  if (l_max_ < 0 || l_max_ % 2 != 0) {
    throw ValidationError("reorient: l_max must be even and non-negative");
  }
  check_basis(basis_);

  const auto idx = sh::index_map(l_max_);
  spectrum_.resize(static_cast<Eigen::Index>(idx.size()));
  std::vector<double> by_order(static_cast<std::size_t>(l_max_ / 2 + 1));
  for (std::size_t i = 0; i < by_order.size(); ++i) {
    by_order[i] = lobe_band_coef(2 * static_cast<int>(i), basis_.kappa);
  }
  for (const auto& ix : idx) {
    spectrum_[ix.j - 1] = by_order[static_cast<std::size_t>(ix.l / 2)];
  }

  const int n_coef = sh::coef_count(l_max_);
  const int k = static_cast<int>(basis_.directions.size());
  dict_.setZero(n_coef, 1 + k);
  dict_(0, 0) = std::sqrt(4.0 * M_PI);  // the constant function
  for (int j = 0; j < k; ++j) {
    dict_.col(1 + j) = zonal_column(basis_.directions[static_cast<std::size_t>(j)]);
  }
}

Eigen::VectorXd Reorienter::zonal_column(const Vec3& v) const {
  return spectrum_.cwiseProduct(sh::eval_basis_row(v, l_max_));
}

ReorientedCoef Reorienter::apply(const Eigen::VectorXd& coef, const Mat3& a) const {
  if (coef.size() != dict_.rows()) {
    throw ValidationError("reorient: coefficient count does not match l_max");
  }
  if (!(a.determinant() > 0)) {
    return {coef, ReorientStatus::kIdentityFallback};
  }
  if (exact_identity(a)) {
    return {coef, ReorientStatus::kOk};
  }

  const Eigen::VectorXd w = nnls(dict_, coef);
  ReorientStatus status = ReorientStatus::kOk;
  const double resid = (dict_ * w - coef).norm();
  if (resid > 0.1 * std::max(coef.norm(), 1e-12)) {
    status = ReorientStatus::kResidualWarning;
  }

  Eigen::VectorXd out = coef;
  for (Eigen::Index j = 1; j < w.size(); ++j) {
    if (w[j] == 0.0) continue;
    const Vec3 moved = (a * basis_.directions[static_cast<std::size_t>(j - 1)]).normalized();
    out += w[j] * (zonal_column(moved) - dict_.col(j));
  }
  return {std::move(out), status};
}

ReorientedCoef reorient_signal(const Eigen::VectorXd& coef, int l_max, const Mat3& a,
                               const DirectionalBasisSet& basis) {
  return Reorienter(l_max, basis).apply(coef, a);
}

SampleReorienter::SampleReorienter(std::vector<Vec3> dirs, DirectionalBasisSet basis)
    : dirs_(std::move(dirs)), basis_(std::move(basis)) {
  if (dirs_.empty()) {
    throw ValidationError("reorient: no sample directions");
  }
  check_basis(basis_);
  const auto n = static_cast<Eigen::Index>(dirs_.size());
  const auto k = static_cast<Eigen::Index>(basis_.directions.size());
  dict_.resize(n, 1 + k);
  dict_.col(0).setOnes();
  for (Eigen::Index j = 0; j < k; ++j) {
    dict_.col(1 + j) = lobe_row(basis_.directions[static_cast<std::size_t>(j)]);
  }
}

Eigen::VectorXd SampleReorienter::lobe_row(const Vec3& v) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(dirs_.size()));
  for (std::size_t i = 0; i < dirs_.size(); ++i) {
    const double c = dirs_[i].dot(v);
    out[static_cast<Eigen::Index>(i)] = std::exp(-basis_.kappa * (1.0 - c * c));
  }
  return out;
}

ReorientedCoef SampleReorienter::apply(const Eigen::VectorXd& samples, const Mat3& a) const {
  if (samples.size() != dict_.rows()) {
    throw ValidationError("reorient: sample count does not match the directions");
  }
  if (!(a.determinant() > 0)) {
    return {samples, ReorientStatus::kIdentityFallback};
  }
  if (exact_identity(a)) {
    return {samples, ReorientStatus::kOk};
  }

  const Eigen::VectorXd w = nnls(dict_, samples);
  ReorientStatus status = ReorientStatus::kOk;
  const double resid = (dict_ * w - samples).norm();
  if (resid > 0.1 * std::max(samples.norm(), 1e-12)) {
    status = ReorientStatus::kResidualWarning;
  }

  Eigen::VectorXd out = samples;
  for (Eigen::Index j = 1; j < w.size(); ++j) {
    if (w[j] == 0.0) continue;
    const Vec3 moved = (a * basis_.directions[static_cast<std::size_t>(j - 1)]).normalized();
    out += w[j] * (lobe_row(moved) - dict_.col(j));
  }
  return {std::move(out), status};
}

WarpedField apply_warp(const ShField& src, const DisplacementField& field,
                       const DirectionalBasisSet& basis, int threads) {
  check_field(field);
  if (!same_grid(src.mask, src.coef)) {
    throw ValidationError("apply_warp: source mask does not match the coefficient grid");
  }
  const Reorienter reo(src.l_max, basis);
  if (src.coef.ncomp != sh::coef_count(src.l_max)) {
    throw ValidationError("apply_warp: coefficient count does not match l_max");
  }

  WarpedField out;
  out.field.l_max = src.l_max;
  out.field.kind = src.kind;
  out.field.lambda = src.lambda;
  out.field.coef = Volume<double>(field.dims, src.coef.ncomp, field.voxel_size, 0.0);
  out.field.mask = MaskVolume(field.dims, 1, field.voxel_size, 0);
  out.status = LabelVolume(field.dims, 1, field.voxel_size, 0);

  const std::int64_t n_vox = out.field.coef.n_voxels();
  const int nx = field.dims[0], ny = field.dims[1];
  parallel_for_index(n_vox, threads, [&](std::int64_t v) {
    const int x = static_cast<int>(v % nx);
    const int y = static_cast<int>((v / nx) % ny);
    const int z = static_cast<int>(v / (std::int64_t{nx} * ny));
    const Vec3 p_mm = Vec3(x * field.voxel_size.x(), y * field.voxel_size.y(),
                           z * field.voxel_size.z()) +
                      field.at(x, y, z);
    const Vec3 p_vox = src.coef.mm_to_voxel(p_mm);
    Eigen::VectorXd c;
    if (!sample_masked(src.coef, src.mask, p_vox, c)) return;

    const Mat3 jac = local_affine_at(field, x, y, z);
    ReorientedCoef r;
    if (!(jac.determinant() > 0)) {
      r = {std::move(c), ReorientStatus::kIdentityFallback};
    } else {
      r = reo.apply(c, jac.inverse());
    }
    out.field.mask.data[static_cast<std::size_t>(v)] = 1;
    out.status.data[static_cast<std::size_t>(v)] = static_cast<std::int32_t>(r.status);
    for (int j = 0; j < src.coef.ncomp; ++j) {
      out.field.coef.data[static_cast<std::size_t>(v + n_vox * j)] = r.values[j];
    }
  });
  return out;
}

WarpedField apply_warp(const ShField& src, const DisplacementField& field, int threads) {
  return apply_warp(src, field, default_basis(), threads);
}

WarpedDwi apply_warp_dwi(const DwiVolume& src, const MaskVolume& src_mask,
                         const DisplacementField& field,
                         const DirectionalBasisSet& basis, int threads) {
  check_field(field);
  if (!same_grid(src_mask, src.data)) {
    throw ValidationError("apply_warp_dwi: mask does not match the data grid");
  }
  if (src.data.ncomp != src.scheme.size()) {
    throw ValidationError("apply_warp_dwi: component count does not match the scheme");
  }
  const std::vector<int> dwi_idx = src.scheme.dwi_indices();
  const SampleReorienter reo(src.scheme.dwi_directions(), basis);

  WarpedDwi out;
  out.data.scheme = src.scheme;
  out.data.data = Volume<double>(field.dims, src.data.ncomp, field.voxel_size, 0.0);
  out.mask = MaskVolume(field.dims, 1, field.voxel_size, 0);
  out.status = LabelVolume(field.dims, 1, field.voxel_size, 0);

  const std::int64_t n_vox = out.data.data.n_voxels();
  const int nx = field.dims[0], ny = field.dims[1];
  parallel_for_index(n_vox, threads, [&](std::int64_t v) {
    const int x = static_cast<int>(v % nx);
    const int y = static_cast<int>((v / nx) % ny);
    const int z = static_cast<int>(v / (std::int64_t{nx} * ny));
    const Vec3 p_mm = Vec3(x * field.voxel_size.x(), y * field.voxel_size.y(),
                           z * field.voxel_size.z()) +
                      field.at(x, y, z);
    const Vec3 p_vox = src.data.mm_to_voxel(p_mm);
    Eigen::VectorXd s;
    if (!sample_masked(src.data, src_mask, p_vox, s)) return;

    Eigen::VectorXd s_dwi(static_cast<Eigen::Index>(dwi_idx.size()));
    for (std::size_t i = 0; i < dwi_idx.size(); ++i) {
      s_dwi[static_cast<Eigen::Index>(i)] = s[dwi_idx[i]];
    }
    const Mat3 jac = local_affine_at(field, x, y, z);
    ReorientedCoef r;
    if (!(jac.determinant() > 0)) {
      r = {std::move(s_dwi), ReorientStatus::kIdentityFallback};
    } else {
      r = reo.apply(s_dwi, jac.inverse());
    }
    for (std::size_t i = 0; i < dwi_idx.size(); ++i) {
      s[dwi_idx[i]] = r.values[static_cast<Eigen::Index>(i)];
    }
    out.mask.data[static_cast<std::size_t>(v)] = 1;
    out.status.data[static_cast<std::size_t>(v)] = static_cast<std::int32_t>(r.status);
    for (int j = 0; j < src.data.ncomp; ++j) {
      out.data.data.data[static_cast<std::size_t>(v + n_vox * j)] = s[j];
    }
  });
  return out;
}

WarpedDwi apply_warp_dwi(const DwiVolume& src, const MaskVolume& src_mask,
                         const DisplacementField& field, int threads) {
  return apply_warp_dwi(src, src_mask, field, default_basis(), threads);
}

}  // namespace odfatlas::reorient
