#include "odfatlas/qball.hpp"

#include <algorithm>
#include <cmath>

namespace odfatlas::qball {

QBallFitter::QBallFitter(const dwi::GradientScheme& scheme, const QBallConfig& cfg)
    : cfg_(cfg) {
  if (cfg.lambda < 0) {
    throw ValidationError("qball: lambda must be >= 0");
  }
  b0_idx_ = scheme.baseline_indices();
  dwi_idx_ = scheme.dwi_indices();
  if (dwi_idx_.empty()) {
    throw ValidationError("qball: scheme has no diffusion-weighted entries");
  }

  const sh::BasisMatrix basis = sh::build_basis(scheme.dwi_directions(), cfg.l_max);
  const Eigen::MatrixXd& b = basis.entries;
  Eigen::MatrixXd normal = b.transpose() * b;
  normal += cfg.lambda * basis.lb_diag.asDiagonal().toDenseMatrix();

  Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  // the regularized normal matrix must be well posed; with lambda = 0 this
  // needs at least n_coef well-spread directions
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(normal);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (!(smin > smax * 1e-12)) {
    throw NumericalError(
        "qball: singular normal matrix for l_max=" + std::to_string(cfg.l_max) +
        " with " + std::to_string(dwi_idx_.size()) +
        " directions; increase lambda above 0 or add directions");
  }
  solve_ = ldlt.solve(b.transpose());
}

ShCoefficients QBallFitter::fit_normalized(const Eigen::VectorXd& s) const {
  if (s.size() != solve_.cols()) {
    throw ValidationError("qball: normalized signal length " + std::to_string(s.size()) +
                          ", expected " + std::to_string(solve_.cols()));
  }
  ShCoefficients c;
  c.values = solve_ * s;
  c.l_max = cfg_.l_max;
  c.kind = ShKind::signal;
  return c;
}

QBallFitter::VoxelFit QBallFitter::fit_voxel(const Eigen::VectorXd& raw_signal) const {
  if (raw_signal.size() != static_cast<Eigen::Index>(b0_idx_.size() + dwi_idx_.size())) {
    throw ValidationError("qball: raw signal length does not match the scheme");
  }
  VoxelFit out;
  double s0 = 0;
  for (int i : b0_idx_) s0 += raw_signal[i];
  s0 /= static_cast<double>(b0_idx_.size());
  if (!(s0 > 0)) {
    return out;  // invalid voxel
  }
  Eigen::VectorXd s(static_cast<Eigen::Index>(dwi_idx_.size()));
  for (std::size_t k = 0; k < dwi_idx_.size(); ++k) {
    s[static_cast<Eigen::Index>(k)] =
        std::clamp(raw_signal[dwi_idx_[k]] / s0, 0.0, 1.5);
  }
  out.coef = fit_normalized(s);
  out.valid = true;
  return out;
}

ShCoefficients frt_to_odf(const ShCoefficients& c) {
  if (c.kind != ShKind::signal) {
    throw ValidationError("frt_to_odf: input must be a signal-kind coefficient vector");
  }
  ShCoefficients odf;
  odf.l_max = c.l_max;
  odf.kind = ShKind::odf;
  odf.values = c.values;
  const auto map = sh::index_map(c.l_max);
  for (const auto& idx : map) {
    odf.values[idx.j - 1] *= 2.0 * M_PI * sh::legendre_at_zero(idx.l);
  }
  return odf;
}

double gfa_closed_form(const Eigen::VectorXd& odf_values) {
  const double total = odf_values.squaredNorm();
  if (total <= 0.0) return 0.0;
  const double c1 = odf_values[0];
  const double v = 1.0 - c1 * c1 / total;
  return std::sqrt(std::max(v, 0.0));
}

double gfa_closed_form(const ShCoefficients& odf) {
  return gfa_closed_form(odf.values);
}

double gfa_sampled_rows(const Eigen::VectorXd& odf_values, const Eigen::MatrixXd& sample_rows) {
  const Eigen::VectorXd psi = (sample_rows * odf_values).cwiseMax(0.0);
  const auto n = static_cast<double>(psi.size());
  const double total = psi.squaredNorm();
  if (total <= 0.0) return 0.0;
  const double mean = psi.mean();
  const double var = (psi.array() - mean).square().sum();
  return std::sqrt(n * var / ((n - 1.0) * total));
}

double gfa_sampled(const ShCoefficients& odf, const sh::Tessellation& t) {
  const sh::BasisMatrix basis = sh::build_basis(t.vertices, odf.l_max);
  return gfa_sampled_rows(odf.values, basis.entries);
}

ShField fit_sh_volume(const DwiVolume& dwi, const MaskVolume& mask,
                      const QBallConfig& cfg, bool to_odf, int threads) {
  if (!same_grid(dwi.data, mask)) {
    throw ValidationError("fit_sh_volume: mask grid does not match the DWI volume");
  }
  if (dwi.data.ncomp != dwi.scheme.size()) {
    throw ValidationError("fit_sh_volume: component count does not match the scheme");
  }
  const QBallFitter fitter(dwi.scheme, cfg);
  const int n_coef = fitter.n_coef();
  const std::int64_t n_vox = dwi.data.n_voxels();

  ShField out;
  out.coef = Volume<double>(dwi.data.dims, n_coef, dwi.data.voxel_size, 0.0);
  out.mask = mask;
  out.l_max = cfg.l_max;
  out.kind = to_odf ? ShKind::odf : ShKind::signal;
  out.lambda = cfg.lambda;

  const int n_grad = dwi.scheme.size();
  parallel_for_index(n_vox, threads, [&](std::int64_t i) {
    if (!mask.data[static_cast<std::size_t>(i)]) return;
    Eigen::VectorXd sig(n_grad);
    for (int g = 0; g < n_grad; ++g) {
      sig[g] = dwi.data.data[static_cast<std::size_t>(i + n_vox * g)];
    }
    QBallFitter::VoxelFit fit = fitter.fit_voxel(sig);
    if (!fit.valid) {
      out.mask.data[static_cast<std::size_t>(i)] = 0;
      return;
    }
    ShCoefficients c = to_odf ? frt_to_odf(fit.coef) : std::move(fit.coef);
    for (int j = 0; j < n_coef; ++j) {
      out.coef.data[static_cast<std::size_t>(i + n_vox * j)] = c.values[j];
    }
  });
  return out;
}

ScalarVolume gfa_map(const ShField& field, int threads) {
  if (field.kind != ShKind::odf) {
    throw ValidationError("gfa_map: field must hold ODF coefficients");
  }
  const std::int64_t n_vox = field.coef.n_voxels();
  const int n_coef = field.coef.ncomp;
  ScalarVolume out(field.coef.dims, 1, field.coef.voxel_size, 0.0);
  parallel_for_index(n_vox, threads, [&](std::int64_t i) {
    if (!field.mask.data[static_cast<std::size_t>(i)]) return;
    Eigen::VectorXd c(n_coef);
    for (int j = 0; j < n_coef; ++j) {
      c[j] = field.coef.data[static_cast<std::size_t>(i + n_vox * j)];
    }
    out.data[static_cast<std::size_t>(i)] = gfa_closed_form(c);
  });
  return out;
}

}  // namespace odfatlas::qball
