#include "odfatlas/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace odfatlas::dwi {

Mat3 DiffusionTensor::matrix() const {
  Mat3 m;
  m << dxx, dxy, dxz,
       dxy, dyy, dyz,
       dxz, dyz, dzz;
  return m;
}

DiffusionTensor DiffusionTensor::from_matrix(const Mat3& m) {
  DiffusionTensor t;
  t.dxx = m(0, 0);
  t.dyy = m(1, 1);
  t.dzz = m(2, 2);
  t.dxy = 0.5 * (m(0, 1) + m(1, 0));
  t.dxz = 0.5 * (m(0, 2) + m(2, 0));
  t.dyz = 0.5 * (m(1, 2) + m(2, 1));
  return t;
}

DiffusionTensor prolate_tensor(const Vec3& axis, double axial, double radial) {
  const double n = axis.norm();
  if (n < 1e-12) {
    throw ValidationError("prolate_tensor: zero axis");
  }
  const Vec3 a = axis / n;
  Mat3 m = radial * Mat3::Identity() + (axial - radial) * (a * a.transpose());
  return DiffusionTensor::from_matrix(m);
}

DiffusionTensor isotropic_tensor(double d) {
  DiffusionTensor t;
  t.dxx = t.dyy = t.dzz = d;
  return t;
}

Vec3 tensor_eigenvalues(const DiffusionTensor& t) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(t.matrix());
  Vec3 ev = es.eigenvalues();  // ascending
  return Vec3(ev[2], ev[1], ev[0]);
}

Vec3 tensor_principal_axis(const DiffusionTensor& t) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(t.matrix());
  return es.eigenvectors().col(2);
}

TensorScalars tensor_scalars(const DiffusionTensor& t) {
  Vec3 l = tensor_eigenvalues(t);
  for (int i = 0; i < 3; ++i) {
    if (l[i] < -1e-12) {
      throw ValidationError("tensor_scalars: negative eigenvalue " +
                            std::to_string(l[i]));
    }
    l[i] = std::max(l[i], 0.0);
  }
  TensorScalars s;
  s.md = (l[0] + l[1] + l[2]) / 3.0;
  s.ad = l[0];
  s.rd = 0.5 * (l[1] + l[2]);
  const double sq = l.squaredNorm();
  if (sq <= 0.0) {
    s.fa = 0.0;
  } else {
    const double dev = (l[0] - s.md) * (l[0] - s.md) +
                       (l[1] - s.md) * (l[1] - s.md) +
                       (l[2] - s.md) * (l[2] - s.md);
    s.fa = std::sqrt(1.5 * dev / sq);
  }
  return s;
}

Eigen::VectorXd multi_tensor_signal(
    const std::vector<std::pair<double, DiffusionTensor>>& compartments,
    const GradientScheme& scheme, double s0) {
  if (compartments.empty()) {
    throw ValidationError("multi_tensor_signal: no compartments");
  }
  double total = 0;
  for (const auto& [f, t] : compartments) {
    (void)t;
    if (f < 0) {
      throw ValidationError("multi_tensor_signal: negative volume fraction");
    }
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("multi_tensor_signal: volume fractions sum to " +
                          std::to_string(total) + ", expected 1");
  }
  const int n = scheme.size();
  Eigen::VectorXd signal(n);
  for (int i = 0; i < n; ++i) {
    const double b = scheme.bvals[i];
    const Vec3& g = scheme.bvecs[i];
    double s = 0;
    for (const auto& [f, t] : compartments) {
      s += f * std::exp(-b * g.dot(t.matrix() * g));
    }
    signal[i] = s0 * s;
  }
  return signal;
}

namespace {

Eigen::MatrixXd tensor_design(const GradientScheme& scheme) {
  const int n = scheme.size();
  Eigen::MatrixXd design(n, 7);
  for (int i = 0; i < n; ++i) {
    const double b = scheme.bvals[static_cast<std::size_t>(i)];
    const Vec3& g = scheme.bvecs[static_cast<std::size_t>(i)];
    design(i, 0) = 1.0;
    design(i, 1) = -b * g.x() * g.x();
    design(i, 2) = -b * g.y() * g.y();
    design(i, 3) = -b * g.z() * g.z();
    design(i, 4) = -2.0 * b * g.x() * g.y();
    design(i, 5) = -2.0 * b * g.x() * g.z();
    design(i, 6) = -2.0 * b * g.y() * g.z();
  }
  return design;
}

Eigen::ColPivHouseholderQR<Eigen::MatrixXd> tensor_solver(const GradientScheme& scheme) {
  if (scheme.dwi_indices().size() < 6) {
    throw ValidationError("fit_tensor: need at least 6 diffusion-weighted measurements");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(tensor_design(scheme));
  if (qr.rank() < 7) {
    throw NumericalError("fit_tensor: rank-deficient design (rank " +
                         std::to_string(qr.rank()) + " of 7); directions too degenerate");
  }
  return qr;
}

// clamps negative eigenvalues and fills everything downstream of the solve
TensorFit tensor_from_coef(const Eigen::VectorXd& coef) {
  DiffusionTensor raw;
  raw.dxx = coef[1];
  raw.dyy = coef[2];
  raw.dzz = coef[3];
  raw.dxy = coef[4];
  raw.dxz = coef[5];
  raw.dyz = coef[6];

  Eigen::SelfAdjointEigenSolver<Mat3> es(raw.matrix());
  Vec3 ev = es.eigenvalues();
  for (int k = 0; k < 3; ++k) {
    ev[k] = std::max(ev[k], 0.0);
  }
  Mat3 clamped =
      es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();

  TensorFit fit;
  fit.tensor = DiffusionTensor::from_matrix(clamped);
  fit.s0 = std::exp(coef[0]);
  fit.valid = true;
  return fit;
}

}  // namespace

TensorFit fit_tensor(const Eigen::VectorXd& signal, const GradientScheme& scheme) {
  if (signal.size() != scheme.size()) {
    throw ValidationError("fit_tensor: signal length " +
                          std::to_string(signal.size()) +
                          " does not match scheme size " +
                          std::to_string(scheme.size()));
  }
  const auto qr = tensor_solver(scheme);
  for (Eigen::Index i = 0; i < signal.size(); ++i) {
    if (!(signal[i] > 0)) {
      return {};  // valid stays false
    }
  }
  return tensor_from_coef(qr.solve(signal.array().log().matrix()));
}

TensorMaps tensor_scalar_maps(const DwiVolume& dwi, const MaskVolume& mask,
                              int threads) {
  if (!same_grid(dwi.data, mask)) {
    throw ValidationError("tensor_scalar_maps: mask grid does not match the data");
  }
  if (dwi.data.ncomp != dwi.scheme.size()) {
    throw ValidationError("tensor_scalar_maps: volume has " +
                          std::to_string(dwi.data.ncomp) + " components but the scheme has " +
                          std::to_string(dwi.scheme.size()) + " entries");
  }
  const auto qr = tensor_solver(dwi.scheme);
  const auto b0 = dwi.scheme.baseline_indices();
  const int n_grad = dwi.scheme.size();

  TensorMaps out;
  out.fa = ScalarVolume(dwi.data.dims, 1, dwi.data.voxel_size, 0.0);
  out.md = out.fa;
  out.rd = out.fa;
  out.ad = out.fa;
  out.baseline = out.fa;
  out.mask = mask;

  const std::int64_t n_vox = dwi.data.n_voxels();
  parallel_for_index(n_vox, threads, [&](std::int64_t i) {
    if (!mask.data[static_cast<std::size_t>(i)]) return;
    Eigen::VectorXd signal(n_grad);
    bool positive = true;
    for (int g = 0; g < n_grad; ++g) {
      signal[g] = dwi.data.data[static_cast<std::size_t>(i + n_vox * g)];
      positive = positive && signal[g] > 0;
    }
    if (!positive) {
      out.mask.data[static_cast<std::size_t>(i)] = 0;
      return;
    }
    const TensorFit fit = tensor_from_coef(qr.solve(signal.array().log().matrix()));
    const TensorScalars s = tensor_scalars(fit.tensor);
    out.fa.data[static_cast<std::size_t>(i)] = s.fa;
    out.md.data[static_cast<std::size_t>(i)] = s.md;
    out.rd.data[static_cast<std::size_t>(i)] = s.rd;
    out.ad.data[static_cast<std::size_t>(i)] = s.ad;
    double mean_b0 = 0;
    for (int idx : b0) mean_b0 += signal[idx];
    out.baseline.data[static_cast<std::size_t>(i)] = mean_b0 / static_cast<double>(b0.size());
  });
  return out;
}

}  // namespace odfatlas::dwi
