#include "odfatlas/qball.hpp"
#include "odfatlas/tensor.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cstring>
#include <random>

using namespace odfatlas;
using namespace odfatlas::qball;

namespace {

const dwi::GradientScheme& protocol64() {
  static const dwi::GradientScheme s = dwi::make_halfsphere_scheme(64, 2000.0);
  return s;
}

Eigen::VectorXd random_coefficients(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::VectorXd c(n);
  for (int j = 0; j < n; ++j) c[j] = nd(rng);
  return c;
}

// raises c_1 until every tessellation sample is >= 0
void lift_nonnegative(Eigen::VectorXd& c, const Eigen::MatrixXd& sample_rows) {
  const double lo = (sample_rows * c).minCoeff();
  if (lo < 0.0) c[0] += -lo * 2.0 * std::sqrt(M_PI);
}

}  // namespace

TEST_CASE("lambda zero fit recovers band-limited coefficients") {
  const QBallFitter fitter(protocol64(), {6, 0.0});
  const sh::BasisMatrix basis = sh::build_basis(protocol64().dwi_directions(), 6);
  std::mt19937_64 rng(301);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd truth = random_coefficients(28, rng);
    const Eigen::VectorXd s = basis.entries * truth;
    const ShCoefficients fit = fitter.fit_normalized(s);
    worst = std::max(worst, (fit.values - truth).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("isotropic signal fits to the constant term only") {
  const QBallFitter fitter(protocol64(), {6, 0.0});
  const Eigen::VectorXd s = Eigen::VectorXd::Constant(64, 0.42);
  const ShCoefficients c = fitter.fit_normalized(s);
  CHECK(c.values[0] == doctest::Approx(0.42 * 2.0 * std::sqrt(M_PI)).epsilon(1e-10));
  for (int j = 1; j < 28; ++j) {
    CHECK(std::abs(c.values[j]) < 1e-9);
  }
}

TEST_CASE("regularization shrinks the top band on noisy signals") {
  const QBallFitter plain(protocol64(), {6, 0.0});
  const QBallFitter reg(protocol64(), {6, 0.006});
  const auto map = sh::index_map(6);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> noise(0.0, 0.05);

  const auto tensor = dwi::prolate_tensor(Vec3(0, 0, 1), 1.7e-3, 0.2e-3);
  Eigen::VectorXd s = dwi::multi_tensor_signal({{1.0, tensor}}, protocol64(), 1.0);
  Eigen::VectorXd dwi_part(64);
  const auto idx = protocol64().dwi_indices();
  for (int k = 0; k < 64; ++k) dwi_part[k] = s[idx[k]] + noise(rng);

  auto band6_energy = [&](const ShCoefficients& c) {
    double e = 0;
    for (const auto& i : map) {
      if (i.l == 6) e += c.values[i.j - 1] * c.values[i.j - 1];
    }
    return e;
  };
  CHECK(band6_energy(reg.fit_normalized(dwi_part)) <
        band6_energy(plain.fit_normalized(dwi_part)));
}

TEST_CASE("large lambda suppresses every band above zero") {
  const QBallFitter heavy(protocol64(), {6, 1e8});
  std::mt19937_64 rng(7);
  const sh::BasisMatrix basis = sh::build_basis(protocol64().dwi_directions(), 6);
  Eigen::VectorXd c_true = random_coefficients(28, rng);
  const ShCoefficients c = heavy.fit_normalized(basis.entries * c_true);
  for (int j = 1; j < 28; ++j) {
    CHECK(std::abs(c.values[j]) < 1e-4);
  }
}

TEST_CASE("underdetermined lambda-zero systems are reported") {
  const dwi::GradientScheme few = dwi::make_halfsphere_scheme(20, 2000.0);
  CHECK_THROWS_AS(QBallFitter(few, {6, 0.0}), NumericalError);
  CHECK_NOTHROW(QBallFitter(few, {6, 0.006}));
  CHECK_THROWS_AS(QBallFitter(protocol64(), {6, -1.0}), ValidationError);
}

TEST_CASE("voxel fit normalizes by the mean baseline and clamps") {
  dwi::GradientScheme scheme = dwi::make_halfsphere_scheme(64, 2000.0, 2);
  const QBallFitter fitter(scheme, {6, 0.006});

  Eigen::VectorXd raw(scheme.size());
  raw[0] = 90.0;
  raw[1] = 110.0;  // mean baseline 100
  const auto idx = scheme.dwi_indices();
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> un(20.0, 80.0);
  for (int k : idx) raw[k] = un(rng);
  raw[idx[5]] = 400.0;  // above 1.5 * s0, must clamp

  const auto fit = fitter.fit_voxel(raw);
  REQUIRE(fit.valid);

  Eigen::VectorXd normalized(64);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    normalized[static_cast<Eigen::Index>(k)] =
        std::min(raw[idx[k]] / 100.0, 1.5);
  }
  const ShCoefficients direct = fitter.fit_normalized(normalized);
  CHECK((fit.coef.values - direct.values).cwiseAbs().maxCoeff() == 0.0);

  raw[0] = 0.0;
  raw[1] = 0.0;
  CHECK_FALSE(fitter.fit_voxel(raw).valid);
}

TEST_CASE("funk radon transform scales bands by 2 pi P_l(0)") {
  ShCoefficients c;
  c.l_max = 6;
  c.kind = ShKind::signal;
  c.values = Eigen::VectorXd::Ones(28);
  const ShCoefficients odf = frt_to_odf(c);
  CHECK(odf.kind == ShKind::odf);

  const auto map = sh::index_map(6);
  for (const auto& i : map) {
    double expect = 0;
    switch (i.l) {
      case 0: expect = 2.0 * M_PI; break;
      case 2: expect = -M_PI; break;
      case 4: expect = 2.0 * M_PI * 3.0 / 8.0; break;
      case 6: expect = 2.0 * M_PI * (-5.0 / 16.0); break;
    }
    CHECK(odf.values[i.j - 1] == doctest::Approx(expect).epsilon(1e-14));
  }

  CHECK_THROWS_AS(frt_to_odf(odf), ValidationError);
}

TEST_CASE("gfa of an isotropic odf is zero in both forms") {
  ShCoefficients odf;
  odf.l_max = 6;
  odf.kind = ShKind::odf;
  odf.values = Eigen::VectorXd::Zero(28);
  CHECK(gfa_closed_form(odf) == 0.0);

  odf.values[0] = 3.0;
  CHECK(gfa_closed_form(odf) < 1e-10);
  const sh::Tessellation t3 = sh::tessellate_sphere(3);
  CHECK(gfa_sampled(odf, t3) < 1e-10);
}

TEST_CASE("closed form gfa matches exact quadrature moments") {
  // independent oracle: std/rms from numerically exact sphere integrals of
  // psi and psi^2 (degree <= 12, handled by the corrected weights)
  const sh::Tessellation t4 = sh::tessellate_sphere(4);
  const sh::BasisMatrix basis = sh::build_basis(t4.vertices, 6);
  const Eigen::VectorXd w = sh::quadrature_weights(t4, 12);
  std::mt19937_64 rng(501);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd c = random_coefficients(28, rng);
    const Eigen::VectorXd psi = basis.entries * c;
    const double integral = w.dot(psi);
    const double integral_sq = w.dot(psi.cwiseProduct(psi));
    const double mean = integral / (4.0 * M_PI);
    const double ms = integral_sq / (4.0 * M_PI);
    const double oracle = std::sqrt(1.0 - mean * mean / ms);
    CHECK(gfa_closed_form(c) == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("sampled gfa tracks the closed form on crossing odfs") {
  const sh::Tessellation t3 = sh::tessellate_sphere(3);
  const sh::BasisMatrix basis = sh::build_basis(t3.vertices, 6);
  const QBallFitter fitter(protocol64(), {6, 0.006});
  const auto idx = protocol64().dwi_indices();
  std::mt19937_64 rng(501);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto rnd_unit = [&] {
    Vec3 v(nd(rng), nd(rng), nd(rng));
    return Vec3(v.normalized());
  };
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const Vec3 a = rnd_unit();
    const Vec3 b = a.cross(rnd_unit()).normalized();
    const Eigen::VectorXd s = dwi::multi_tensor_signal(
        {{0.5, dwi::prolate_tensor(a, 1.7e-3, 0.2e-3)},
         {0.5, dwi::prolate_tensor(b, 1.7e-3, 0.2e-3)}},
        protocol64(), 1.0);
    Eigen::VectorXd d(64);
    for (int k = 0; k < 64; ++k) d[k] = s[idx[k]];
    const ShCoefficients odf = frt_to_odf(fitter.fit_normalized(d));
    worst = std::max(worst, std::abs(gfa_closed_form(odf) -
                                     gfa_sampled_rows(odf.values, basis.entries)));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("sampled gfa bias shrinks from coarse to fine tessellations") {
  const sh::BasisMatrix b1 = sh::build_basis(sh::tessellate_sphere(1).vertices, 6);
  const sh::BasisMatrix b3 = sh::build_basis(sh::tessellate_sphere(3).vertices, 6);
  std::mt19937_64 rng(43);
  double sum1 = 0.0, sum3 = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd c = random_coefficients(28, rng);
    lift_nonnegative(c, b3.entries);
    const double closed = gfa_closed_form(c);
    sum1 += std::abs(closed - gfa_sampled_rows(c, b1.entries));
    sum3 += std::abs(closed - gfa_sampled_rows(c, b3.entries));
  }
  CHECK(sum3 < sum1);
}

TEST_CASE("sampled gfa clamps negative lobes") {
  // a vector with a strongly negative lobe: closed form ignores the clamp,
  // the sampled estimate must act on max(psi, 0)
  Eigen::VectorXd c = Eigen::VectorXd::Zero(28);
  c[0] = 0.3;
  c[3] = 2.0;  // l=2, m=0 band: deep negative ring
  const sh::Tessellation t3 = sh::tessellate_sphere(3);
  const sh::BasisMatrix basis = sh::build_basis(t3.vertices, 6);

  const Eigen::VectorXd psi = (basis.entries * c).cwiseMax(0.0);
  const auto n = static_cast<double>(psi.size());
  const double mean = psi.mean();
  const double var = (psi.array() - mean).square().sum();
  const double expect = std::sqrt(n * var / ((n - 1.0) * psi.squaredNorm()));

  CHECK((basis.entries * c).minCoeff() < -0.1);
  CHECK(gfa_sampled_rows(c, basis.entries) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(gfa_sampled_rows(c, basis.entries) != doctest::Approx(gfa_closed_form(c)).epsilon(1e-3));
}

TEST_CASE("gfa grows with tensor anisotropy") {
  const QBallFitter fitter(protocol64(), {6, 0.006});
  const auto idx = protocol64().dwi_indices();
  double prev = -1.0;
  for (double shape = 0.05; shape < 0.95; shape += 0.1) {
    const double md = 0.7e-3;
    const auto t = dwi::prolate_tensor(Vec3(0, 0, 1), md * (1 + 2 * shape), md * (1 - shape));
    const Eigen::VectorXd s = dwi::multi_tensor_signal({{1.0, t}}, protocol64(), 1.0);
    Eigen::VectorXd dwi_part(64);
    for (int k = 0; k < 64; ++k) dwi_part[k] = s[idx[k]];
    const double g = gfa_closed_form(frt_to_odf(fitter.fit_normalized(dwi_part)));
    CHECK(g > prev);
    prev = g;
  }
  CHECK(prev > 0.2);
}

TEST_CASE("volume fit masks, propagates invalids, and is thread independent") {
  const dwi::GradientScheme scheme = dwi::make_halfsphere_scheme(64, 2000.0);
  DwiVolume dwi;
  dwi.scheme = scheme;
  dwi.data = Volume<double>({6, 5, 4}, scheme.size(), Vec3(2, 2, 2), 0.0);

  const std::int64_t n_vox = dwi.data.n_voxels();
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> un(10.0, 100.0);
  for (auto& v : dwi.data.data) v = un(rng);

  MaskVolume mask = full_mask(dwi.data.dims, dwi.data.voxel_size);
  mask.at(0, 0, 0) = 0;
  // kill the baseline of one in-mask voxel
  dwi.data.at(1, 1, 1, 0) = 0.0;

  const ShField f1 = fit_sh_volume(dwi, mask, {6, 0.006}, true, 1);
  CHECK(f1.coef.dims == dwi.data.dims);
  CHECK(f1.coef.ncomp == 28);
  CHECK(f1.kind == ShKind::odf);
  CHECK(f1.mask.at(0, 0, 0) == 0);
  CHECK(f1.mask.at(1, 1, 1) == 0);
  CHECK(mask_count(f1.mask) == n_vox - 2);
  for (int j = 0; j < 28; ++j) {
    CHECK(f1.coef.at(0, 0, 0, j) == 0.0);
    CHECK(f1.coef.at(1, 1, 1, j) == 0.0);
  }

  const ShField f4 = fit_sh_volume(dwi, mask, {6, 0.006}, true, 4);
  const ShField f16 = fit_sh_volume(dwi, mask, {6, 0.006}, true, 16);
  CHECK(std::memcmp(f1.coef.data.data(), f4.coef.data.data(),
                    f1.coef.data.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(f1.coef.data.data(), f16.coef.data.data(),
                    f1.coef.data.size() * sizeof(double)) == 0);
  CHECK(f1.mask.data == f4.mask.data);
  CHECK(f1.mask.data == f16.mask.data);

  const ScalarVolume g1 = gfa_map(f1, 1);
  const ScalarVolume g4 = gfa_map(f1, 4);
  CHECK(std::memcmp(g1.data.data(), g4.data.data(), g1.data.size() * sizeof(double)) == 0);
  CHECK(g1.at(0, 0, 0) == 0.0);
  for (auto v : g1.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}
