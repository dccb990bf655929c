#include "odfatlas/tensor.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace odfatlas;
using namespace odfatlas::dwi;

namespace {

DiffusionTensor rotated(const DiffusionTensor& t, const Mat3& r) {
  return DiffusionTensor::from_matrix(r * t.matrix() * r.transpose());
}

}  // namespace

TEST_CASE("tensor matrix round trip and eigenvalues") {
  DiffusionTensor t;
  t.dxx = 1.7e-3;
  t.dyy = 0.2e-3;
  t.dzz = 0.2e-3;
  const Vec3 ev = tensor_eigenvalues(t);
  CHECK(ev[0] == doctest::Approx(1.7e-3));
  CHECK(ev[1] == doctest::Approx(0.2e-3));
  CHECK(ev[2] == doctest::Approx(0.2e-3));
  CHECK((DiffusionTensor::from_matrix(t.matrix()).matrix() - t.matrix()).norm() == 0.0);
  CHECK(std::abs(tensor_principal_axis(t).x()) == doctest::Approx(1.0));
}

TEST_CASE("prolate tensor has requested axis and diffusivities") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const Vec3 axis = oracle::random_unit_vector(rng);
    const DiffusionTensor t = prolate_tensor(axis, 1.7e-3, 0.2e-3);
    const Vec3 ev = tensor_eigenvalues(t);
    CHECK(ev[0] == doctest::Approx(1.7e-3).epsilon(1e-12));
    CHECK(ev[1] == doctest::Approx(0.2e-3).epsilon(1e-12));
    CHECK(ev[2] == doctest::Approx(0.2e-3).epsilon(1e-12));
    CHECK(std::abs(tensor_principal_axis(t).dot(axis)) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(prolate_tensor(Vec3::Zero(), 1.7e-3, 0.2e-3), ValidationError);
}

TEST_CASE("tensor scalars match hand values") {
  const DiffusionTensor t = prolate_tensor(Vec3(0, 0, 1), 1.7e-3, 0.2e-3);
  const TensorScalars s = tensor_scalars(t);
  CHECK(s.fa == doctest::Approx(0.870388).epsilon(1e-3));
  CHECK(s.md == doctest::Approx(0.7e-3).epsilon(1e-12));
  CHECK(s.ad == doctest::Approx(1.7e-3).epsilon(1e-12));
  CHECK(s.rd == doctest::Approx(0.2e-3).epsilon(1e-12));
}

TEST_CASE("isotropic tensor has zero anisotropy") {
  const TensorScalars s = tensor_scalars(isotropic_tensor(0.7e-3));
  CHECK(std::abs(s.fa) < 1e-9);
  CHECK(s.md == doctest::Approx(0.7e-3));

  const TensorScalars z = tensor_scalars(DiffusionTensor{});
  CHECK(z.fa == 0.0);
  CHECK(z.md == 0.0);
}

TEST_CASE("tensor scalars reject indefinite tensors") {
  DiffusionTensor t;
  t.dxx = 1e-3;
  t.dyy = -1e-3;
  CHECK_THROWS_AS(tensor_scalars(t), ValidationError);
}

TEST_CASE("fa is rotation invariant") {
  std::mt19937_64 rng(23);
  const DiffusionTensor t = prolate_tensor(Vec3(0, 0, 1), 1.7e-3, 0.3e-3);
  const double fa0 = tensor_scalars(t).fa;
  for (int i = 0; i < 100; ++i) {
    const Mat3 r = oracle::random_rotation(rng);
    CHECK(std::abs(tensor_scalars(rotated(t, r)).fa - fa0) < 1e-12);
  }
}

TEST_CASE("multi tensor signal basics") {
  const GradientScheme scheme = make_halfsphere_scheme(64, 2000.0);
  const DiffusionTensor t = prolate_tensor(Vec3(1, 0, 0), 1.7e-3, 0.2e-3);

  const Eigen::VectorXd sig = multi_tensor_signal({{1.0, t}}, scheme, 100.0);
  REQUIRE(sig.size() == 65);
  CHECK(sig[0] == doctest::Approx(100.0));  // baseline: no attenuation
  for (int i = 1; i < sig.size(); ++i) {
    CHECK(sig[i] > 0.0);
    CHECK(sig[i] < 100.0);
  }

  // attenuation is strongest along the fiber axis
  const Eigen::VectorXd along =
      multi_tensor_signal({{1.0, t}}, validate_scheme({0.0, 2000.0},
                                                      {Vec3::Zero(), Vec3(1, 0, 0)}), 1.0);
  const Eigen::VectorXd across =
      multi_tensor_signal({{1.0, t}}, validate_scheme({0.0, 2000.0},
                                                      {Vec3::Zero(), Vec3(0, 0, 1)}), 1.0);
  CHECK(along[1] == doctest::Approx(std::exp(-2000.0 * 1.7e-3)));
  CHECK(across[1] == doctest::Approx(std::exp(-2000.0 * 0.2e-3)));

  CHECK_THROWS_AS(multi_tensor_signal({}, scheme, 1.0), ValidationError);
  CHECK_THROWS_AS(multi_tensor_signal({{0.7, t}}, scheme, 1.0), ValidationError);
  CHECK_THROWS_AS(multi_tensor_signal({{1.5, t}, {-0.5, t}}, scheme, 1.0), ValidationError);
}

TEST_CASE("jointly rotating tensors and scheme leaves the signal unchanged") {
  std::mt19937_64 rng(37);
  const GradientScheme scheme = make_halfsphere_scheme(32, 2000.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 a1 = oracle::random_unit_vector(rng);
    const Vec3 a2 = oracle::random_unit_vector(rng);
    const std::vector<std::pair<double, DiffusionTensor>> mix{
        {0.6, prolate_tensor(a1, 1.7e-3, 0.2e-3)},
        {0.4, prolate_tensor(a2, 1.5e-3, 0.3e-3)}};
    const Eigen::VectorXd base = multi_tensor_signal(mix, scheme, 1.0);

    const Mat3 r = oracle::random_rotation(rng);
    GradientScheme rs = scheme;
    for (auto& g : rs.bvecs) g = r * g;
    std::vector<std::pair<double, DiffusionTensor>> rmix;
    for (const auto& [f, t] : mix) rmix.emplace_back(f, rotated(t, r));
    const Eigen::VectorXd rot = multi_tensor_signal(rmix, rs, 1.0);

    CHECK((rot - base).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("noiseless tensor fit recovers the ground truth") {
  std::mt19937_64 rng(41);
  const GradientScheme scheme = make_halfsphere_scheme(64, 2000.0);
  for (int trial = 0; trial < 30; ++trial) {
    const DiffusionTensor truth =
        prolate_tensor(oracle::random_unit_vector(rng), 1.7e-3, 0.25e-3);
    const double s0 = 80.0 + 40.0 * trial / 30.0;
    const Eigen::VectorXd sig = multi_tensor_signal({{1.0, truth}}, scheme, s0);
    const TensorFit fit = fit_tensor(sig, scheme);
    REQUIRE(fit.valid);
    CHECK(std::abs(fit.s0 - s0) < 1e-8 * s0);
    CHECK((fit.tensor.matrix() - truth.matrix()).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("tensor fit flags non-positive signals") {
  const GradientScheme scheme = make_halfsphere_scheme(16, 2000.0);
  Eigen::VectorXd sig = multi_tensor_signal(
      {{1.0, isotropic_tensor(0.7e-3)}}, scheme, 50.0);
  sig[3] = 0.0;
  CHECK_FALSE(fit_tensor(sig, scheme).valid);
  sig[3] = -1.0;
  CHECK_FALSE(fit_tensor(sig, scheme).valid);
}

TEST_CASE("tensor fit clamps negative eigenvalues") {
  // signal that grows with b along x forces a negative fitted eigenvalue
  const double r = 1.0 / std::sqrt(2.0);
  const GradientScheme scheme = validate_scheme(
      {0.0, 2000.0, 2000.0, 2000.0, 2000.0, 2000.0, 2000.0},
      {Vec3::Zero(), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1),
       Vec3(r, r, 0), Vec3(r, 0, r), Vec3(0, r, r)});
  Eigen::VectorXd sig(7);
  sig << 1.0, 2.0, 0.5, 0.5, 0.9, 0.9, 0.5;
  const TensorFit fit = fit_tensor(sig, scheme);
  REQUIRE(fit.valid);
  const Vec3 ev = tensor_eigenvalues(fit.tensor);
  CHECK(ev[2] >= 0.0);
  CHECK_NOTHROW(tensor_scalars(fit.tensor));
}

TEST_CASE("tensor fit validates signal length") {
  const GradientScheme scheme = make_halfsphere_scheme(16, 2000.0);
  Eigen::VectorXd sig = Eigen::VectorXd::Ones(10);
  CHECK_THROWS_AS(fit_tensor(sig, scheme), ValidationError);
}

TEST_CASE("tensor fit rejects degenerate designs") {
  SUBCASE("too few measurements") {
    const GradientScheme scheme = make_halfsphere_scheme(5, 2000.0);
    CHECK_THROWS_AS(fit_tensor(Eigen::VectorXd::Ones(6), scheme), ValidationError);
  }
  SUBCASE("rank-deficient directions") {
    // 8 copies of the same direction cannot determine 6 tensor entries
    std::vector<double> bvals{0.0};
    std::vector<Vec3> bvecs{Vec3::Zero()};
    for (int i = 0; i < 8; ++i) {
      bvals.push_back(2000.0);
      bvecs.push_back(Vec3(0, 0, 1));
    }
    const GradientScheme scheme = validate_scheme(bvals, bvecs);
    Eigen::VectorXd sig = Eigen::VectorXd::Ones(9);
    CHECK_THROWS_AS(fit_tensor(sig, scheme), NumericalError);
  }
}
