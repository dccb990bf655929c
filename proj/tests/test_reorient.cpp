#include "odfatlas/reorient.hpp"

#include "odfatlas/qball.hpp"
#include "odfatlas/tessellation.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

using namespace odfatlas;
using namespace odfatlas::reorient;

namespace {

// Band-limited projection of a prolate tensor signal, via dense fit.
Eigen::VectorXd tensor_sh(const Vec3& axis, double shape, int l_max = 6) {
  static const auto dirs = sh::hemisphere_directions(sh::tessellate_sphere(3));
  static const auto basis = sh::build_basis(dirs, 6);
  REQUIRE(l_max == 6);
  const double b = 2000.0, md = 0.7e-3;
  const double la = md * (1 + 2 * shape), lr = md * (1 - shape);
  Eigen::VectorXd vals(basis.entries.rows());
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const double c = dirs[i].dot(axis);
    vals[static_cast<Eigen::Index>(i)] = std::exp(-b * (lr + (la - lr) * c * c));
  }
  return basis.entries.colPivHouseholderQr().solve(vals);
}

Vec3 dominant_direction(const Eigen::VectorXd& odf_coef, int l_max,
                        const sh::Tessellation& t) {
  double best = -1e300;
  Vec3 dir(0, 0, 1);
  for (const Vec3& v : t.vertices) {
    const double psi = sh::eval_sh(odf_coef, v, l_max);
    if (psi > best) {
      best = psi;
      dir = v;
    }
  }
  return dir;
}

double axis_angle_deg(const Vec3& a, const Vec3& b) {
  const double c = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
  return std::acos(c) * 180.0 / M_PI;
}

Eigen::VectorXd frt(const Eigen::VectorXd& signal_coef) {
  qball::ShCoefficients c{signal_coef, 6, ShKind::signal};
  return qball::frt_to_odf(c).values;
}

// Hand-coded Legendre values, independent of the library recurrences.
double legendre_explicit(int l, double t) {
  const double t2 = t * t;
  switch (l) {
    case 0: return 1.0;
    case 2: return 0.5 * (3 * t2 - 1);
    case 4: return (35 * t2 * t2 - 30 * t2 + 3) / 8.0;
    case 6: return (231 * t2 * t2 * t2 - 315 * t2 * t2 + 105 * t2 - 5) / 16.0;
    default: FAIL("unexpected order"); return 0;
  }
}

Mat3 rotation_z(double deg) {
  const double r = deg * M_PI / 180.0;
  Mat3 m;
  m << std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0, 0, 0, 1;
  return m;
}

}  // namespace

TEST_CASE("nonnegative least squares") {
  std::mt19937_64 eng(41);
  std::normal_distribution<double> nd;

  SUBCASE("matches brute-force support enumeration") {
    for (int trial = 0; trial < 25; ++trial) {
      const int m = 5 + static_cast<int>(eng() % 4);
      const int n = 3 + static_cast<int>(eng() % 6);
      Eigen::MatrixXd A(m, n);
      Eigen::VectorXd b(m);
      for (int i = 0; i < m; ++i) {
        b[i] = nd(eng);
        for (int j = 0; j < n; ++j) A(i, j) = nd(eng);
      }
      const Eigen::VectorXd w = nnls(A, b);
      CHECK(w.minCoeff() >= 0.0);
      const double got = (A * w - b).norm();

      double best = b.norm();  // empty support
      for (int s = 1; s < (1 << n); ++s) {
        std::vector<int> cols;
        for (int j = 0; j < n; ++j) {
          if (s & (1 << j)) cols.push_back(j);
        }
        Eigen::MatrixXd As(m, static_cast<Eigen::Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k) As.col(static_cast<Eigen::Index>(k)) = A.col(cols[k]);
        const Eigen::VectorXd z = As.colPivHouseholderQr().solve(b);
        if (z.minCoeff() < -1e-10) continue;
        best = std::min(best, (As * z - b).norm());
      }
      CHECK(got <= best + 1e-9);

      const Eigen::VectorXd grad = A.transpose() * (b - A * w);
      const double scale = std::max(1.0, b.norm());
      for (int j = 0; j < n; ++j) {
        if (w[j] > 0) {
          CHECK(std::abs(grad[j]) < 1e-7 * scale);
        } else {
          CHECK(grad[j] < 1e-7 * scale);
        }
      }
    }
  }
  SUBCASE("recovers exactly representable combinations") {
    for (int trial = 0; trial < 10; ++trial) {
      Eigen::MatrixXd A(12, 5);
      for (int i = 0; i < 12; ++i) {
        for (int j = 0; j < 5; ++j) A(i, j) = nd(eng);
      }
      Eigen::VectorXd w0(5);
      for (int j = 0; j < 5; ++j) w0[j] = (j % 2) ? 0.0 : std::abs(nd(eng));
      const Eigen::VectorXd w = nnls(A, A * w0);
      CHECK((A * w - A * w0).norm() < 1e-10);
    }
  }
  SUBCASE("zero right-hand side gives zero weights") {
    const Eigen::MatrixXd A = Eigen::MatrixXd::Random(6, 4);
    CHECK(nnls(A, Eigen::VectorXd::Zero(6)).norm() == 0.0);
    CHECK_THROWS_AS(nnls(A, Eigen::VectorXd::Zero(5)), ValidationError);
  }
}

TEST_CASE("lobe dictionary columns are the band-limited lobe projections") {
  // single-direction basis along z isolates the zonal spectrum
  DirectionalBasisSet one;
  one.directions = {Vec3(0, 0, 1)};

  SUBCASE("zonal spectrum matches an independent 1d quadrature") {
    for (double kappa : {3.0, 10.0}) {
      one.kappa = kappa;
      const Reorienter reo(6, one);
      const auto idx = sh::index_map(6);
      for (int l : {0, 2, 4, 6}) {
        // midpoint rule, 1e6 cells; independent of the Simpson grid inside
        const int n = 1000000;
        double acc = 0;
        for (int i = 0; i < n; ++i) {
          const double t = -1.0 + (i + 0.5) * 2.0 / n;
          acc += std::exp(-kappa * (1.0 - t * t)) * legendre_explicit(l, t);
        }
        const double lambda_l = 2.0 * M_PI * acc * 2.0 / n;

        int j = -1;
        for (const auto& ix : idx) {
          if (ix.l == l && ix.m == 0) j = ix.j;
        }
        REQUIRE(j > 0);
        const double y_pole = std::sqrt((2.0 * l + 1.0) / (4.0 * M_PI));
        CHECK(reo.dictionary()(j - 1, 1) == doctest::Approx(lambda_l * y_pole).epsilon(1e-8));
      }
    }
  }
  SUBCASE("column matches a dense spherical quadrature at a generic direction") {
    std::mt19937_64 eng(4242);
    const Vec3 v = oracle::random_unit_vector(eng);
    DirectionalBasisSet basis;
    basis.directions = {v};
    basis.kappa = 10.0;
    const Reorienter reo(6, basis);

    const int nu = 1000, nphi = 360;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(28);
    for (int iu = 0; iu < nu; ++iu) {
      const double u = -1.0 + (iu + 0.5) * 2.0 / nu;
      const double s = std::sqrt(std::max(0.0, 1.0 - u * u));
      for (int ip = 0; ip < nphi; ++ip) {
        const double phi = (ip + 0.5) * 2.0 * M_PI / nphi;
        const Vec3 g(s * std::cos(phi), s * std::sin(phi), u);
        const double c = g.dot(v);
        acc += std::exp(-10.0 * (1.0 - c * c)) * sh::eval_basis_row(g, 6);
      }
    }
    acc *= (2.0 / nu) * (2.0 * M_PI / nphi);
    CHECK((reo.dictionary().col(1) - acc).cwiseAbs().maxCoeff() < 1e-4);
    // isotropic atom is the constant function
    CHECK(reo.dictionary()(0, 0) == doctest::Approx(std::sqrt(4.0 * M_PI)));
    CHECK(reo.dictionary().col(0).tail(27).norm() == 0.0);
  }
}

TEST_CASE("local affine extraction") {
  DisplacementField f;
  f.dims = {6, 5, 4};
  f.voxel_size = Vec3(1.2, 1.0, 0.8);
  f.u.assign(static_cast<std::size_t>(f.n_voxels()), Vec3::Zero());

  SUBCASE("zero and constant fields give the identity") {
    CHECK((local_affine_at(f, 2, 2, 2) - Mat3::Identity()).norm() == 0.0);
    for (auto& u : f.u) u = Vec3(3.7, -1.2, 0.5);
    CHECK((local_affine_at(f, 0, 0, 0) - Mat3::Identity()).norm() == 0.0);
    CHECK((local_affine_at(f, 5, 4, 3) - Mat3::Identity()).norm() == 0.0);
  }
  SUBCASE("linear field recovers its matrix everywhere") {
    Mat3 m;
    m << 1.1, 0.2, -0.1, 0.05, 0.9, 0.15, -0.2, 0.1, 1.05;
    for (int z = 0; z < f.dims[2]; ++z) {
      for (int y = 0; y < f.dims[1]; ++y) {
        for (int x = 0; x < f.dims[0]; ++x) {
          const Vec3 p(x * f.voxel_size.x(), y * f.voxel_size.y(), z * f.voxel_size.z());
          f.at(x, y, z) = (m - Mat3::Identity()) * p;
        }
      }
    }
    for (auto [x, y, z] : {std::array<int, 3>{2, 2, 1}, std::array<int, 3>{0, 0, 0},
                           std::array<int, 3>{5, 4, 3}, std::array<int, 3>{5, 0, 2}}) {
      CHECK((local_affine_at(f, x, y, z) - m).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("out-of-range voxels are rejected") {
    CHECK_THROWS_AS(local_affine_at(f, -1, 0, 0), ValidationError);
    CHECK_THROWS_AS(local_affine_at(f, 0, 5, 0), ValidationError);
    CHECK_THROWS_AS(local_affine_at(f, 0, 0, 4), ValidationError);
  }
}

TEST_CASE("reorientation of coefficient vectors") {
  const auto basis = default_basis();
  REQUIRE(basis.directions.size() == 81);
  const Reorienter reo(6, basis);
  std::mt19937_64 eng(99);

  SUBCASE("identity is exact and non-positive determinants fall back") {
    const Eigen::VectorXd c = tensor_sh(Vec3(1, 0, 0), 0.7);
    const auto same = reo.apply(c, Mat3::Identity());
    CHECK(same.status == ReorientStatus::kOk);
    CHECK((same.values - c).norm() == 0.0);

    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    const auto flagged = reo.apply(c, flip);
    CHECK(flagged.status == ReorientStatus::kIdentityFallback);
    CHECK((flagged.values - c).norm() == 0.0);
  }
  SUBCASE("isotropic signals are fixed points of any valid affine") {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(28);
    c[0] = 0.8;
    for (int trial = 0; trial < 8; ++trial) {
      Mat3 a = oracle::random_rotation(eng);
      a(0, 1) += 0.3 * (trial % 3);  // add shear, keep det positive
      if (!(a.determinant() > 0)) continue;
      const auto r = reo.apply(c, a);
      CHECK(r.status == ReorientStatus::kOk);
      CHECK((r.values - c).norm() < 1e-12);
    }
  }
  SUBCASE("rotation acts on the signal as a rotation of its argument") {
    static const auto probe = sh::hemisphere_directions(sh::tessellate_sphere(2));
    for (int trial = 0; trial < 6; ++trial) {
      Eigen::VectorXd c = tensor_sh(oracle::random_unit_vector(eng), 0.5 + 0.08 * trial);
      if (trial % 2) c = 0.6 * c + 0.4 * tensor_sh(oracle::random_unit_vector(eng), 0.8);
      const Mat3 r = oracle::random_rotation(eng);
      const auto out = reo.apply(c, r);
      CHECK(out.status == ReorientStatus::kOk);
      double worst = 0;
      for (const Vec3& g : probe) {
        const double got = sh::eval_sh(out.values, g, 6);
        const double want = sh::eval_sh(c, (r.transpose() * g).normalized(), 6);
        worst = std::max(worst, std::abs(got - want));
      }
      CHECK(worst < 1e-10);
    }
  }
  SUBCASE("rotation round trip and composition") {
    for (int trial = 0; trial < 8; ++trial) {
      const Eigen::VectorXd c = tensor_sh(oracle::random_unit_vector(eng), 0.6);
      const Mat3 r1 = oracle::random_rotation(eng);
      const Mat3 r2 = oracle::random_rotation(eng);

      const auto fwd = reo.apply(c, r1);
      const auto back = reo.apply(fwd.values, r1.transpose());
      CHECK((back.values - c).norm() < 1e-4);
      CHECK((back.values - c).norm() < 1e-10);  // far below the contract

      const auto chained = reo.apply(fwd.values, r2);
      const auto direct = reo.apply(c, (r2 * r1).eval());
      CHECK((chained.values - direct.values).norm() < 1e-3);
    }
  }
  SUBCASE("signal energy is preserved within two percent") {
    for (int trial = 0; trial < 6; ++trial) {
      const Eigen::VectorXd c = tensor_sh(oracle::random_unit_vector(eng), 0.7);
      Mat3 a = oracle::random_rotation(eng);
      if (trial >= 3) {
        a(0, 1) += 0.05;
        a(2, 0) -= 0.05;
      }
      REQUIRE(a.determinant() > 0);
      const auto r = reo.apply(c, a);
      CHECK(std::abs(r.values.norm() - c.norm()) < 0.02 * c.norm());
    }
  }
  SUBCASE("ninety-degree rotation moves the main odf lobe ninety degrees") {
    static const auto fine = sh::tessellate_sphere(5);
    const Eigen::VectorXd c = tensor_sh(Vec3(1, 0, 0), 0.8);
    const auto r = reo.apply(c, rotation_z(90.0));
    const Vec3 peak = dominant_direction(frt(r.values), 6, fine);
    CHECK(axis_angle_deg(peak, Vec3(0, 1, 0)) < 3.0);
    const Vec3 before = dominant_direction(frt(c), 6, fine);
    CHECK(axis_angle_deg(before, Vec3(1, 0, 0)) < 3.0);
  }
  SUBCASE("rotation preserves closed-form gfa within 1e-3") {
    for (int trial = 0; trial < 6; ++trial) {
      const Eigen::VectorXd c = tensor_sh(oracle::random_unit_vector(eng), 0.75);
      const auto r = reo.apply(c, oracle::random_rotation(eng));
      const double g0 = qball::gfa_closed_form(frt(c));
      const double g1 = qball::gfa_closed_form(frt(r.values));
      CHECK(std::abs(g1 - g0) < 1e-3);
    }
  }
  SUBCASE("wrapper and mismatched sizes") {
    const Eigen::VectorXd c = tensor_sh(Vec3(0, 1, 0), 0.6);
    const Mat3 r = rotation_z(30.0);
    const auto a = reo.apply(c, r);
    const auto b = reorient_signal(c, 6, r, basis);
    CHECK((a.values - b.values).norm() == 0.0);
    CHECK_THROWS_AS(reo.apply(Eigen::VectorXd::Zero(10), r), ValidationError);
  }
}

TEST_CASE("warped coefficient fields") {
  Rng rng(7117);
  const std::array<int, 3> dims{8, 7, 5};
  const Vec3 vox(1.5, 1.2, 1.0);
  ShField src;
  src.l_max = 6;
  src.kind = ShKind::signal;
  src.lambda = 0.0;
  src.mask = MaskVolume(dims, 1, vox, 1);
  src.mask.at(3, 3, 2) = 0;
  src.coef = Volume<double>(dims, 28, vox, 0.0);
  for (auto& c : src.coef.data) c = rng.uniform(-0.5, 0.5);

  DisplacementField field;
  field.dims = dims;
  field.voxel_size = vox;
  field.u.assign(static_cast<std::size_t>(field.n_voxels()), Vec3::Zero());

  SUBCASE("zero field reproduces the input bitwise") {
    const WarpedField out = apply_warp(src, field);
    CHECK(out.field.mask.data == src.mask.data);
    const std::int64_t n_vox = src.coef.n_voxels();
    for (std::int64_t v = 0; v < n_vox; ++v) {
      if (!src.mask.data[static_cast<std::size_t>(v)]) continue;
      CHECK(out.status.data[static_cast<std::size_t>(v)] == 0);
      for (int j = 0; j < 28; ++j) {
        CHECK(out.field.coef.data[static_cast<std::size_t>(v + n_vox * j)] ==
              src.coef.data[static_cast<std::size_t>(v + n_vox * j)]);
      }
    }
  }
  SUBCASE("integer-voxel translation shifts bitwise and trims the boundary") {
    for (auto& u : field.u) u = Vec3(2 * vox.x(), 1 * vox.y(), 0.0);
    const WarpedField out = apply_warp(src, field);
    const std::int64_t n_vox = src.coef.n_voxels();
    for (int z = 0; z < dims[2]; ++z) {
      for (int y = 0; y < dims[1]; ++y) {
        for (int x = 0; x < dims[0]; ++x) {
          const int sx = x + 2, sy = y + 1;
          if (sx >= dims[0] || sy >= dims[1]) {
            CHECK(out.field.mask.at(x, y, z) == 0);
            continue;
          }
          CHECK(out.field.mask.at(x, y, z) == src.mask.at(sx, sy, z));
          if (!src.mask.at(sx, sy, z)) continue;
          for (int j = 0; j < 28; ++j) {
            CHECK(out.field.coef.at(x, y, z, j) == src.coef.at(sx, sy, z, j));
          }
        }
      }
    }
    (void)n_vox;
  }
  SUBCASE("folding regions fall back to unreoriented interpolation") {
    // x -> -0.5 x folds the map; only the x = 0 plane still lands in-grid
    for (int z = 0; z < dims[2]; ++z) {
      for (int y = 0; y < dims[1]; ++y) {
        for (int x = 0; x < dims[0]; ++x) {
          field.at(x, y, z) = Vec3(-1.5 * x * vox.x(), 0.0, 0.0);
        }
      }
    }
    const WarpedField out = apply_warp(src, field);
    for (int z = 0; z < dims[2]; ++z) {
      for (int y = 0; y < dims[1]; ++y) {
        if (!src.mask.at(0, y, z)) continue;
        CHECK(out.field.mask.at(0, y, z) == 1);
        CHECK(out.status.at(0, y, z) ==
              static_cast<std::int32_t>(ReorientStatus::kIdentityFallback));
        for (int j = 0; j < 28; ++j) {
          CHECK(out.field.coef.at(0, y, z, j) == src.coef.at(0, y, z, j));
        }
      }
    }
  }
}

TEST_CASE("global rotation field rotates every peak") {
  const std::array<int, 3> dims{10, 10, 6};
  const Vec3 vox(2.0, 2.0, 2.0);
  const Eigen::VectorXd c = tensor_sh(Vec3(1, 0, 0), 0.8);

  ShField src;
  src.l_max = 6;
  src.kind = ShKind::signal;
  src.mask = MaskVolume(dims, 1, vox, 1);
  src.coef = Volume<double>(dims, 28, vox, 0.0);
  const std::int64_t n_vox = src.coef.n_voxels();
  for (std::int64_t v = 0; v < n_vox; ++v) {
    for (int j = 0; j < 28; ++j) {
      src.coef.data[static_cast<std::size_t>(v + n_vox * j)] = c[j];
    }
  }

  const Mat3 r = rotation_z(30.0);
  const Vec3 center((dims[0] - 1) * 0.5 * vox.x(), (dims[1] - 1) * 0.5 * vox.y(),
                    (dims[2] - 1) * 0.5 * vox.z());
  DisplacementField field;
  field.dims = dims;
  field.voxel_size = vox;
  field.u.resize(static_cast<std::size_t>(n_vox));
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x) {
        const Vec3 p(x * vox.x(), y * vox.y(), z * vox.z());
        field.at(x, y, z) = r.transpose() * (p - center) + center - p;
      }
    }
  }

  const WarpedField out = apply_warp(src, field);
  static const auto fine = sh::tessellate_sphere(4);
  const Vec3 want = r * Vec3(1, 0, 0);
  std::vector<double> errors;
  for (std::int64_t v = 0; v < n_vox; v += 3) {
    if (!out.field.mask.data[static_cast<std::size_t>(v)]) continue;
    if (out.status.data[static_cast<std::size_t>(v)] != 0) continue;
    Eigen::VectorXd cv(28);
    for (int j = 0; j < 28; ++j) {
      cv[j] = out.field.coef.data[static_cast<std::size_t>(v + n_vox * j)];
    }
    errors.push_back(axis_angle_deg(dominant_direction(frt(cv), 6, fine), want));
  }
  REQUIRE(errors.size() > 20);
  std::sort(errors.begin(), errors.end());
  CHECK(errors[errors.size() / 2] < 5.0);

  SUBCASE("worker count does not change a single bit") {
    const WarpedField out4 = apply_warp(src, field, 4);
    CHECK(out4.field.coef.data == out.field.coef.data);
    CHECK(out4.field.mask.data == out.field.mask.data);
    CHECK(out4.status.data == out.status.data);
  }
}

TEST_CASE("warped raw dwi volumes") {
  const std::array<int, 3> dims{8, 8, 5};
  const Vec3 vox(2.0, 2.0, 2.0);
  const auto scheme = dwi::make_halfsphere_scheme(64, 2000.0, 2);

  DwiVolume src;
  src.scheme = scheme;
  src.data = Volume<double>(dims, scheme.size(), vox, 0.0);
  const double b = 2000.0, md = 0.7e-3, shape = 0.8;
  const double la = md * (1 + 2 * shape), lr = md * (1 - shape);
  const std::int64_t n_vox = src.data.n_voxels();
  for (int g = 0; g < scheme.size(); ++g) {
    double value = 1.0;
    if (scheme.bvals[static_cast<std::size_t>(g)] > 0) {
      const double cx = scheme.bvecs[static_cast<std::size_t>(g)].x();
      value = std::exp(-b * (lr + (la - lr) * cx * cx));
    }
    for (std::int64_t v = 0; v < n_vox; ++v) {
      src.data.data[static_cast<std::size_t>(v + n_vox * g)] = value;
    }
  }
  const MaskVolume mask = full_mask(dims, vox);

  SUBCASE("zero field is exact") {
    DisplacementField field;
    field.dims = dims;
    field.voxel_size = vox;
    field.u.assign(static_cast<std::size_t>(n_vox), Vec3::Zero());
    const WarpedDwi out = apply_warp_dwi(src, mask, field);
    CHECK(out.mask.data == mask.data);
    CHECK(out.data.data.data == src.data.data);
  }
  SUBCASE("rotation field rotates the fitted peaks, baselines untouched") {
    const Mat3 r = rotation_z(40.0);
    const Vec3 center((dims[0] - 1) * vox.x() / 2, (dims[1] - 1) * vox.y() / 2,
                      (dims[2] - 1) * vox.z() / 2);
    DisplacementField field;
    field.dims = dims;
    field.voxel_size = vox;
    field.u.resize(static_cast<std::size_t>(n_vox));
    for (int z = 0; z < dims[2]; ++z) {
      for (int y = 0; y < dims[1]; ++y) {
        for (int x = 0; x < dims[0]; ++x) {
          const Vec3 p(x * vox.x(), y * vox.y(), z * vox.z());
          field.at(x, y, z) = r.transpose() * (p - center) + center - p;
        }
      }
    }
    const WarpedDwi out = apply_warp_dwi(src, mask, field);
    const WarpedDwi out4 = apply_warp_dwi(src, mask, field, 4);
    CHECK(out4.data.data.data == out.data.data.data);

    const qball::QBallFitter fitter(scheme, {6, 0.0});
    static const auto fine = sh::tessellate_sphere(4);
    const Vec3 want = r * Vec3(1, 0, 0);
    std::vector<double> errors;
    const auto b0s = scheme.baseline_indices();
    for (std::int64_t v = 0; v < n_vox; v += 5) {
      if (!out.mask.data[static_cast<std::size_t>(v)]) continue;
      if (out.status.data[static_cast<std::size_t>(v)] != 0) continue;
      Eigen::VectorXd raw(scheme.size());
      for (int g = 0; g < scheme.size(); ++g) {
        raw[g] = out.data.data.data[static_cast<std::size_t>(v + n_vox * g)];
      }
      for (int ib : b0s) CHECK(raw[ib] == 1.0);
      const auto fit = fitter.fit_voxel(raw);
      REQUIRE(fit.valid);
      errors.push_back(
          axis_angle_deg(dominant_direction(frt(fit.coef.values), 6, fine), want));
    }
    REQUIRE(errors.size() > 10);
    std::sort(errors.begin(), errors.end());
    CHECK(errors[errors.size() / 2] < 5.0);
  }
}
