#include "odfatlas/gradient_scheme.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

using namespace odfatlas;
using namespace odfatlas::dwi;

TEST_CASE("halfsphere scheme has expected layout") {
  const GradientScheme s = make_halfsphere_scheme(64, 2000.0);
  CHECK(s.size() == 65);
  CHECK(s.baseline_indices() == std::vector<int>{0});
  CHECK(s.dwi_indices().size() == 64);
  CHECK(s.shell_bvalue() == doctest::Approx(2000.0));
  for (int i : s.dwi_indices()) {
    CHECK(s.bvals[i] == doctest::Approx(2000.0));
    CHECK(s.bvecs[i].norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.bvecs[i].z() > 0.0);
  }
  // deterministic: same call, same directions
  const GradientScheme s2 = make_halfsphere_scheme(64, 2000.0);
  for (int i = 0; i < s.size(); ++i) {
    CHECK(s.bvecs[i] == s2.bvecs[i]);
  }
}

TEST_CASE("halfsphere directions are well spread") {
  const GradientScheme s = make_halfsphere_scheme(64, 2000.0);
  const auto dirs = s.dwi_directions();
  double min_sep = 10.0;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    for (std::size_t j = i + 1; j < dirs.size(); ++j) {
      min_sep = std::min(min_sep, (dirs[i] - dirs[j]).norm());
    }
  }
  // golden-angle spiral on 64 directions keeps neighbors > 10 degrees apart
  CHECK(min_sep > 0.17);
}

TEST_CASE("scheme validation rejects bad input") {
  std::vector<double> bvals{0.0, 2000.0};
  std::vector<Vec3> bvecs{Vec3::Zero(), Vec3(0.0, 0.0, 1.0)};

  CHECK_NOTHROW(validate_scheme(bvals, bvecs));

  SUBCASE("length mismatch") {
    bvals.push_back(2000.0);
    CHECK_THROWS_AS(validate_scheme(bvals, bvecs), ValidationError);
  }
  SUBCASE("non-unit direction") {
    bvecs[1] = Vec3(0.5, 0.0, 0.0);
    CHECK_THROWS_AS(validate_scheme(bvals, bvecs), ValidationError);
  }
  SUBCASE("negative b-value") {
    bvals[1] = -100.0;
    CHECK_THROWS_AS(validate_scheme(bvals, bvecs), ValidationError);
  }
  SUBCASE("no baseline") {
    bvals[0] = 2000.0;
    bvecs[0] = Vec3(1.0, 0.0, 0.0);
    CHECK_THROWS_AS(validate_scheme(bvals, bvecs), ValidationError);
  }
  SUBCASE("zero direction on a diffusion volume") {
    bvecs[1] = Vec3::Zero();
    CHECK_THROWS_AS(validate_scheme(bvals, bvecs), ValidationError);
  }
}

TEST_CASE("near-unit directions are renormalized") {
  const Vec3 g = Vec3(0.0, 0.0, 1.0005);
  const GradientScheme s =
      validate_scheme({0.0, 2000.0}, {Vec3::Zero(), g});
  CHECK(s.bvecs[1].norm() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(s.bvecs[1].z() > 0.999);
}

TEST_CASE("fsl files round trip") {
  const GradientScheme s = make_halfsphere_scheme(30, 1500.0, 2);
  const auto dir = std::filesystem::temp_directory_path() / "odfatlas_scheme_test";
  std::filesystem::create_directories(dir);
  const std::string bvals_path = (dir / "test.bval").string();
  const std::string bvecs_path = (dir / "test.bvec").string();

  save_fsl_scheme(s, bvals_path, bvecs_path);
  const GradientScheme r = load_fsl_scheme(bvals_path, bvecs_path);

  REQUIRE(r.size() == s.size());
  for (int i = 0; i < s.size(); ++i) {
    CHECK(r.bvals[i] == s.bvals[i]);
    CHECK(r.bvecs[i] == s.bvecs[i]);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("fsl loader reports malformed files") {
  const auto dir = std::filesystem::temp_directory_path() / "odfatlas_scheme_bad";
  std::filesystem::create_directories(dir);
  const std::string bvals_path = (dir / "bad.bval").string();
  const std::string bvecs_path = (dir / "bad.bvec").string();

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_fsl_scheme((dir / "nope.bval").string(), bvecs_path), IoError);
  }
  SUBCASE("non-numeric token") {
    {
      std::FILE* f = std::fopen(bvals_path.c_str(), "w");
      std::fputs("0 2000 abc\n", f);
      std::fclose(f);
      std::FILE* g = std::fopen(bvecs_path.c_str(), "w");
      std::fputs("0 1 0\n0 0 1\n0 0 0\n", g);
      std::fclose(g);
    }
    CHECK_THROWS_AS(load_fsl_scheme(bvals_path, bvecs_path), IoError);
  }
  SUBCASE("bvecs row count") {
    {
      std::FILE* f = std::fopen(bvals_path.c_str(), "w");
      std::fputs("0 2000\n", f);
      std::fclose(f);
      std::FILE* g = std::fopen(bvecs_path.c_str(), "w");
      std::fputs("0 1\n0 0\n", g);
      std::fclose(g);
    }
    CHECK_THROWS_AS(load_fsl_scheme(bvals_path, bvecs_path), IoError);
  }
  std::filesystem::remove_all(dir);
}
