#pragma once

#include "odfatlas/common.hpp"
#include "odfatlas/gradient_scheme.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace odfatlas {

// Dense regular grid, x fastest:
//   index = x + nx * (y + ny * (z + nz * component))
// Components occupy the 4th dimension (gradient volumes, SH coefficients).
// Voxel centers sit at index * voxel_size mm.
template <typename T>
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 voxel_size{1.0, 1.0, 1.0};
  int ncomp = 1;
  std::vector<T> data;

  Volume() = default;
  Volume(std::array<int, 3> d, int components, Vec3 vox, T fill = T{})
      : dims(d), voxel_size(vox), ncomp(components) {
    if (d[0] < 1 || d[1] < 1 || d[2] < 1 || components < 1) {
      throw ValidationError("Volume: non-positive dimensions");
    }
    if (!(vox.x() > 0 && vox.y() > 0 && vox.z() > 0)) {
      throw ValidationError("Volume: non-positive voxel size");
    }
    data.assign(static_cast<std::size_t>(n_voxels()) * components, fill);
  }

  std::int64_t n_voxels() const {
    return std::int64_t{dims[0]} * dims[1] * dims[2];
  }
  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && x < dims[0] && y >= 0 && y < dims[1] && z >= 0 && z < dims[2];
  }

  std::int64_t voxel_index(int x, int y, int z) const {
    return x + std::int64_t{dims[0]} * (y + std::int64_t{dims[1]} * z);
  }

  T& at(int x, int y, int z, int c = 0) {
    return data[static_cast<std::size_t>(voxel_index(x, y, z) + n_voxels() * c)];
  }
  const T& at(int x, int y, int z, int c = 0) const {
    return data[static_cast<std::size_t>(voxel_index(x, y, z) + n_voxels() * c)];
  }

  Vec3 voxel_to_mm(double x, double y, double z) const {
    return Vec3(x * voxel_size.x(), y * voxel_size.y(), z * voxel_size.z());
  }
  Vec3 mm_to_voxel(const Vec3& p) const {
    return Vec3(p.x() / voxel_size.x(), p.y() / voxel_size.y(), p.z() / voxel_size.z());
  }
};

using ScalarVolume = Volume<double>;
using MaskVolume = Volume<std::uint8_t>;
using LabelVolume = Volume<std::int32_t>;

template <typename A, typename B>
bool same_grid(const Volume<A>& a, const Volume<B>& b) {
  return a.dims == b.dims && (a.voxel_size - b.voxel_size).cwiseAbs().maxCoeff() < 1e-9;
}

inline std::int64_t mask_count(const MaskVolume& m) {
  std::int64_t n = 0;
  for (auto v : m.data) n += (v != 0);
  return n;
}

// Mask covering the whole grid.
inline MaskVolume full_mask(std::array<int, 3> dims, Vec3 voxel_size) {
  return MaskVolume(dims, 1, voxel_size, 1);
}

struct DwiVolume {
  Volume<double> data;  // ncomp = scheme.size()
  dwi::GradientScheme scheme;
};

enum class ShKind { signal, odf };

inline std::string to_string(ShKind k) {
  return k == ShKind::signal ? "signal" : "odf";
}
inline ShKind sh_kind_from_string(const std::string& s) {
  if (s == "signal") return ShKind::signal;
  if (s == "odf") return ShKind::odf;
  throw ValidationError("unknown SH field kind: " + s);
}

// Per-voxel spherical-harmonic coefficient field.
struct ShField {
  Volume<double> coef;  // ncomp = number of coefficients
  MaskVolume mask;
  int l_max = 0;
  ShKind kind = ShKind::signal;
  double lambda = 0.0;  // regularization weight used at fit time
};

struct DisplacementField {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 voxel_size{1.0, 1.0, 1.0};
  std::vector<Vec3> u;  // mm, x fastest

  std::int64_t n_voxels() const {
    return std::int64_t{dims[0]} * dims[1] * dims[2];
  }
  std::int64_t voxel_index(int x, int y, int z) const {
    return x + std::int64_t{dims[0]} * (y + std::int64_t{dims[1]} * z);
  }
  Vec3& at(int x, int y, int z) {
    return u[static_cast<std::size_t>(voxel_index(x, y, z))];
  }
  const Vec3& at(int x, int y, int z) const {
    return u[static_cast<std::size_t>(voxel_index(x, y, z))];
  }
};

// Trilinear interpolation of one component at a continuous voxel coordinate,
// clamped to the grid. Integer coordinates reproduce the stored value exactly.
double trilinear(const Volume<double>& v, double x, double y, double z, int c = 0);

}  // namespace odfatlas
