#include "odfatlas/volume.hpp"

#include <algorithm>
#include <cmath>

namespace odfatlas {

double trilinear(const Volume<double>& v, double x, double y, double z, int c) {
  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
  x = std::clamp(x, 0.0, static_cast<double>(nx - 1));
  y = std::clamp(y, 0.0, static_cast<double>(ny - 1));
  z = std::clamp(z, 0.0, static_cast<double>(nz - 1));

  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
  const double tx = x - fx, ty = y - fy, tz = z - fz;

  // exactly on a grid point: return the stored value bit for bit
  if (tx == 0.0 && ty == 0.0 && tz == 0.0) {
    return v.at(x0, y0, z0, c);
  }

  const int x1 = std::min(x0 + 1, nx - 1);
  const int y1 = std::min(y0 + 1, ny - 1);
  const int z1 = std::min(z0 + 1, nz - 1);

  const double c00 = v.at(x0, y0, z0, c) * (1 - tx) + v.at(x1, y0, z0, c) * tx;
  const double c10 = v.at(x0, y1, z0, c) * (1 - tx) + v.at(x1, y1, z0, c) * tx;
  const double c01 = v.at(x0, y0, z1, c) * (1 - tx) + v.at(x1, y0, z1, c) * tx;
  const double c11 = v.at(x0, y1, z1, c) * (1 - tx) + v.at(x1, y1, z1, c) * tx;
  const double c0 = c00 * (1 - ty) + c10 * ty;
  const double c1 = c01 * (1 - ty) + c11 * ty;
  return c0 * (1 - tz) + c1 * tz;
}

}  // namespace odfatlas
