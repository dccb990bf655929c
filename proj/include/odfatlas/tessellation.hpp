#pragma once

#include "odfatlas/common.hpp"

#include <array>
#include <vector>

namespace odfatlas::sh {

// Subdivided icosahedron projected to the unit sphere. Vertex order is
// deterministic; the vertex set is exactly closed under antipodal reflection
// (the seed icosahedron is centrally symmetric and edge midpoints inherit it).
struct Tessellation {
  int level = 0;
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::vector<int>> neighbors;  // 1-ring adjacency, sorted
};

// level k has 10*4^k + 2 vertices; level <= 6.
Tessellation tessellate_sphere(int level);

// antipode[i] = index of the vertex at -vertices[i].
std::vector<int> antipode_index(const Tessellation& t);

// One representative per antipodal pair (z > 0, ties broken by x then y).
std::vector<Vec3> hemisphere_directions(const Tessellation& t);

// Per-vertex quadrature weights: spherical-triangle area weights corrected by
// a minimum-norm update so that all even-order basis functions up to
// `exact_order` integrate exactly. Weights sum to 4*pi.
Eigen::VectorXd quadrature_weights(const Tessellation& t, int exact_order);

}  // namespace odfatlas::sh
