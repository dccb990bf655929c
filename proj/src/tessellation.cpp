#include "odfatlas/tessellation.hpp"

#include "odfatlas/sh_basis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace odfatlas::sh {

namespace {

constexpr double kPi = 3.14159265358979323846;

void icosahedron(std::vector<Vec3>& verts, std::vector<std::array<int, 3>>& faces) {
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  const double n = std::sqrt(1.0 + p * p);
  const double a = 1.0 / n;
  const double b = p / n;
  verts = {
      {-a, b, 0},  {a, b, 0},  {-a, -b, 0}, {a, -b, 0}, {0, -a, b},  {0, a, b},
      {0, -a, -b}, {0, a, -b}, {b, 0, -a},  {b, 0, a},  {-b, 0, -a}, {-b, 0, a},
  };
  faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
           {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
           {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
           {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
}

double spherical_triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  // l'Huilier's theorem; stable for small triangles.
  auto arc = [](const Vec3& u, const Vec3& v) { return std::atan2(u.cross(v).norm(), u.dot(v)); };
  const double la = arc(b, c), lb = arc(c, a), lc = arc(a, b);
  const double s = 0.5 * (la + lb + lc);
  const double t = std::tan(0.5 * s) * std::tan(0.5 * (s - la)) * std::tan(0.5 * (s - lb)) *
                   std::tan(0.5 * (s - lc));
  return 4.0 * std::atan(std::sqrt(std::max(0.0, t)));
}

}  // namespace

Tessellation tessellate_sphere(int level) {
  if (level < 0 || level > 6) throw ValidationError("tessellate_sphere: level must be in [0, 6]");

  Tessellation t;
  t.level = level;
  icosahedron(t.vertices, t.faces);

  for (int k = 0; k < level; ++k) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int i, int j) {
      const auto key = std::minmax(i, j);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      const Vec3 m = (t.vertices[i] + t.vertices[j]).normalized();
      const int idx = static_cast<int>(t.vertices.size());
      t.vertices.push_back(m);
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(t.faces.size() * 4);
    for (const auto& f : t.faces) {
      const int ab = mid(f[0], f[1]);
      const int bc = mid(f[1], f[2]);
      const int ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({ab, f[1], bc});
      next.push_back({ca, bc, f[2]});
      next.push_back({ab, bc, ca});
    }
    t.faces = std::move(next);
  }

  std::vector<std::set<int>> adj(t.vertices.size());
  for (const auto& f : t.faces)
    for (int e = 0; e < 3; ++e) {
      adj[f[e]].insert(f[(e + 1) % 3]);
      adj[f[e]].insert(f[(e + 2) % 3]);
    }
  t.neighbors.resize(t.vertices.size());
  for (std::size_t i = 0; i < adj.size(); ++i)
    t.neighbors[i].assign(adj[i].begin(), adj[i].end());
  return t;
}

std::vector<int> antipode_index(const Tessellation& t) {
  struct Less {
    bool operator()(const Vec3& a, const Vec3& b) const {
      if (a.x() != b.x()) return a.x() < b.x();
      if (a.y() != b.y()) return a.y() < b.y();
      return a.z() < b.z();
    }
  };
  std::map<Vec3, int, Less> lookup;
  for (std::size_t i = 0; i < t.vertices.size(); ++i)
    lookup.emplace(t.vertices[i], static_cast<int>(i));

  std::vector<int> anti(t.vertices.size(), -1);
  for (std::size_t i = 0; i < t.vertices.size(); ++i) {
    const auto it = lookup.find(Vec3(-t.vertices[i]));
    if (it == lookup.end())
      throw NumericalError("antipode_index: vertex set not antipodally closed");
    anti[i] = it->second;
  }
  return anti;
}

std::vector<Vec3> hemisphere_directions(const Tessellation& t) {
  std::vector<Vec3> out;
  out.reserve(t.vertices.size() / 2);
  for (const auto& v : t.vertices) {
    const bool keep = v.z() > 0.0 || (v.z() == 0.0 && (v.x() > 0.0 || (v.x() == 0.0 && v.y() > 0.0)));
    if (keep) out.push_back(v);
  }
  return out;
}

Eigen::VectorXd quadrature_weights(const Tessellation& t, int exact_order) {
  const auto n = static_cast<Eigen::Index>(t.vertices.size());

  // Area weights: a third of every adjacent face's spherical area.
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (const auto& f : t.faces) {
    const double a = spherical_triangle_area(t.vertices[f[0]], t.vertices[f[1]], t.vertices[f[2]]);
    for (int e = 0; e < 3; ++e) w(f[e]) += a / 3.0;
  }

  if (exact_order < 2) return w;

  // Minimum-norm correction: enforce sum_v w_v Ytilde_j(v) = integral of
  // Ytilde_j for every even j up to exact_order. Products of two band-limited
  // even functions are then integrated exactly once exact_order covers twice
  // their band limit.
  const int nc = coef_count(exact_order);
  Eigen::MatrixXd basis(nc, n);
  for (Eigen::Index v = 0; v < n; ++v)
    basis.col(v) = eval_basis_row(t.vertices[static_cast<std::size_t>(v)], exact_order);
  Eigen::VectorXd target = Eigen::VectorXd::Zero(nc);
  target(0) = std::sqrt(4.0 * kPi);

  const Eigen::VectorXd defect = target - basis * w;
  const Eigen::MatrixXd gram = basis * basis.transpose();
  w += basis.transpose() * gram.ldlt().solve(defect);
  return w;
}

}  // namespace odfatlas::sh
