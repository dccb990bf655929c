#include "odfatlas/tracking.hpp"

#include "odfatlas/sh_basis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <utility>

namespace odfatlas::track {

namespace {

constexpr double kDeg = 180.0 / M_PI;

double axis_separation_deg(const Vec3& a, const Vec3& b) {
  const double c = std::min(1.0, std::abs(a.dot(b)));
  return std::acos(c) * kDeg;
}

// Representative sign for an axis: z > 0, ties broken by x then y.
Vec3 canonical_axis(const Vec3& v) {
  if (v.z() > 0) return v;
  if (v.z() < 0) return -v;
  if (v.x() > 0) return v;
  if (v.x() < 0) return -v;
  return v.y() >= 0 ? v : -v;
}

void check_params(const TrackingParams& p) {
  if (!(p.step_size > 0) || !std::isfinite(p.step_size)) {
    throw ValidationError("tracking: step size must be positive");
  }
  if (!(p.max_angle > 0) || !(p.max_angle < 90)) {
    throw ValidationError("tracking: max angle must lie in (0, 90) degrees");
  }
  if (!(p.gfa_threshold >= 0) || !std::isfinite(p.gfa_threshold)) {
    throw ValidationError("tracking: GFA threshold must be non-negative");
  }
  if (!(p.max_length > 0) || !std::isfinite(p.max_length)) {
    throw ValidationError("tracking: max length must be positive");
  }
  if (!(p.min_length >= 0)) {
    throw ValidationError("tracking: min length must be non-negative");
  }
  if (p.seeds_per_voxel < 1) {
    throw ValidationError("tracking: seeds per voxel must be at least 1");
  }
  if (!(p.relative_threshold > 0) || !(p.relative_threshold <= 1)) {
    throw ValidationError("tracking: relative peak threshold must lie in (0, 1]");
  }
  if (!(p.min_separation >= 0) || !(p.min_separation <= 180)) {
    throw ValidationError("tracking: peak separation must lie in [0, 180] degrees");
  }
}

template <typename T>
void put_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

constexpr char kMagic[8] = {'O', 'D', 'F', 'T', 'R', 'K', '0', '1'};

}  // namespace

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::kAngle: return "angle";
    case StopReason::kMask: return "mask";
    case StopReason::kGfa: return "gfa";
    case StopReason::kLength: return "length";
    case StopReason::kBoundary: return "boundary";
  }
  return "unknown";
}

double Streamline::path_length() const {
  double len = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    len += (points[i] - points[i - 1]).norm();
  }
  return len;
}

PeakExtractor::PeakExtractor(int l_max, const sh::Tessellation& tess)
    : l_max_(l_max), vertices_(tess.vertices), neighbors_(tess.neighbors) {
  if (l_max < 0 || l_max % 2 != 0) {
    throw ValidationError("peak extraction: order must be even and non-negative");
  }
  const int nc = sh::coef_count(l_max);
  rows_.resize(static_cast<Eigen::Index>(vertices_.size()), nc);
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    rows_.row(static_cast<Eigen::Index>(i)) = sh::eval_basis_row(vertices_[i], l_max);
  }
}

std::vector<Peak> PeakExtractor::find(const Eigen::VectorXd& odf_coef,
                                      double relative_threshold,
                                      double min_separation_deg) const {
  if (odf_coef.size() != rows_.cols()) {
    throw ValidationError("peak extraction: coefficient count does not match the order");
  }
  if (!(relative_threshold > 0) || !(relative_threshold <= 1)) {
    throw ValidationError("peak extraction: relative threshold must lie in (0, 1]");
  }
  if (!(min_separation_deg >= 0) || !(min_separation_deg <= 180)) {
    throw ValidationError("peak extraction: separation must lie in [0, 180] degrees");
  }

  const Eigen::VectorXd raw = rows_ * odf_coef;
  const std::size_t n = vertices_.size();
  std::vector<double> clamped(n);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = raw[static_cast<Eigen::Index>(i)];
    if (!std::isfinite(v)) {
      throw NumericalError("peak extraction: non-finite ODF sample");
    }
    clamped[i] = std::max(v, 0.0);
    lo = std::min(lo, clamped[i]);
    hi = std::max(hi, clamped[i]);
  }
  // A flat (or fully non-positive) ODF carries no direction.
  if (hi <= 0 || hi - lo <= 1e-12 * hi) return {};

  struct Candidate {
    Vec3 dir;
    double amplitude;
    std::size_t vertex;
  };
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < n; ++i) {
    bool is_max = clamped[i] > 0;
    for (int j : neighbors_[i]) {
      const double d = clamped[i] - clamped[static_cast<std::size_t>(j)];
      if (d < 0 || (d == 0 && static_cast<std::size_t>(j) < i)) {
        is_max = false;
        break;
      }
    }
    if (!is_max) continue;

    // One quadratic step on the tangent plane through the 1-ring, using the
    // unclamped samples; keep the vertex when the step leaves the ring or
    // fails to improve.
    const Vec3& v = vertices_[i];
    Vec3 pick = std::abs(v.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    const Vec3 e1 = v.cross(pick).normalized();
    const Vec3 e2 = v.cross(e1);

    const auto& ring = neighbors_[i];
    const int npts = static_cast<int>(ring.size()) + 1;
    Eigen::MatrixXd design(npts, 6);
    Eigen::VectorXd vals(npts);
    design.row(0) << 1, 0, 0, 0, 0, 0;
    vals[0] = raw[static_cast<Eigen::Index>(i)];
    double radius2 = 0;
    bool usable = true;
    for (int k = 0; k < npts - 1; ++k) {
      const Vec3& nb = vertices_[static_cast<std::size_t>(ring[static_cast<std::size_t>(k)])];
      const double s = nb.dot(v);
      if (s <= 0.1) {
        usable = false;
        break;
      }
      const Vec3 p = nb / s - v;  // gnomonic offset in the tangent plane
      const double px = p.dot(e1);
      const double py = p.dot(e2);
      design.row(k + 1) << 1, px, py, px * px, px * py, py * py;
      vals[k + 1] = raw[static_cast<Eigen::Index>(ring[static_cast<std::size_t>(k)])];
      radius2 = std::max(radius2, px * px + py * py);
    }

    Vec3 dir = v;
    double amp = clamped[i];
    if (usable && npts >= 6) {
      const Eigen::VectorXd c = design.colPivHouseholderQr().solve(vals);
      const Eigen::Vector2d g(c[1], c[2]);
      Eigen::Matrix2d h;
      h << 2 * c[3], c[4], c[4], 2 * c[5];
      const double det = h.determinant();
      if (std::abs(det) > 1e-14) {
        const Eigen::Vector2d t = h.inverse() * (-g);
        if (t.squaredNorm() <= radius2) {
          const Vec3 refined = (v + t[0] * e1 + t[1] * e2).normalized();
          const double a = sh::eval_sh(odf_coef, refined, l_max_);
          if (a >= amp) {
            dir = refined;
            amp = a;
          }
        }
      }
    }
    cands.push_back({canonical_axis(dir), std::max(amp, 0.0), i});
  }

  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.amplitude != b.amplitude) return a.amplitude > b.amplitude;
    return a.vertex < b.vertex;
  });

  std::vector<Peak> peaks;
  if (cands.empty()) return peaks;
  const double floor = relative_threshold * cands.front().amplitude;
  for (const Candidate& c : cands) {
    if (peaks.size() == 3) break;
    if (c.amplitude < floor) break;
    bool separated = true;
    for (const Peak& p : peaks) {
      if (axis_separation_deg(c.dir, p.dir) < min_separation_deg) {
        separated = false;
        break;
      }
    }
    if (separated) peaks.push_back({c.dir, c.amplitude});
  }
  return peaks;
}

std::vector<Peak> find_peaks(const Eigen::VectorXd& odf_coef, int l_max,
                             const sh::Tessellation& tess, double relative_threshold,
                             double min_separation_deg) {
  return PeakExtractor(l_max, tess).find(odf_coef, relative_threshold, min_separation_deg);
}

Tracker::Tracker(const ShField& odf, const ScalarVolume& gfa, TrackingParams params,
                 int threads)
    : params_(params), dims_(odf.coef.dims), vox_(odf.coef.voxel_size),
      mask_(odf.mask), gfa_(gfa) {
  check_params(params_);
  if (odf.kind != ShKind::odf) {
    throw ValidationError("tracking: field must hold ODF coefficients");
  }
  if (!same_grid(odf.coef, gfa)) {
    throw ValidationError("tracking: GFA grid does not match the ODF grid");
  }
  if (gfa.ncomp != 1) {
    throw ValidationError("tracking: GFA volume must be scalar");
  }
  if (odf.coef.ncomp != sh::coef_count(odf.l_max)) {
    throw ValidationError("tracking: coefficient count does not match the order");
  }

  const sh::Tessellation tess = sh::tessellate_sphere(3);
  const PeakExtractor extractor(odf.l_max, tess);
  const std::int64_t nvox = odf.coef.n_voxels();
  const int nc = odf.coef.ncomp;
  peaks_.resize(static_cast<std::size_t>(nvox));
  parallel_for_index(nvox, threads, [&](std::int64_t v) {
    if (!mask_.data[static_cast<std::size_t>(v)]) return;
    Eigen::VectorXd c(nc);
    for (int k = 0; k < nc; ++k) {
      c[k] = odf.coef.data[static_cast<std::size_t>(v + nvox * k)];
    }
    peaks_[static_cast<std::size_t>(v)] =
        extractor.find(c, params_.relative_threshold, params_.min_separation);
  });
}

Tracker::Half Tracker::march(const Vec3& seed, const Vec3& dir0) const {
  const double hi_x = (dims_[0] - 1) * vox_.x();
  const double hi_y = (dims_[1] - 1) * vox_.y();
  const double hi_z = (dims_[2] - 1) * vox_.z();
  const auto inside = [&](const Vec3& p) {
    return p.x() >= 0 && p.x() <= hi_x && p.y() >= 0 && p.y() <= hi_y &&
           p.z() >= 0 && p.z() <= hi_z;
  };
  const double cos_limit = std::cos(params_.max_angle * M_PI / 180.0);
  const auto max_steps =
      static_cast<std::int64_t>(std::floor(params_.max_length / (2 * params_.step_size)));

  Half half;
  Vec3 p = seed;
  Vec3 dir = dir0;
  for (std::int64_t s = 0;; ++s) {
    if (s >= max_steps) {
      half.reason = StopReason::kLength;
      return half;
    }
    const Vec3 q = p + params_.step_size * dir;
    if (!inside(q)) {
      half.reason = StopReason::kBoundary;
      return half;
    }
    const int ix = static_cast<int>(std::lround(q.x() / vox_.x()));
    const int iy = static_cast<int>(std::lround(q.y() / vox_.y()));
    const int iz = static_cast<int>(std::lround(q.z() / vox_.z()));
    const std::int64_t v = mask_.voxel_index(ix, iy, iz);
    if (!mask_.data[static_cast<std::size_t>(v)]) {
      half.reason = StopReason::kMask;
      return half;
    }
    if (trilinear(gfa_, q.x() / vox_.x(), q.y() / vox_.y(), q.z() / vox_.z()) <
        params_.gfa_threshold) {
      half.reason = StopReason::kGfa;
      return half;
    }
    half.points.push_back(q);

    const auto& pk = peaks_[static_cast<std::size_t>(v)];
    if (pk.empty()) {
      half.reason = StopReason::kMask;
      return half;
    }
    // Continue along the peak most parallel to the heading, sign matched.
    int best = 0;
    double best_cos = -1;
    for (std::size_t k = 0; k < pk.size(); ++k) {
      const double c = std::abs(dir.dot(pk[k].dir));
      if (c > best_cos) {
        best_cos = c;
        best = static_cast<int>(k);
      }
    }
    if (best_cos < cos_limit) {
      half.reason = StopReason::kAngle;
      return half;
    }
    dir = dir.dot(pk[static_cast<std::size_t>(best)].dir) >= 0
              ? pk[static_cast<std::size_t>(best)].dir
              : -pk[static_cast<std::size_t>(best)].dir;
    p = q;
  }
}

Streamline Tracker::track(const Vec3& seed_mm) const {
  Streamline out;
  const double hi_x = (dims_[0] - 1) * vox_.x();
  const double hi_y = (dims_[1] - 1) * vox_.y();
  const double hi_z = (dims_[2] - 1) * vox_.z();
  if (!(seed_mm.x() >= 0 && seed_mm.x() <= hi_x && seed_mm.y() >= 0 &&
        seed_mm.y() <= hi_y && seed_mm.z() >= 0 && seed_mm.z() <= hi_z)) {
    out.reason_fwd = out.reason_bwd = StopReason::kBoundary;
    return out;
  }
  const int ix = static_cast<int>(std::lround(seed_mm.x() / vox_.x()));
  const int iy = static_cast<int>(std::lround(seed_mm.y() / vox_.y()));
  const int iz = static_cast<int>(std::lround(seed_mm.z() / vox_.z()));
  const std::int64_t v = mask_.voxel_index(ix, iy, iz);
  if (!mask_.data[static_cast<std::size_t>(v)]) {
    out.reason_fwd = out.reason_bwd = StopReason::kMask;
    return out;
  }
  if (trilinear(gfa_, seed_mm.x() / vox_.x(), seed_mm.y() / vox_.y(),
                seed_mm.z() / vox_.z()) < params_.gfa_threshold) {
    out.reason_fwd = out.reason_bwd = StopReason::kGfa;
    return out;
  }
  const auto& pk = peaks_[static_cast<std::size_t>(v)];
  if (pk.empty()) {
    out.reason_fwd = out.reason_bwd = StopReason::kMask;
    return out;
  }

  const Vec3 d0 = pk.front().dir;
  const Half fwd = march(seed_mm, d0);
  const Half bwd = march(seed_mm, -d0);

  out.points.reserve(fwd.points.size() + bwd.points.size() + 1);
  out.points.assign(bwd.points.rbegin(), bwd.points.rend());
  out.points.push_back(seed_mm);
  out.points.insert(out.points.end(), fwd.points.begin(), fwd.points.end());
  out.reason_fwd = fwd.reason;
  out.reason_bwd = bwd.reason;
  return out;
}

std::vector<Streamline> Tracker::track_all(std::uint64_t seed, int threads) const {
  std::vector<std::pair<std::int64_t, int>> seeds;
  const std::int64_t nvox = mask_.n_voxels();
  for (std::int64_t v = 0; v < nvox; ++v) {
    if (!mask_.data[static_cast<std::size_t>(v)]) continue;
    if (gfa_.data[static_cast<std::size_t>(v)] < params_.gfa_threshold) continue;
    for (int s = 0; s < params_.seeds_per_voxel; ++s) seeds.emplace_back(v, s);
  }

  std::vector<Streamline> all(seeds.size());
  parallel_for_index(static_cast<std::int64_t>(seeds.size()), threads,
                     [&](std::int64_t i) {
    const auto [v, rep] = seeds[static_cast<std::size_t>(i)];
    const int x = static_cast<int>(v % dims_[0]);
    const int y = static_cast<int>((v / dims_[0]) % dims_[1]);
    const int z = static_cast<int>(v / (std::int64_t{dims_[0]} * dims_[1]));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(v),
                        static_cast<std::uint64_t>(rep)));
    const double jx = rng.uniform(-0.5, 0.5);
    const double jy = rng.uniform(-0.5, 0.5);
    const double jz = rng.uniform(-0.5, 0.5);
    const Vec3 p((x + jx) * vox_.x(), (y + jy) * vox_.y(), (z + jz) * vox_.z());
    all[static_cast<std::size_t>(i)] = track(p);
  });

  std::vector<Streamline> kept;
  kept.reserve(all.size());
  for (auto& line : all) {
    if (line.path_length() >= params_.min_length) kept.push_back(std::move(line));
  }
  return kept;
}

Streamline track_streamline(const Vec3& seed_mm, const ShField& odf,
                            const ScalarVolume& gfa, const TrackingParams& params) {
  return Tracker(odf, gfa, params).track(seed_mm);
}

std::vector<Streamline> whole_brain_track(const ShField& odf, const ScalarVolume& gfa,
                                          const TrackingParams& params,
                                          std::uint64_t seed, int threads) {
  return Tracker(odf, gfa, params, threads).track_all(seed, threads);
}

void save_streamlines(const std::string& path, const std::vector<Streamline>& lines,
                      const Vec3& voxel_size) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  put_raw(os, static_cast<std::uint32_t>(lines.size()));
  std::uint64_t total = 0;
  for (const auto& l : lines) total += l.points.size();
  put_raw(os, total);
  for (int a = 0; a < 3; ++a) put_raw(os, voxel_size[a]);
  for (const auto& l : lines) {
    put_raw(os, static_cast<std::uint32_t>(l.points.size()));
    put_raw(os, static_cast<std::int32_t>(l.reason_fwd));
    put_raw(os, static_cast<std::int32_t>(l.reason_bwd));
    for (const auto& p : l.points) {
      for (int a = 0; a < 3; ++a) put_raw(os, static_cast<float>(p[a]));
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

StreamlineSet load_streamlines(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a streamline container: " + path);
  }
  const auto count = get_raw<std::uint32_t>(is);
  const auto total = get_raw<std::uint64_t>(is);
  StreamlineSet set;
  for (int a = 0; a < 3; ++a) set.voxel_size[a] = get_raw<double>(is);
  set.lines.resize(count);
  std::uint64_t seen = 0;
  for (auto& l : set.lines) {
    const auto n = get_raw<std::uint32_t>(is);
    const auto rf = get_raw<std::int32_t>(is);
    const auto rb = get_raw<std::int32_t>(is);
    if (!is || rf < 0 || rf > 4 || rb < 0 || rb > 4) {
      throw IoError("corrupt streamline container: " + path);
    }
    l.reason_fwd = static_cast<StopReason>(rf);
    l.reason_bwd = static_cast<StopReason>(rb);
    l.points.resize(n);
    for (auto& p : l.points) {
      for (int a = 0; a < 3; ++a) p[a] = get_raw<float>(is);
    }
    seen += n;
  }
  if (!is || seen != total) {
    throw IoError("corrupt streamline container: " + path);
  }
  return set;
}

void export_streamlines_text(const std::string& path,
                             const std::vector<Streamline>& lines) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.precision(6);
  os << std::fixed;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) os << "\n";
    for (const auto& p : lines[i].points) {
      os << p.x() << " " << p.y() << " " << p.z() << "\n";
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace odfatlas::track
