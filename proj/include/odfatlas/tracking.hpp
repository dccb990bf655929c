#pragma once

#include "odfatlas/tessellation.hpp"
#include "odfatlas/volume.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace odfatlas::track {

struct Peak {
  Vec3 dir;  // unit, one representative per antipodal pair
  double amplitude = 0;
};

// Local maxima of the clamped-nonnegative sampled ODF, refined by one
// quadratic step on the tangent plane of the winning vertex.  Antipodal
// duplicates collapse through the separation rule; at most 3 peaks survive,
// sorted by descending amplitude.
class PeakExtractor {
 public:
  PeakExtractor(int l_max, const sh::Tessellation& tess);

  std::vector<Peak> find(const Eigen::VectorXd& odf_coef, double relative_threshold = 0.5,
                         double min_separation_deg = 25.0) const;

 private:
  int l_max_;
  std::vector<Vec3> vertices_;
  std::vector<std::vector<int>> neighbors_;
  Eigen::MatrixXd rows_;  // n_vertices x n_coef
};

std::vector<Peak> find_peaks(const Eigen::VectorXd& odf_coef, int l_max,
                             const sh::Tessellation& tess, double relative_threshold = 0.5,
                             double min_separation_deg = 25.0);

struct TrackingParams {
  double step_size = 1.0;         // mm
  double max_angle = 30.0;        // degrees between consecutive segments
  double gfa_threshold = 0.1;     // white-matter classification
  double max_length = 250.0;      // mm, split evenly across the two directions
  double min_length = 10.0;       // mm, whole-brain discard threshold
  int seeds_per_voxel = 1;
  double relative_threshold = 0.5;
  double min_separation = 25.0;   // degrees, peak extraction
};

enum class StopReason : std::int32_t {
  kAngle = 0,
  kMask = 1,
  kGfa = 2,
  kLength = 3,
  kBoundary = 4,
};
const char* to_string(StopReason r);

struct Streamline {
  std::vector<Vec3> points;  // mm, ordered backward end to forward end
  StopReason reason_fwd = StopReason::kMask;
  StopReason reason_bwd = StopReason::kMask;

  double path_length() const;
};

// Deterministic bidirectional peak-following on a precomputed peak field:
// first-order steps, nearest-voxel peaks, trilinear GFA.
class Tracker {
 public:
  Tracker(const ShField& odf, const ScalarVolume& gfa, TrackingParams params,
          int threads = 1);

  Streamline track(const Vec3& seed_mm) const;

  // One jittered seed stream per (voxel, repeat); streamlines shorter than
  // min_length are discarded; output order follows the seed order.
  std::vector<Streamline> track_all(std::uint64_t seed, int threads = 1) const;

  const std::vector<Peak>& peaks_at(std::int64_t voxel) const {
    return peaks_[static_cast<std::size_t>(voxel)];
  }
  const TrackingParams& params() const { return params_; }

 private:
  struct Half {
    std::vector<Vec3> points;
    StopReason reason;
  };
  Half march(const Vec3& seed, const Vec3& dir0) const;

  TrackingParams params_;
  std::array<int, 3> dims_;
  Vec3 vox_;
  MaskVolume mask_;
  ScalarVolume gfa_;
  std::vector<std::vector<Peak>> peaks_;
};

Streamline track_streamline(const Vec3& seed_mm, const ShField& odf,
                            const ScalarVolume& gfa, const TrackingParams& params);
std::vector<Streamline> whole_brain_track(const ShField& odf, const ScalarVolume& gfa,
                                          const TrackingParams& params,
                                          std::uint64_t seed = 0, int threads = 1);

// Little-endian binary container: magic, counts, voxel size, then per
// streamline a point count, the two stop reasons, and packed float32 points.
struct StreamlineSet {
  std::vector<Streamline> lines;
  Vec3 voxel_size = Vec3(1, 1, 1);
};
void save_streamlines(const std::string& path, const std::vector<Streamline>& lines,
                      const Vec3& voxel_size);
StreamlineSet load_streamlines(const std::string& path);

// One point per line, streamlines separated by blank lines.
void export_streamlines_text(const std::string& path,
                             const std::vector<Streamline>& lines);

}  // namespace odfatlas::track
