#pragma once

#include "odfatlas/qball.hpp"
#include "odfatlas/tensor.hpp"
#include "odfatlas/volume.hpp"

#include <array>
#include <string>
#include <vector>

namespace odfatlas::phantom {

// Maps the prolate-tensor shape parameter s (axial = md(1+2s), radial =
// md(1-s)) to the GFA the reconstruction pipeline reports for a noiseless
// single-tensor voxel, and back. Monotone by construction.
class GfaShapeLut {
public:
  GfaShapeLut(const dwi::GradientScheme& scheme, const qball::QBallConfig& cfg,
              double md, double max_shape = 0.95, int n_samples = 96);

  double gfa_for_shape(double s) const;
  // Inverse by linear interpolation; target clamped to the representable range.
  double shape_for_gfa(double g) const;
  double min_gfa() const { return gfa_.front(); }
  double max_gfa() const { return gfa_.back(); }

private:
  std::vector<double> shape_;
  std::vector<double> gfa_;
};

struct PhantomRegion {
  std::string name;
  std::array<int, 3> lo{0, 0, 0};  // inclusive voxel corner
  std::array<int, 3> hi{0, 0, 0};  // exclusive voxel corner
  double base_gfa = 0.3;           // anisotropy at t = 0 months
  double slope_gfa = 0.0;          // anisotropy change per month
  Vec3 axis{1.0, 0.0, 0.0};
};

struct PhantomSpec {
  std::array<int, 3> dims{32, 32, 32};
  Vec3 voxel_size{2.0, 2.0, 2.0};
  int n_subjects = 14;
  int min_sessions = 2;
  int max_sessions = 3;
  double age_min = 3.0;   // months
  double age_max = 36.0;  // months
  std::vector<PhantomRegion> regions;
  double subject_spread = 0.02;  // random-intercept spread, GFA units
  double noise_sigma = 0.0;      // additive Gaussian noise on raw intensities
  bool rician = false;           // reserved; only the Gaussian model is implemented
  double md = 0.7e-3;
  double s0 = 100.0;
  dwi::GradientScheme scheme;  // empty -> 64-direction b=2000 default
  qball::QBallConfig recon{};  // used for the GFA calibration
  std::uint64_t seed = 0;
};

// Genu/body/splenium-analog slabs with the splenium starting highest and all
// slopes positive, on the default 32^3 grid.
PhantomSpec default_phantom_spec();

struct SessionInfo {
  int subject = 0;  // 0-based
  int session = 0;  // 0-based within subject
  double age = 0.0;
};

// Deterministic cohort layout: session counts, ages (sorted per subject) and
// per-subject anisotropy offsets, all derived from the seed.
struct PhantomLayout {
  std::vector<SessionInfo> sessions;  // subject-major order
  std::vector<double> subject_offsets;
  LabelVolume labels;  // 0 background, then 1-based region index
  MaskVolume mask;     // whole grid
};

PhantomLayout phantom_layout(const PhantomSpec& spec);

// One session's DWI volume; bitwise-deterministic given (spec, subject,
// session) regardless of caller threading.
DwiVolume generate_phantom_session(const PhantomSpec& spec, const PhantomLayout& layout,
                                   const GfaShapeLut& lut, int session_index);

// Whole in-memory dataset; intended for tests and small grids.
struct PhantomDataset {
  PhantomSpec spec;
  PhantomLayout layout;
  std::vector<DwiVolume> sessions;  // parallel to layout.sessions
};

PhantomDataset generate_phantom(const PhantomSpec& spec, int threads = 1);

// True anisotropy value encoded at a voxel for one session; background is
// the isotropic floor (shape 0 through the calibration).
double encoded_gfa(const PhantomSpec& spec, const PhantomLayout& layout,
                   const GfaShapeLut& lut, int region_label, int subject, double age);

}  // namespace odfatlas::phantom
