#pragma once

#include "odfatlas/lme.hpp"
#include "odfatlas/volume.hpp"

#include <string>
#include <vector>

namespace odfatlas::atlas {

// One registered, reoriented SH field with its subject and scan age.
struct LongitudinalScan {
  int subject = 0;
  int session = 0;
  double age = 0;  // months
  ShField field;
};

struct AtlasOptions {
  double guard_lo = 3.0;  // evaluation guard: [guard_lo - slack, guard_hi + slack]
  double guard_hi = 36.0;
  double guard_slack = 6.0;
  std::string manifest_digest;  // recorded in metadata, free-form
};

// Why a voxel is absent from the atlas mask.
enum class VoxelDrop : std::int32_t {
  kNone = 0,
  kOutsideMask = 1,      // not observed by every session
  kDegenerateDesign = 2,
  kNumerical = 3,
};

// Per-voxel random-intercept trend model of every SH coefficient, plus the
// Frobenius-norm R^2 of the fixed-effect predictions.
struct AtlasModel {
  int l_max = 0;
  double lambda = 0.0;  // recorded from the input fields
  double guard_lo = 3.0, guard_hi = 36.0, guard_slack = 6.0;
  std::string manifest_digest;

  MaskVolume mask;
  LabelVolume reason;  // VoxelDrop codes for voxels outside the mask
  Volume<double> beta0, beta1, sigma2, delta2;  // ncomp = n_coef()
  std::vector<int> subjects;                    // sorted ids
  std::vector<Volume<double>> alpha;            // per subject, ncomp = n_coef()
  ScalarVolume r2;

  int n_coef() const { return (l_max / 2 + 1) * (l_max + 1); }
};

// Independent fit of each coefficient at each masked voxel; voxels not seen
// by every session are dropped with a reason code.  A dataset that cannot
// identify the model at all (single subject, single age, ...) throws before
// any fitting.
AtlasModel fit_atlas_field(const std::vector<LongitudinalScan>& scans,
                           const AtlasOptions& opts = {}, int threads = 1);

// Fixed-effect coefficients beta0 + beta1 * t as an ODF field.  Ages outside
// the guard window are rejected unless ignore_guard is set.
ShField eval_atlas_at_age(const AtlasModel& model, double t, bool ignore_guard = false);

// Per-voxel arithmetic mean of coefficient vectors on the intersection mask.
ShField average_sh_field(const std::vector<ShField>& fields);

// Atlas directory layout: parameter stacks, per-subject intercept volumes,
// the R^2 map, and an atlas.json metadata document.
void save_atlas(const AtlasModel& model, const std::string& dir);
AtlasModel load_atlas(const std::string& dir);

}  // namespace odfatlas::atlas
