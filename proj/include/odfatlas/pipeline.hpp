#pragma once

#include "odfatlas/atlas.hpp"
#include "odfatlas/manifest.hpp"
#include "odfatlas/tracking.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace odfatlas::cli {

inline constexpr const char* kVersion = "0.1.0";

struct PipelineConfig {
  int threads = 1;
  std::uint64_t seed = 0;
  int l_max = 6;
  double lambda = 0.006;

  double guard_lo = 3.0, guard_hi = 36.0, guard_slack = 6.0;
  bool subject_average = false;  // per-subject mean before the population mean
  std::string mask;              // optional global mask path

  std::vector<double> gfa_ages{3.0, 18.0, 36.0};

  bool track = false;
  double track_age = 18.0;
  double step_size = 1.0;
  double max_angle = 30.0;
  double gfa_threshold = 0.1;
  double max_length = 250.0;
  double min_length = 10.0;
  int seeds_per_voxel = 1;

  std::string roi_labels;  // label volume path; empty disables the trends stage
  double t_min = 3.0, t_max = 36.0, t_step = 1.0;
};

// Strict: unknown keys are reported so config typos cannot silently fall back
// to defaults.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json pipeline_config_to_json(const PipelineConfig& c);

struct StageStatus {
  std::string name;
  bool ran = false;  // false: outputs reused via content address
  double seconds = 0;
  std::string digest;
  std::vector<std::string> outputs;  // relative to the artifact directory
  nlohmann::json details;
};

struct RunReport {
  std::string version;
  std::string manifest_digest;
  nlohmann::json config;
  std::vector<StageStatus> stages;
  std::string failed_stage;  // empty on success
  std::string error;

  nlohmann::json to_json() const;
};

// Stages in order: fit (warp/reorient + SH/ODF per session), average, atlas,
// maps (R^2 + GFA), optional track, optional trends.  Each stage records a
// content digest of its inputs; re-runs skip stages whose digest matches and
// whose outputs still exist.  A lock file serializes writers; report.json is
// written even when a stage fails, and completed stage outputs are retained.
RunReport pipeline_run(const Manifest& manifest, const PipelineConfig& cfg,
                       const std::string& out_dir);

// One manifest session as an ODF coefficient field: loads a registered SH
// field or fits the raw DWI volume, applying the displacement field first
// when one is present.  `label` names the session in error messages.
ShField session_odf_field(const ManifestSession& ses, const std::string& label,
                          int l_max, double lambda, const std::string& global_mask,
                          int threads);

// All sessions of a manifest, subject indices in canonical order.
std::vector<atlas::LongitudinalScan> load_manifest_scans(const Manifest& manifest,
                                                         int l_max, double lambda,
                                                         const std::string& global_mask,
                                                         int threads);

}  // namespace odfatlas::cli
