#pragma once

#include "odfatlas/atlas.hpp"
#include "odfatlas/volume.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace odfatlas::cli {

// GFA maturation trends per ROI: population rows evaluate the fixed-effect
// trend, subject rows add that subject's per-voxel intercept offsets before
// the GFA nonlinearity.
struct TrendTable {
  std::vector<int> labels;    // ascending
  std::vector<double> t_grid; // strictly increasing, months
  std::vector<int> subjects;  // atlas subject ids
  Eigen::MatrixXd population;             // labels x t
  std::vector<Eigen::MatrixXd> subject;   // one labels x t block per subject
};

TrendTable roi_trends(const atlas::AtlasModel& model, const LabelVolume& rois,
                      const std::vector<double>& t_grid, bool with_subjects = true);

// 3..36 months, monthly.
std::vector<double> default_t_grid();

// roi,t_months,population_gfa,subject_<id>... rows ordered by (roi, t),
// dot decimal regardless of locale.
void write_trends_csv(const std::string& path, const TrendTable& table);

}  // namespace odfatlas::cli
