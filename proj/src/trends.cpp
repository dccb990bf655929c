#include "odfatlas/trends.hpp"

#include "odfatlas/qball.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace odfatlas::cli {

std::vector<double> default_t_grid() {
  std::vector<double> t;
  for (int m = 3; m <= 36; ++m) t.push_back(m);
  return t;
}

TrendTable roi_trends(const atlas::AtlasModel& model, const LabelVolume& rois,
                      const std::vector<double>& t_grid, bool with_subjects) {
  if (!same_grid(rois, model.mask)) {
    throw ValidationError("roi trends: label grid does not match the atlas grid");
  }
  if (rois.ncomp != 1) {
    throw ValidationError("roi trends: label volume must be scalar");
  }
  if (t_grid.empty()) {
    throw ValidationError("roi trends: empty evaluation grid");
  }
  for (std::size_t i = 1; i < t_grid.size(); ++i) {
    if (!(t_grid[i] > t_grid[i - 1])) {
      throw ValidationError("roi trends: evaluation grid must be strictly increasing");
    }
  }

  // Voxel lists per label; a label present in the volume but absent from the
  // atlas mask is an error, not a silent empty row.
  std::map<int, std::vector<std::int64_t>> voxels;
  const std::int64_t nvox = rois.n_voxels();
  for (std::int64_t v = 0; v < nvox; ++v) {
    const int label = rois.data[static_cast<std::size_t>(v)];
    if (label < 0) {
      throw ValidationError("roi trends: negative ROI label " + std::to_string(label));
    }
    if (label == 0) continue;
    voxels.try_emplace(label);
    if (model.mask.data[static_cast<std::size_t>(v)]) {
      voxels[label].push_back(v);
    }
  }
  if (voxels.empty()) {
    throw ValidationError("roi trends: no nonzero labels in the ROI volume");
  }
  for (const auto& [label, list] : voxels) {
    if (list.empty()) {
      throw ValidationError("roi trends: ROI label " + std::to_string(label) +
                            " has no voxels inside the atlas mask");
    }
  }

  TrendTable table;
  for (const auto& [label, list] : voxels) table.labels.push_back(label);
  table.t_grid = t_grid;
  if (with_subjects) table.subjects = model.subjects;

  const int n_labels = static_cast<int>(table.labels.size());
  const int n_t = static_cast<int>(t_grid.size());
  const int nc = model.beta0.ncomp;
  table.population.setZero(n_labels, n_t);
  table.subject.assign(table.subjects.size(), Eigen::MatrixXd::Zero(n_labels, n_t));

  Eigen::VectorXd base(nc), shifted(nc);
  for (int ti = 0; ti < n_t; ++ti) {
    const ShField field = atlas::eval_atlas_at_age(model, t_grid[ti]);
    for (int li = 0; li < n_labels; ++li) {
      const auto& list = voxels[table.labels[static_cast<std::size_t>(li)]];
      double pop = 0;
      std::vector<double> subj(table.subjects.size(), 0.0);
      for (const std::int64_t v : list) {
        for (int k = 0; k < nc; ++k) {
          base[k] = field.coef.data[static_cast<std::size_t>(v + nvox * k)];
        }
        pop += qball::gfa_closed_form(base);
        for (std::size_t si = 0; si < table.subjects.size(); ++si) {
          const auto& alpha = model.alpha[si];
          for (int k = 0; k < nc; ++k) {
            shifted[k] = base[k] + alpha.data[static_cast<std::size_t>(v + nvox * k)];
          }
          subj[si] += qball::gfa_closed_form(shifted);
        }
      }
      const double n = static_cast<double>(list.size());
      table.population(li, ti) = pop / n;
      for (std::size_t si = 0; si < table.subjects.size(); ++si) {
        table.subject[si](li, ti) = subj[si] / n;
      }
    }
  }
  return table;
}

void write_trends_csv(const std::string& path, const TrendTable& table) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.imbue(std::locale::classic());
  os.precision(10);

  os << "roi,t_months,population_gfa";
  for (const int id : table.subjects) os << ",subject_" << id;
  os << "\n";
  for (std::size_t li = 0; li < table.labels.size(); ++li) {
    for (std::size_t ti = 0; ti < table.t_grid.size(); ++ti) {
      os << table.labels[li] << ',' << table.t_grid[ti] << ','
         << table.population(static_cast<Eigen::Index>(li), static_cast<Eigen::Index>(ti));
      for (const auto& block : table.subject) {
        os << ',' << block(static_cast<Eigen::Index>(li), static_cast<Eigen::Index>(ti));
      }
      os << "\n";
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace odfatlas::cli
