#include "odfatlas/atlas.hpp"

#include "odfatlas/nifti_io.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace odfatlas::atlas {

namespace {

void check_scans(const std::vector<LongitudinalScan>& scans) {
  if (scans.empty()) {
    throw ValidationError("atlas: no scans");
  }
  const ShField& f0 = scans.front().field;
  const int n_coef = (f0.l_max / 2 + 1) * (f0.l_max + 1);
  for (const auto& s : scans) {
    if (s.field.kind != ShKind::odf) {
      throw ValidationError("atlas: expected odf coefficient fields");
    }
    if (s.field.l_max != f0.l_max) {
      throw ValidationError("atlas: scans disagree on l_max");
    }
    if (!same_grid(s.field.coef, f0.coef) || !same_grid(s.field.mask, f0.coef)) {
      throw ValidationError("atlas: scans must share one grid");
    }
    if (s.field.coef.ncomp != n_coef) {
      throw ValidationError("atlas: field has " + std::to_string(s.field.coef.ncomp) +
                            " coefficients, expected " + std::to_string(n_coef));
    }
  }
}

}  // namespace

AtlasModel fit_atlas_field(const std::vector<LongitudinalScan>& scans,
                           const AtlasOptions& opts, int threads) {
  check_scans(scans);
  const ShField& f0 = scans.front().field;

  std::vector<std::pair<int, double>> rows;
  rows.reserve(scans.size());
  for (const auto& s : scans) rows.emplace_back(s.subject, s.age);
  const lme::LmeDesign design(rows);
  if (design.degenerate()) {
    throw lme::DegenerateDesignError(design.degenerate_reason(), lme::LmeFit{});
  }

  AtlasModel m;
  m.l_max = f0.l_max;
  m.lambda = f0.lambda;
  m.guard_lo = opts.guard_lo;
  m.guard_hi = opts.guard_hi;
  m.guard_slack = opts.guard_slack;
  m.manifest_digest = opts.manifest_digest;

  const auto dims = f0.coef.dims;
  const Vec3 vox = f0.coef.voxel_size;
  const int n_coef = m.n_coef();
  const std::int64_t n_vox = f0.coef.n_voxels();
  const int n_scans = static_cast<int>(scans.size());

  m.mask = MaskVolume(dims, 1, vox, 1);
  m.reason = LabelVolume(dims, 1, vox, 0);
  for (std::int64_t v = 0; v < n_vox; ++v) {
    bool seen_by_all = true;
    for (const auto& s : scans) {
      seen_by_all = seen_by_all && s.field.mask.data[static_cast<std::size_t>(v)] != 0;
    }
    if (!seen_by_all) {
      m.mask.data[static_cast<std::size_t>(v)] = 0;
      m.reason.data[static_cast<std::size_t>(v)] =
          static_cast<std::int32_t>(VoxelDrop::kOutsideMask);
    }
  }

  m.beta0 = Volume<double>(dims, n_coef, vox, 0.0);
  m.beta1 = m.beta0;
  m.sigma2 = m.beta0;
  m.delta2 = m.beta0;
  m.r2 = ScalarVolume(dims, 1, vox, 0.0);
  m.subjects = design.subject_ids();
  m.alpha.assign(m.subjects.size(), Volume<double>(dims, n_coef, vox, 0.0));

  const auto clear_voxel = [&](std::int64_t v, VoxelDrop why) {
    for (int j = 0; j < n_coef; ++j) {
      const auto idx = static_cast<std::size_t>(v + n_vox * j);
      m.beta0.data[idx] = 0.0;
      m.beta1.data[idx] = 0.0;
      m.sigma2.data[idx] = 0.0;
      m.delta2.data[idx] = 0.0;
      for (auto& a : m.alpha) a.data[idx] = 0.0;
    }
    m.r2.data[static_cast<std::size_t>(v)] = 0.0;
    m.mask.data[static_cast<std::size_t>(v)] = 0;
    m.reason.data[static_cast<std::size_t>(v)] = static_cast<std::int32_t>(why);
  };

  parallel_for_index(n_vox, threads, [&](std::int64_t v) {
    if (!m.mask.data[static_cast<std::size_t>(v)]) return;
    Eigen::MatrixXd y(n_scans, n_coef);
    for (int k = 0; k < n_scans; ++k) {
      for (int j = 0; j < n_coef; ++j) {
        y(k, j) = scans[static_cast<std::size_t>(k)].field.coef
                      .data[static_cast<std::size_t>(v + n_vox * j)];
      }
    }
    try {
      double num = 0, den = 0;
      for (int j = 0; j < n_coef; ++j) {
        const lme::LmeFit fit = design.fit(y.col(j));
        const auto idx = static_cast<std::size_t>(v + n_vox * j);
        m.beta0.data[idx] = fit.beta0;
        m.beta1.data[idx] = fit.beta1;
        m.sigma2.data[idx] = fit.sigma2;
        m.delta2.data[idx] = fit.delta2;
        std::size_t slot = 0;
        for (const auto& [id, a] : fit.alpha) {
          (void)id;
          m.alpha[slot].data[idx] = a;
          ++slot;
        }
        const double mean = y.col(j).mean();
        for (int k = 0; k < n_scans; ++k) {
          const double fitted =
              fit.beta0 + fit.beta1 * scans[static_cast<std::size_t>(k)].age;
          num += (y(k, j) - fitted) * (y(k, j) - fitted);
          den += (y(k, j) - mean) * (y(k, j) - mean);
        }
      }
      m.r2.data[static_cast<std::size_t>(v)] = den > 0 ? 1.0 - num / den : 0.0;
    } catch (const lme::DegenerateDesignError&) {
      clear_voxel(v, VoxelDrop::kDegenerateDesign);
    } catch (const std::exception&) {
      clear_voxel(v, VoxelDrop::kNumerical);
    }
  });
  return m;
}

ShField eval_atlas_at_age(const AtlasModel& m, double t, bool ignore_guard) {
  const double lo = m.guard_lo - m.guard_slack;
  const double hi = m.guard_hi + m.guard_slack;
  if (!ignore_guard && !(t >= lo && t <= hi)) {
    throw ValidationError("atlas: age " + std::to_string(t) +
                          " outside the evaluation guard [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]; use the override to extrapolate");
  }
  ShField out;
  out.l_max = m.l_max;
  out.kind = ShKind::odf;
  out.lambda = m.lambda;
  out.mask = m.mask;
  out.coef = Volume<double>(m.mask.dims, m.n_coef(), m.mask.voxel_size, 0.0);
  const std::int64_t n_vox = m.mask.n_voxels();
  for (std::int64_t v = 0; v < n_vox; ++v) {
    if (!m.mask.data[static_cast<std::size_t>(v)]) continue;
    for (int j = 0; j < m.n_coef(); ++j) {
      const auto idx = static_cast<std::size_t>(v + n_vox * j);
      out.coef.data[idx] = m.beta0.data[idx] + m.beta1.data[idx] * t;
    }
  }
  return out;
}

ShField average_sh_field(const std::vector<ShField>& fields) {
  if (fields.empty()) {
    throw ValidationError("average_sh_field: no fields");
  }
  const ShField& f0 = fields.front();
  for (const auto& f : fields) {
    if (f.l_max != f0.l_max || f.kind != f0.kind) {
      throw ValidationError("average_sh_field: fields disagree on l_max or kind");
    }
    if (!same_grid(f.coef, f0.coef) || !same_grid(f.mask, f0.coef) ||
        f.coef.ncomp != f0.coef.ncomp) {
      throw ValidationError("average_sh_field: fields must share one grid");
    }
  }

  ShField out;
  out.l_max = f0.l_max;
  out.kind = f0.kind;
  out.lambda = f0.lambda;
  out.coef = Volume<double>(f0.coef.dims, f0.coef.ncomp, f0.coef.voxel_size, 0.0);
  out.mask = MaskVolume(f0.coef.dims, 1, f0.coef.voxel_size, 1);

  const std::int64_t n_vox = f0.coef.n_voxels();
  const double inv = 1.0 / static_cast<double>(fields.size());
  for (std::int64_t v = 0; v < n_vox; ++v) {
    bool seen_by_all = true;
    for (const auto& f : fields) {
      seen_by_all = seen_by_all && f.mask.data[static_cast<std::size_t>(v)] != 0;
    }
    if (!seen_by_all) {
      out.mask.data[static_cast<std::size_t>(v)] = 0;
      continue;
    }
    for (int j = 0; j < f0.coef.ncomp; ++j) {
      const auto idx = static_cast<std::size_t>(v + n_vox * j);
      double sum = 0;
      for (const auto& f : fields) sum += f.coef.data[idx];
      out.coef.data[idx] = sum * inv;
    }
  }
  return out;
}

void save_atlas(const AtlasModel& m, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("save_atlas: cannot create " + dir + ": " + ec.message());
  }
  io::write_mask(dir + "/mask.nii.gz", m.mask);
  io::write_labels(dir + "/reason.nii.gz", m.reason);
  io::write_volume(dir + "/beta0.nii.gz", m.beta0);
  io::write_volume(dir + "/beta1.nii.gz", m.beta1);
  io::write_volume(dir + "/sigma2.nii.gz", m.sigma2);
  io::write_volume(dir + "/delta2.nii.gz", m.delta2);
  io::write_volume(dir + "/r2.nii.gz", m.r2);
  for (std::size_t s = 0; s < m.subjects.size(); ++s) {
    io::write_volume(dir + "/alpha_s" + std::to_string(m.subjects[s]) + ".nii.gz",
                     m.alpha[s]);
  }

  nlohmann::json meta;
  meta["model"] = "random-intercept";
  meta["estimator"] = "profiled maximum likelihood";
  meta["l_max"] = m.l_max;
  meta["lambda"] = m.lambda;
  meta["n_coef"] = m.n_coef();
  meta["guard"] = {{"lo", m.guard_lo}, {"hi", m.guard_hi}, {"slack", m.guard_slack}};
  meta["subjects"] = m.subjects;
  meta["manifest_digest"] = m.manifest_digest;
  std::ofstream out(dir + "/atlas.json");
  out << meta.dump(2) << "\n";
  if (!out) {
    throw IoError("save_atlas: cannot write " + dir + "/atlas.json");
  }
}

AtlasModel load_atlas(const std::string& dir) {
  std::ifstream in(dir + "/atlas.json");
  if (!in) {
    throw IoError("load_atlas: cannot open " + dir + "/atlas.json");
  }
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_atlas: bad atlas.json: " + std::string(e.what()));
  }

  AtlasModel m;
  try {
    m.l_max = meta.at("l_max").get<int>();
    m.lambda = meta.at("lambda").get<double>();
    m.guard_lo = meta.at("guard").at("lo").get<double>();
    m.guard_hi = meta.at("guard").at("hi").get<double>();
    m.guard_slack = meta.at("guard").at("slack").get<double>();
    m.subjects = meta.at("subjects").get<std::vector<int>>();
    m.manifest_digest = meta.value("manifest_digest", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_atlas: bad atlas.json: " + std::string(e.what()));
  }

  m.mask = io::read_mask(dir + "/mask.nii.gz");
  m.reason = io::read_labels(dir + "/reason.nii.gz");
  m.beta0 = io::read_volume(dir + "/beta0.nii.gz");
  m.beta1 = io::read_volume(dir + "/beta1.nii.gz");
  m.sigma2 = io::read_volume(dir + "/sigma2.nii.gz");
  m.delta2 = io::read_volume(dir + "/delta2.nii.gz");
  m.r2 = io::read_volume(dir + "/r2.nii.gz");
  for (int id : m.subjects) {
    m.alpha.push_back(io::read_volume(dir + "/alpha_s" + std::to_string(id) + ".nii.gz"));
  }

  const int n_coef = m.n_coef();
  const auto check = [&](const Volume<double>& v, const char* name) {
    if (!same_grid(v, m.mask) || v.ncomp != n_coef) {
      throw IoError("load_atlas: " + std::string(name) + " does not match the atlas grid");
    }
  };
  check(m.beta0, "beta0");
  check(m.beta1, "beta1");
  check(m.sigma2, "sigma2");
  check(m.delta2, "delta2");
  for (const auto& a : m.alpha) check(a, "alpha");
  if (!same_grid(m.r2, m.mask) || m.r2.ncomp != 1) {
    throw IoError("load_atlas: r2 does not match the atlas grid");
  }
  if (!same_grid(m.reason, m.mask)) {
    throw IoError("load_atlas: reason does not match the atlas grid");
  }
  return m;
}

}  // namespace odfatlas::atlas
