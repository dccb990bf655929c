#include "odfatlas/pipeline.hpp"

#include "odfatlas/atlas.hpp"
#include "odfatlas/digest.hpp"
#include "odfatlas/nifti_io.hpp"
#include "odfatlas/qball.hpp"
#include "odfatlas/reorient.hpp"
#include "odfatlas/trends.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace odfatlas::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sanitize(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  return out;
}

std::string session_stem(int si, int ei, const ManifestSession& ses,
                         const ManifestSubject& sub) {
  char idx[16];
  std::snprintf(idx, sizeof(idx), "%02d_%02d", si, ei);
  return std::string(idx) + "_" + sanitize(sub.id) + "_" + sanitize(ses.id);
}

std::string fmt_num(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << v;
  return os.str();
}

// Exclusive advisory writer lock via O_EXCL; stale locks must be removed by
// hand, which beats silently corrupting a half-written artifact directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / "lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw IoError("artifact directory is locked (remove stale " + path_.string() +
                    " if no run is active)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    (void)!::write(fd_, pid.data(), pid.size());
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

// Funk-Radon scaling per component; identity on fields already holding ODFs.
ShField to_odf_field(ShField f) {
  if (f.kind == ShKind::odf) return f;
  const auto idx = sh::index_map(f.l_max);
  const std::int64_t nvox = f.coef.n_voxels();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double scale = 2.0 * M_PI * sh::legendre_at_zero(idx[k].l);
    double* plane = f.coef.data.data() + static_cast<std::ptrdiff_t>(nvox) *
                    static_cast<std::ptrdiff_t>(k);
    for (std::int64_t v = 0; v < nvox; ++v) plane[v] *= scale;
  }
  f.kind = ShKind::odf;
  return f;
}

struct StageRunner {
  fs::path out;
  RunReport* report;

  fs::path marker_path(const std::string& name) const {
    return out / (".done_" + name + ".json");
  }

  bool up_to_date(const std::string& name, const std::string& digest,
                  const std::vector<std::string>& outputs) const {
    std::ifstream is(marker_path(name));
    if (!is) return false;
    json m;
    try {
      is >> m;
    } catch (const json::exception&) {
      return false;
    }
    if (!m.contains("digest") || m["digest"] != digest) return false;
    for (const auto& rel : outputs) {
      if (!fs::exists(out / rel)) return false;
    }
    return true;
  }

  void record(const std::string& name, const std::string& digest,
              const std::vector<std::string>& outputs) const {
    json m;
    m["digest"] = digest;
    m["outputs"] = outputs;
    std::ofstream os(marker_path(name));
    if (!os) throw IoError("cannot write stage marker for " + name);
    os << m.dump(2) << "\n";
  }

  // Runs or skips one stage; returns the digest for chaining.
  std::string run(const std::string& name, const std::string& digest_input,
                  const std::vector<std::string>& outputs,
                  const std::function<json()>& body) {
    const std::string digest = string_digest(digest_input);
    StageStatus status;
    status.name = name;
    status.digest = digest;
    status.outputs = outputs;
    if (up_to_date(name, digest, outputs)) {
      report->stages.push_back(status);
      return digest;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
      status.details = body();
    } catch (...) {
      report->failed_stage = name;
      throw;
    }
    status.ran = true;
    status.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record(name, digest, outputs);
    report->stages.push_back(status);
    return digest;
  }
};

track::TrackingParams tracking_params(const PipelineConfig& cfg) {
  track::TrackingParams p;
  p.step_size = cfg.step_size;
  p.max_angle = cfg.max_angle;
  p.gfa_threshold = cfg.gfa_threshold;
  p.max_length = cfg.max_length;
  p.min_length = cfg.min_length;
  p.seeds_per_voxel = cfg.seeds_per_voxel;
  return p;
}

}  // namespace

ShField session_odf_field(const ManifestSession& ses, const std::string& label,
                          int l_max, double lambda, const std::string& global_mask,
                          int threads) {
  if (ses.has_sh()) {
    ShField f = io::load_sh_field(ses.sh);
    if (f.l_max != l_max) {
      throw ValidationError("session " + label + ": SH order " +
                            std::to_string(f.l_max) +
                            " does not match the configured order");
    }
    if (!ses.warp.empty()) {
      const DisplacementField w = io::read_displacement_field(ses.warp);
      return to_odf_field(reorient::apply_warp(f, w, threads).field);
    }
    return to_odf_field(f);
  }

  DwiVolume d;
  d.data = io::read_volume(ses.dwi);
  d.scheme = dwi::load_fsl_scheme(ses.bval, ses.bvec);
  if (d.data.ncomp != d.scheme.size()) {
    throw ValidationError("session " + label +
                          ": volume count does not match the scheme");
  }
  MaskVolume m;
  if (!ses.mask.empty()) {
    m = io::read_mask(ses.mask);
  } else if (!global_mask.empty()) {
    m = io::read_mask(global_mask);
  } else {
    m = full_mask(d.data.dims, d.data.voxel_size);
  }
  if (!ses.warp.empty()) {
    const DisplacementField w = io::read_displacement_field(ses.warp);
    auto warped = reorient::apply_warp_dwi(d, m, w, threads);
    d = std::move(warped.data);
    m = std::move(warped.mask);
  }
  return qball::fit_sh_volume(d, m, {l_max, lambda}, true, threads);
}

std::vector<atlas::LongitudinalScan> load_manifest_scans(const Manifest& manifest,
                                                         int l_max, double lambda,
                                                         const std::string& global_mask,
                                                         int threads) {
  std::vector<atlas::LongitudinalScan> scans;
  for (std::size_t si = 0; si < manifest.subjects.size(); ++si) {
    const auto& sub = manifest.subjects[si];
    for (std::size_t ei = 0; ei < sub.sessions.size(); ++ei) {
      const auto& ses = sub.sessions[ei];
      atlas::LongitudinalScan scan;
      scan.subject = static_cast<int>(si);
      scan.session = static_cast<int>(ei);
      scan.age = ses.age;
      scan.field = session_odf_field(ses, "(" + sub.id + ", " + ses.id + ")", l_max,
                                     lambda, global_mask, threads);
      scans.push_back(std::move(scan));
    }
  }
  return scans;
}

PipelineConfig pipeline_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config: top-level JSON object required");
  PipelineConfig c;
  std::vector<std::string> unknown;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "threads") c.threads = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "lmax") c.l_max = value.get<int>();
      else if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "guard_lo") c.guard_lo = value.get<double>();
      else if (key == "guard_hi") c.guard_hi = value.get<double>();
      else if (key == "guard_slack") c.guard_slack = value.get<double>();
      else if (key == "subject_average") c.subject_average = value.get<bool>();
      else if (key == "mask") c.mask = value.get<std::string>();
      else if (key == "gfa_ages") c.gfa_ages = value.get<std::vector<double>>();
      else if (key == "track") c.track = value.get<bool>();
      else if (key == "track_age") c.track_age = value.get<double>();
      else if (key == "step_size") c.step_size = value.get<double>();
      else if (key == "max_angle") c.max_angle = value.get<double>();
      else if (key == "gfa_threshold") c.gfa_threshold = value.get<double>();
      else if (key == "max_length") c.max_length = value.get<double>();
      else if (key == "min_length") c.min_length = value.get<double>();
      else if (key == "seeds_per_voxel") c.seeds_per_voxel = value.get<int>();
      else if (key == "roi_labels") c.roi_labels = value.get<std::string>();
      else if (key == "t_min") c.t_min = value.get<double>();
      else if (key == "t_max") c.t_max = value.get<double>();
      else if (key == "t_step") c.t_step = value.get<double>();
      else unknown.push_back(key);
    } catch (const json::exception& e) {
      throw ValidationError("config: bad value for '" + key + "': " + e.what());
    }
  }
  if (!unknown.empty()) {
    std::string msg = "config: unknown key(s):";
    for (const auto& k : unknown) msg += " '" + k + "'";
    throw ValidationError(msg);
  }
  return c;
}

json pipeline_config_to_json(const PipelineConfig& c) {
  json j;
  j["threads"] = c.threads;
  j["seed"] = c.seed;
  j["lmax"] = c.l_max;
  j["lambda"] = c.lambda;
  j["guard_lo"] = c.guard_lo;
  j["guard_hi"] = c.guard_hi;
  j["guard_slack"] = c.guard_slack;
  j["subject_average"] = c.subject_average;
  j["mask"] = c.mask;
  j["gfa_ages"] = c.gfa_ages;
  j["track"] = c.track;
  j["track_age"] = c.track_age;
  j["step_size"] = c.step_size;
  j["max_angle"] = c.max_angle;
  j["gfa_threshold"] = c.gfa_threshold;
  j["max_length"] = c.max_length;
  j["min_length"] = c.min_length;
  j["seeds_per_voxel"] = c.seeds_per_voxel;
  j["roi_labels"] = c.roi_labels;
  j["t_min"] = c.t_min;
  j["t_max"] = c.t_max;
  j["t_step"] = c.t_step;
  return j;
}

json RunReport::to_json() const {
  json j;
  j["version"] = version;
  j["manifest_digest"] = manifest_digest;
  j["config"] = config;
  j["stages"] = json::array();
  for (const auto& s : stages) {
    json e;
    e["name"] = s.name;
    e["ran"] = s.ran;
    e["seconds"] = s.seconds;
    e["digest"] = s.digest;
    e["outputs"] = s.outputs;
    e["details"] = s.details;
    j["stages"].push_back(e);
  }
  if (!failed_stage.empty()) {
    j["failed_stage"] = failed_stage;
    j["error"] = error;
  }
  return j;
}

RunReport pipeline_run(const Manifest& manifest, const PipelineConfig& cfg,
                       const std::string& out_dir) {
  if (manifest.subjects.empty()) throw ValidationError("pipeline: empty manifest");
  if (cfg.threads < 0) throw ValidationError("pipeline: negative thread count");

  const fs::path out(out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create artifact directory: " + out_dir);

  RunReport report;
  report.version = kVersion;
  report.manifest_digest = manifest.digest;
  report.config = pipeline_config_to_json(cfg);

  DirLock lock(out);
  StageRunner runner{out, &report};

  // Flattened session table in canonical order.
  struct Row {
    int subject_index, session_index;
    const ManifestSubject* subject;
    const ManifestSession* session;
    std::string stem;
  };
  std::vector<Row> rows;
  for (std::size_t si = 0; si < manifest.subjects.size(); ++si) {
    const auto& sub = manifest.subjects[si];
    for (std::size_t ei = 0; ei < sub.sessions.size(); ++ei) {
      Row r;
      r.subject_index = static_cast<int>(si);
      r.session_index = static_cast<int>(ei);
      r.subject = &sub;
      r.session = &sub.sessions[ei];
      r.stem = session_stem(r.subject_index, r.session_index, *r.session, sub);
      rows.push_back(r);
    }
  }

  const auto odf_rel = [](const Row& r) { return "odf/" + r.stem + ".nii.gz"; };

  const auto write_report = [&]() {
    std::ofstream os(out / "report.json");
    if (os) os << report.to_json().dump(2) << "\n";
  };

  try {
    // --- fit: per-session warp/reorient + ODF coefficients ------------------
    std::string fit_in;
    {
      std::ostringstream d;
      d << kVersion << "|fit|lmax=" << cfg.l_max << "|lambda=" << fmt_num(cfg.lambda);
      if (!cfg.mask.empty()) d << "|mask=" << file_digest(cfg.mask);
      for (const Row& r : rows) {
        d << "|" << r.subject->id << "/" << r.session->id << ":" << fmt_num(r.session->age);
        for (const std::string* p :
             {&r.session->dwi, &r.session->bval, &r.session->bvec, &r.session->sh,
              &r.session->warp, &r.session->mask}) {
          if (!p->empty()) d << "," << file_digest(*p);
        }
      }
      fit_in = d.str();
    }
    std::vector<std::string> fit_outputs;
    for (const Row& r : rows) {
      fit_outputs.push_back(odf_rel(r));
      fit_outputs.push_back("odf/" + r.stem + ".mask.nii.gz");
      fit_outputs.push_back("odf/" + r.stem + ".json");
    }
    const std::string fit_digest = runner.run("fit", fit_in, fit_outputs, [&]() -> json {
      fs::create_directories(out / "odf");
      for (const Row& r : rows) {
        const ShField odf = session_odf_field(
            *r.session, "(" + r.subject->id + ", " + r.session->id + ")", cfg.l_max,
            cfg.lambda, cfg.mask, cfg.threads);
        io::save_sh_field((out / odf_rel(r)).string(), odf);
      }
      json details;
      details["sessions"] = rows.size();
      return details;
    });

    // --- average: cross-sectional mean ODF field ----------------------------
    {
      std::ostringstream d;
      d << kVersion << "|average|" << fit_digest
        << "|subject_average=" << cfg.subject_average;
      runner.run("average", d.str(),
                 {"average/mean_odf.nii.gz", "average/mean_odf.mask.nii.gz",
                  "average/mean_odf.json"},
                 [&]() -> json {
        fs::create_directories(out / "average");
        ShField mean;
        if (cfg.subject_average) {
          std::vector<ShField> subject_means;
          std::size_t row_at = 0;
          for (const auto& sub : manifest.subjects) {
            std::vector<ShField> fields;
            for (std::size_t ei = 0; ei < sub.sessions.size(); ++ei, ++row_at) {
              fields.push_back(io::load_sh_field((out / odf_rel(rows[row_at])).string()));
            }
            subject_means.push_back(atlas::average_sh_field(fields));
          }
          mean = atlas::average_sh_field(subject_means);
        } else {
          std::vector<ShField> fields;
          for (const Row& r : rows) {
            fields.push_back(io::load_sh_field((out / odf_rel(r)).string()));
          }
          mean = atlas::average_sh_field(fields);
        }
        io::save_sh_field((out / "average/mean_odf.nii.gz").string(), mean);
        json details;
        details["two_stage"] = cfg.subject_average;
        return details;
      });
    }

    // --- atlas: per-voxel longitudinal trend model --------------------------
    std::string atlas_digest;
    {
      std::ostringstream d;
      d << kVersion << "|atlas|" << fit_digest << "|guard=" << fmt_num(cfg.guard_lo)
        << "," << fmt_num(cfg.guard_hi) << "," << fmt_num(cfg.guard_slack)
        << "|manifest=" << manifest.digest;
      std::vector<std::string> outputs{"atlas/atlas.json", "atlas/subject_ids.json",
                                       "atlas/mask.nii.gz", "atlas/reason.nii.gz",
                                       "atlas/beta0.nii.gz", "atlas/beta1.nii.gz",
                                       "atlas/sigma2.nii.gz", "atlas/delta2.nii.gz",
                                       "atlas/r2.nii.gz"};
      for (std::size_t si = 0; si < manifest.subjects.size(); ++si) {
        outputs.push_back("atlas/alpha_s" + std::to_string(si) + ".nii.gz");
      }
      atlas_digest = runner.run("atlas", d.str(), std::move(outputs), [&]() -> json {
        std::vector<atlas::LongitudinalScan> scans;
        scans.reserve(rows.size());
        for (const Row& r : rows) {
          atlas::LongitudinalScan scan;
          scan.subject = r.subject_index;
          scan.session = r.session_index;
          scan.age = r.session->age;
          scan.field = io::load_sh_field((out / odf_rel(r)).string());
          scans.push_back(std::move(scan));
        }
        atlas::AtlasOptions opts;
        opts.guard_lo = cfg.guard_lo;
        opts.guard_hi = cfg.guard_hi;
        opts.guard_slack = cfg.guard_slack;
        opts.manifest_digest = manifest.digest;
        const atlas::AtlasModel model = atlas::fit_atlas_field(scans, opts, cfg.threads);
        atlas::save_atlas(model, (out / "atlas").string());

        json ids = json::array();
        for (const auto& sub : manifest.subjects) ids.push_back(sub.id);
        {
          std::ofstream os(out / "atlas/subject_ids.json");
          if (!os) throw IoError("cannot write atlas/subject_ids.json");
          os << ids.dump(2) << "\n";
        }

        // Per-voxel drop statistics for the run report.
        std::array<std::int64_t, 4> drops{0, 0, 0, 0};
        for (const auto code : model.reason.data) {
          if (code >= 0 && code < 4) ++drops[static_cast<std::size_t>(code)];
        }
        json details;
        details["voxels_kept"] = drops[0];
        details["dropped_outside_mask"] = drops[1];
        details["dropped_degenerate_design"] = drops[2];
        details["dropped_numerical"] = drops[3];
        return details;
      });
    }

    // --- maps: R^2 and GFA at requested ages --------------------------------
    {
      std::ostringstream d;
      d << kVersion << "|maps|" << atlas_digest << "|ages=";
      for (const double a : cfg.gfa_ages) d << fmt_num(a) << ",";
      std::vector<std::string> outputs{"maps/r2.nii.gz"};
      for (const double a : cfg.gfa_ages) {
        outputs.push_back("maps/gfa_age_" + fmt_num(a) + ".nii.gz");
      }
      runner.run("maps", d.str(), outputs, [&]() -> json {
        fs::create_directories(out / "maps");
        const atlas::AtlasModel model = atlas::load_atlas((out / "atlas").string());
        io::write_volume((out / "maps/r2.nii.gz").string(), model.r2);
        for (const double a : cfg.gfa_ages) {
          const ShField field = atlas::eval_atlas_at_age(model, a);
          const ScalarVolume g = qball::gfa_map(field, cfg.threads);
          io::write_volume((out / ("maps/gfa_age_" + fmt_num(a) + ".nii.gz")).string(), g);
        }
        json details;
        details["ages"] = cfg.gfa_ages;
        return details;
      });
    }

    // --- track: whole-brain streamlines at one age --------------------------
    if (cfg.track) {
      std::ostringstream d;
      d << kVersion << "|track|" << atlas_digest << "|age=" << fmt_num(cfg.track_age)
        << "|seed=" << cfg.seed << "|step=" << fmt_num(cfg.step_size)
        << "|angle=" << fmt_num(cfg.max_angle) << "|gfa=" << fmt_num(cfg.gfa_threshold)
        << "|maxlen=" << fmt_num(cfg.max_length) << "|minlen=" << fmt_num(cfg.min_length)
        << "|spv=" << cfg.seeds_per_voxel;
      runner.run("track", d.str(),
                 {"tracks/streamlines.trk", "tracks/streamlines.txt"},
                 [&]() -> json {
        fs::create_directories(out / "tracks");
        const atlas::AtlasModel model = atlas::load_atlas((out / "atlas").string());
        const ShField field = atlas::eval_atlas_at_age(model, cfg.track_age);
        const ScalarVolume g = qball::gfa_map(field, cfg.threads);
        const auto lines = track::whole_brain_track(field, g, tracking_params(cfg),
                                                    cfg.seed, cfg.threads);
        track::save_streamlines((out / "tracks/streamlines.trk").string(), lines,
                                field.coef.voxel_size);
        track::export_streamlines_text((out / "tracks/streamlines.txt").string(), lines);
        std::size_t points = 0;
        for (const auto& l : lines) points += l.points.size();
        json details;
        details["streamlines"] = lines.size();
        details["points"] = points;
        return details;
      });
    }

    // --- trends: ROI GFA curves ---------------------------------------------
    if (!cfg.roi_labels.empty()) {
      std::ostringstream d;
      d << kVersion << "|trends|" << atlas_digest << "|labels="
        << file_digest(cfg.roi_labels) << "|grid=" << fmt_num(cfg.t_min) << ","
        << fmt_num(cfg.t_max) << "," << fmt_num(cfg.t_step);
      runner.run("trends", d.str(), {"trends/trends.csv"}, [&]() -> json {
        fs::create_directories(out / "trends");
        const atlas::AtlasModel model = atlas::load_atlas((out / "atlas").string());
        const LabelVolume labels = io::read_labels(cfg.roi_labels);
        if (!(cfg.t_step > 0)) {
          throw ValidationError("trends: t_step must be positive");
        }
        std::vector<double> grid;
        for (double t = cfg.t_min; t <= cfg.t_max + 1e-9; t += cfg.t_step) {
          grid.push_back(t);
        }
        const TrendTable table = roi_trends(model, labels, grid);
        write_trends_csv((out / "trends/trends.csv").string(), table);
        json details;
        details["labels"] = table.labels;
        details["rows"] = table.labels.size() * table.t_grid.size();
        return details;
      });
    }
  } catch (const std::exception& e) {
    report.error = e.what();
    write_report();
    throw;
  }

  write_report();
  return report;
}

}  // namespace odfatlas::cli
