#include <CLI11.hpp>
#include <json.hpp>

#include "odfatlas/atlas.hpp"
#include "odfatlas/digest.hpp"
#include "odfatlas/manifest.hpp"
#include "odfatlas/metrics.hpp"
#include "odfatlas/nifti_io.hpp"
#include "odfatlas/phantom.hpp"
#include "odfatlas/pipeline.hpp"
#include "odfatlas/qball.hpp"
#include "odfatlas/reorient.hpp"
#include "odfatlas/tensor.hpp"
#include "odfatlas/tracking.hpp"
#include "odfatlas/trends.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

namespace {

namespace fs = std::filesystem;
using namespace odfatlas;
using nlohmann::json;

json load_config_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config: invalid JSON in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config: top-level object required");
  return j;
}

// Explicit flags win; config JSON fills in anything left at its default.
struct ConfigOverlay {
  struct Bind {
    CLI::Option* opt;
    std::string key;
    std::function<void(const json&)> set;
  };
  std::vector<Bind> binds;

  template <typename T>
  CLI::Option* bind(CLI::Option* opt, const std::string& key, T* target) {
    binds.push_back({opt, key, [target](const json& v) { *target = v.get<T>(); }});
    return opt;
  }

  void apply(const json& cfg) const {
    for (const auto& b : binds) {
      if (b.opt->count() > 0 || !cfg.contains(b.key)) continue;
      try {
        b.set(cfg.at(b.key));
      } catch (const json::exception& e) {
        throw ValidationError("config: bad value for '" + b.key + "': " + e.what());
      }
    }
  }
};

MaskVolume mask_or_full(const std::string& path, const Volume<double>& like) {
  if (!path.empty()) return io::read_mask(path);
  return full_mask(like.dims, like.voxel_size);
}

void add_phantom_command(CLI::App& app) {
  struct Args {
    std::string out, config;
    std::uint64_t seed = 0;
    int subjects = 14;
    int dim = 32;
    double noise = 1.0;
    double voxel = 2.0;
  };
  auto a = std::make_shared<Args>();
  auto ov = std::make_shared<ConfigOverlay>();
  CLI::App* cmd = app.add_subcommand(
      "phantom", "Generate a synthetic longitudinal DWI cohort with known trends");
  cmd->add_option("--out", a->out, "output dataset directory")->required();
  cmd->add_option("--config", a->config, "JSON config mirroring the flags");
  ov->bind(cmd->add_option("--seed", a->seed, "cohort layout seed"), "seed", &a->seed);
  ov->bind(cmd->add_option("--subjects", a->subjects, "number of subjects"),
           "subjects", &a->subjects);
  ov->bind(cmd->add_option("--dim", a->dim, "cubic grid dimension"), "dim", &a->dim);
  ov->bind(cmd->add_option("--noise", a->noise, "additive intensity noise sigma"),
           "noise", &a->noise);
  ov->bind(cmd->add_option("--voxel", a->voxel, "isotropic voxel size in mm"),
           "voxel", &a->voxel);

  cmd->callback([a, ov]() {
    ov->apply(load_config_json(a->config));

    phantom::PhantomSpec spec = phantom::default_phantom_spec();
    spec.seed = a->seed;
    spec.n_subjects = a->subjects;
    spec.noise_sigma = a->noise;
    spec.voxel_size = Vec3(a->voxel, a->voxel, a->voxel);
    if (a->dim != 32) {
      if (a->dim < 8) throw ValidationError("phantom: --dim must be at least 8");
      for (auto& region : spec.regions) {
        for (int ax = 0; ax < 3; ++ax) {
          region.lo[ax] = region.lo[ax] * a->dim / 32;
          region.hi[ax] = std::max(region.lo[ax] + 1, region.hi[ax] * a->dim / 32);
        }
      }
      spec.dims = {a->dim, a->dim, a->dim};
    }

    const phantom::PhantomLayout layout = phantom::phantom_layout(spec);
    const phantom::GfaShapeLut lut(spec.scheme, spec.recon, spec.md);

    const fs::path out(a->out);
    fs::create_directories(out / "dwi");
    io::write_mask((out / "mask.nii.gz").string(), layout.mask);
    io::write_labels((out / "labels.nii.gz").string(), layout.labels);

    json subjects = json::array();
    json truth_sessions = json::array();
    int s_at = -1;
    json* current = nullptr;
    for (std::size_t i = 0; i < layout.sessions.size(); ++i) {
      const auto& info = layout.sessions[i];
      if (info.subject != s_at) {
        s_at = info.subject;
        json subj;
        char sid[16];
        std::snprintf(sid, sizeof(sid), "s%02d", info.subject);
        subj["id"] = sid;
        subj["sessions"] = json::array();
        subjects.push_back(subj);
        current = &subjects.back();
      }
      char sid[16], eid[16];
      std::snprintf(sid, sizeof(sid), "s%02d", info.subject);
      std::snprintf(eid, sizeof(eid), "t%d", info.session);
      const std::string stem = std::string(sid) + "_" + eid;

      const DwiVolume vol =
          phantom::generate_phantom_session(spec, layout, lut, static_cast<int>(i));
      io::write_volume((out / "dwi" / (stem + ".nii.gz")).string(), vol.data);
      dwi::save_fsl_scheme(vol.scheme, (out / "dwi" / (stem + ".bval")).string(),
                           (out / "dwi" / (stem + ".bvec")).string());

      json ses;
      ses["id"] = eid;
      ses["age_months"] = info.age;
      ses["dwi"] = "dwi/" + stem + ".nii.gz";
      ses["bval"] = "dwi/" + stem + ".bval";
      ses["bvec"] = "dwi/" + stem + ".bvec";
      ses["mask"] = "mask.nii.gz";
      (*current)["sessions"].push_back(ses);

      json t;
      t["subject"] = info.subject;
      t["session"] = info.session;
      t["age_months"] = info.age;
      truth_sessions.push_back(t);
    }
    {
      json manifest;
      manifest["subjects"] = subjects;
      std::ofstream os(out / "manifest.json");
      if (!os) throw IoError("cannot write manifest.json");
      os << manifest.dump(2) << "\n";
    }
    {
      json truth;
      truth["seed"] = spec.seed;
      truth["noise_sigma"] = spec.noise_sigma;
      truth["subject_spread"] = spec.subject_spread;
      truth["md"] = spec.md;
      truth["s0"] = spec.s0;
      truth["dims"] = spec.dims;
      truth["voxel_size"] = a->voxel;
      truth["regions"] = json::array();
      for (const auto& r : spec.regions) {
        json e;
        e["name"] = r.name;
        e["label"] = static_cast<int>(truth["regions"].size()) + 1;
        e["lo"] = r.lo;
        e["hi"] = r.hi;
        e["base_gfa"] = r.base_gfa;
        e["slope_gfa"] = r.slope_gfa;
        e["axis"] = {r.axis.x(), r.axis.y(), r.axis.z()};
        truth["regions"].push_back(e);
      }
      truth["subject_offsets"] = layout.subject_offsets;
      truth["sessions"] = truth_sessions;
      std::ofstream os(out / "truth.json");
      if (!os) throw IoError("cannot write truth.json");
      os << truth.dump(2) << "\n";
    }
    std::printf("phantom: %d subjects, %d sessions, grid %dx%dx%d -> %s\n",
                spec.n_subjects, static_cast<int>(layout.sessions.size()), spec.dims[0],
                spec.dims[1], spec.dims[2], a->out.c_str());
  });
}

void add_fit_command(CLI::App& app, bool to_odf) {
  struct Args {
    std::string dwi, bval, bvec, mask, out, config;
    int lmax = 6;
    double lambda = 0.006;
    int threads = 1;
  };
  auto a = std::make_shared<Args>();
  auto ov = std::make_shared<ConfigOverlay>();
  CLI::App* cmd = app.add_subcommand(
      to_odf ? "odf" : "fit-sh",
      to_odf ? "Fit SH coefficients and apply the spherical Radon transform"
             : "Fit signal-kind SH coefficients to a DWI volume");
  cmd->add_option("--dwi", a->dwi, "4D DWI volume")->required();
  cmd->add_option("--bval", a->bval, "b-values file")->required();
  cmd->add_option("--bvec", a->bvec, "gradient directions file")->required();
  cmd->add_option("--mask", a->mask, "mask volume (default: whole grid)");
  cmd->add_option("--out", a->out, "output SH field path (.nii.gz)")->required();
  cmd->add_option("--config", a->config, "JSON config mirroring the flags");
  ov->bind(cmd->add_option("--lmax", a->lmax, "even SH order"), "lmax", &a->lmax);
  ov->bind(cmd->add_option("--lambda", a->lambda, "regularization weight"), "lambda",
           &a->lambda);
  ov->bind(cmd->add_option("--threads", a->threads, "worker threads (0 = auto)"),
           "threads", &a->threads);

  cmd->callback([a, ov, to_odf]() {
    ov->apply(load_config_json(a->config));
    DwiVolume d;
    d.data = io::read_volume(a->dwi);
    d.scheme = dwi::load_fsl_scheme(a->bval, a->bvec);
    if (d.data.ncomp != d.scheme.size()) {
      throw ValidationError("volume count does not match the scheme");
    }
    const MaskVolume m = mask_or_full(a->mask, d.data);
    const ShField field =
        qball::fit_sh_volume(d, m, {a->lmax, a->lambda}, to_odf, a->threads);
    io::save_sh_field(a->out, field);
    std::printf("%s: %lld voxels in mask -> %s\n", to_odf ? "odf" : "fit-sh",
                static_cast<long long>(mask_count(field.mask)), a->out.c_str());
  });
}

void add_scalars_command(CLI::App& app) {
  struct Args {
    std::string dwi, bval, bvec, mask, out, config;
    int threads = 1;
  };
  auto a = std::make_shared<Args>();
  auto ov = std::make_shared<ConfigOverlay>();
  CLI::App* cmd =
      app.add_subcommand("scalars", "Tensor scalar maps (FA, MD, RD, AD, baseline)");
  cmd->add_option("--dwi", a->dwi, "4D DWI volume")->required();
  cmd->add_option("--bval", a->bval, "b-values file")->required();
  cmd->add_option("--bvec", a->bvec, "gradient directions file")->required();
  cmd->add_option("--mask", a->mask, "mask volume (default: whole grid)");
  cmd->add_option("--out", a->out, "output directory")->required();
  cmd->add_option("--config", a->config, "JSON config mirroring the flags");
  ov->bind(cmd->add_option("--threads", a->threads, "worker threads (0 = auto)"),
           "threads", &a->threads);

  cmd->callback([a, ov]() {
    ov->apply(load_config_json(a->config));
    DwiVolume d;
    d.data = io::read_volume(a->dwi);
    d.scheme = dwi::load_fsl_scheme(a->bval, a->bvec);
    if (d.data.ncomp != d.scheme.size()) {
      throw ValidationError("volume count does not match the scheme");
    }
    const MaskVolume m = mask_or_full(a->mask, d.data);
    const dwi::TensorMaps maps = dwi::tensor_scalar_maps(d, m, a->threads);
    const fs::path out(a->out);
    fs::create_directories(out);
    io::write_volume((out / "fa.nii.gz").string(), maps.fa);
    io::write_volume((out / "md.nii.gz").string(), maps.md);
    io::write_volume((out / "rd.nii.gz").string(), maps.rd);
    io::write_volume((out / "ad.nii.gz").string(), maps.ad);
    io::write_volume((out / "baseline.nii.gz").string(), maps.baseline);
    io::write_mask((out / "mask.nii.gz").string(), maps.mask);
    std::printf("scalars: %lld fitted voxels -> %s\n",
                static_cast<long long>(mask_count(maps.mask)), a->out.c_str());
  });
}

void add_warp_command(CLI::App& app) {
  struct Args {
    std::string in, dwi, bval, bvec, mask, warp, out, config;
    int threads = 1;
  };
  auto a = std::make_shared<Args>();
  auto ov = std::make_shared<ConfigOverlay>();
  CLI::App* cmd = app.add_subcommand(
      "warp-apply", "Resample through a displacement field and reorient ODFs/DWIs");
  auto* o_in = cmd->add_option("--in", a->in, "SH field to warp");
  cmd->add_option("--dwi", a->dwi, "raw DWI volume to warp instead")->excludes(o_in);
  cmd->add_option("--bval", a->bval, "b-values file (DWI mode)");
  cmd->add_option("--bvec", a->bvec, "gradient directions file (DWI mode)");
  cmd->add_option("--mask", a->mask, "mask volume (DWI mode; default whole grid)");
  cmd->add_option("--warp", a->warp, "displacement field (mm)")->required();
  cmd->add_option("--out", a->out, "output path (.nii.gz)")->required();
  cmd->add_option("--config", a->config, "JSON config mirroring the flags");
  ov->bind(cmd->add_option("--threads", a->threads, "worker threads (0 = auto)"),
           "threads", &a->threads);

  cmd->callback([a, ov]() {
    ov->apply(load_config_json(a->config));
    if (a->in.empty() && (a->dwi.empty() || a->bval.empty() || a->bvec.empty())) {
      throw ValidationError("warp-apply: need --in, or --dwi with --bval/--bvec");
    }
    const DisplacementField w = io::read_displacement_field(a->warp);
    const std::string base = io::strip_nii_extension(a->out);
    if (!a->in.empty()) {
      const ShField f = io::load_sh_field(a->in);
      const reorient::WarpedField warped = reorient::apply_warp(f, w, a->threads);
      io::save_sh_field(a->out, warped.field);
      io::write_labels(base + ".status.nii.gz", warped.status);
      std::printf("warp-apply: SH field -> %s\n", a->out.c_str());
      return;
    }
    DwiVolume d;
    d.data = io::read_volume(a->dwi);
    d.scheme = dwi::load_fsl_scheme(a->bval, a->bvec);
    if (d.data.ncomp != d.scheme.size()) {
      throw ValidationError("volume count does not match the scheme");
    }
    const MaskVolume m = mask_or_full(a->mask, d.data);
    const reorient::WarpedDwi warped = reorient::apply_warp_dwi(d, m, w, a->threads);
    io::write_volume(a->out, warped.data.data);
    dwi::save_fsl_scheme(warped.data.scheme, base + ".bval", base + ".bvec");
    io::write_mask(base + ".mask.nii.gz", warped.mask);
    io::write_labels(base + ".status.nii.gz", warped.status);
    std::printf("warp-apply: DWI volume -> %s\n", a->out.c_str());
  });
}

void add_lme_fit_command(CLI::App& app) {
  struct Args {
    std::string manifest, mask, out, config;
    int lmax = 6;
    double lambda = 0.006;
    int threads = 1;
    double guard_lo = 3.0, guard_hi = 36.0, guard_slack = 6.0;
  };
  auto a = std::make_shared<Args>();
  auto ov = std::make_shared<ConfigOverlay>();
  CLI::App* cmd = app.add_subcommand(
      "lme-fit", "Fit the per-voxel longitudinal trend model over a cohort manifest");
  cmd->add_option("--manifest", a->manifest, "cohort manifest JSON")->required();
  cmd->add_option("--mask", a->mask, "global mask for DWI sessions");
  cmd->add_option("--out", a->out, "output atlas directory")->required();
  cmd->add_option("--config", a->config, "JSON config mirroring the flags");
  ov->bind(cmd->add_option("--lmax", a->lmax, "even SH order"), "lmax", &a->lmax);
  ov->bind(cmd->add_option("--lambda", a->lambda, "regularization weight"), "lambda",
           &a->lambda);
  ov->bind(cmd->add_option("--threads", a->threads, "worker threads (0 = auto)"),
           "threads", &a->threads);
  ov->bind(cmd->add_option("--guard-lo", a->guard_lo, "guard window low edge, months"),
           "guard_lo", &a->guard_lo);
  ov->bind(cmd->add_option("--guard-hi", a->guard_hi, "guard window high edge, months"),
           "guard_hi", &a->guard_hi);
  ov->bind(cmd->add_option("--guard-slack", a->guard_slack, "guard slack, months"),
           "guard_slack", &a->guard_slack);

  cmd->callback([a, ov]() {
    ov->apply(load_config_json(a->config));
    const cli::Manifest m = cli::parse_manifest(a->manifest);
    const auto scans =
        cli::load_manifest_scans(m, a->lmax, a->lambda, a->mask, a->threads);
    atlas::AtlasOptions opts;
    opts.guard_lo = a->guard_lo;
    opts.guard_hi = a->guard_hi;
    opts.guard_slack = a->guard_slack;
    opts.manifest_digest = m.digest;
    const atlas::AtlasModel model = atlas::fit_atlas_field(scans, opts, a->threads);
    atlas::save_atlas(model, a->out);
    json ids = json::array();
    for (const auto& sub : m.subjects) ids.push_back(sub.id);
    std::ofstream os(fs::path(a->out) / "subject_ids.json");
    if (!os) throw IoError("cannot write subject_ids.json");
    os << ids.dump(2) << "\n";
    std::printf("lme-fit: %lld atlas voxels -> %s\n",
                static_cast<long long>(mask_count(model.mask)), a->out.c_str());
  });
}

void add_atlas_eval_command(CLI::App& app) {
  struct Args {
    std::string atlas, out, config;
    double age = 0;
    bool ignore_guard = false;
  };
  auto a = std::make_shared<Args>();
  CLI::App* cmd =
      app.add_subcommand("atlas-eval", "Evaluate the atlas trend at one age");
  cmd->add_option("--atlas", a->atlas, "atlas directory")->required();
  cmd->add_option("--age", a->age, "age in months")->required();
  cmd->add_option("--out", a->out, "output SH field path (.nii.gz)")->required();
  cmd->add_flag("--ignore-guard", a->ignore_guard, "permit extrapolation");

  cmd->callback([a]() {
    const atlas::AtlasModel model = atlas::load_atlas(a->atlas);
    const ShField field = atlas::eval_atlas_at_age(model, a->age, a->ignore_guard);
    io::save_sh_field(a->out, field);
    std::printf("atlas-eval: age %g months -> %s\n", a->age, a->out.c_str());
  });
}

void add_gfa_map_command(CLI::App& app) {
  struct Args {
    std::string in, atlas, out, config;
    double age = 0;
    int threads = 1;
  };
  auto a = std::make_shared<Args>();
  auto ov = std::make_shared<ConfigOverlay>();
  CLI::App* cmd = app.add_subcommand("gfa-map", "Closed-form GFA of an ODF field");
  auto* o_in = cmd->add_option("--in", a->in, "ODF SH field");
  auto* o_atlas =
      cmd->add_option("--atlas", a->atlas, "atlas directory (evaluate, then map)");
  o_atlas->excludes(o_in);
  auto* o_age = cmd->add_option("--age", a->age, "age in months (with --atlas)");
  o_age->needs(o_atlas);
  cmd->add_option("--out", a->out, "output scalar volume (.nii.gz)")->required();
  cmd->add_option("--config", a->config, "JSON config mirroring the flags");
  ov->bind(cmd->add_option("--threads", a->threads, "worker threads (0 = auto)"),
           "threads", &a->threads);

  cmd->callback([a, ov, o_atlas, o_age]() {
    ov->apply(load_config_json(a->config));
    ShField field;
    if (o_atlas->count() > 0) {
      if (o_age->count() == 0) {
        throw ValidationError("gfa-map: --atlas requires --age");
      }
      field = atlas::eval_atlas_at_age(atlas::load_atlas(a->atlas), a->age);
    } else if (!a->in.empty()) {
      field = io::load_sh_field(a->in);
    } else {
      throw ValidationError("gfa-map: need --in or --atlas with --age");
    }
    io::write_volume(a->out, qball::gfa_map(field, a->threads));
    std::printf("gfa-map: -> %s\n", a->out.c_str());
  });
}

void add_r2_map_command(CLI::App& app) {
  struct Args {
    std::string atlas, out;
  };
  auto a = std::make_shared<Args>();
  CLI::App* cmd =
      app.add_subcommand("r2-map", "Export the atlas goodness-of-fit volume");
  cmd->add_option("--atlas", a->atlas, "atlas directory")->required();
  cmd->add_option("--out", a->out, "output scalar volume (.nii.gz)")->required();
  cmd->callback([a]() {
    const atlas::AtlasModel model = atlas::load_atlas(a->atlas);
    io::write_volume(a->out, model.r2);
    std::printf("r2-map: -> %s\n", a->out.c_str());
  });
}

void add_track_command(CLI::App& app) {
  struct Args {
    std::string in, gfa, out, text, config;
    double step = 1.0, max_angle = 30.0, gfa_threshold = 0.1;
    double max_length = 250.0, min_length = 10.0;
    int seeds_per_voxel = 1;
    std::uint64_t seed = 0;
    int threads = 1;
  };
  auto a = std::make_shared<Args>();
  auto ov = std::make_shared<ConfigOverlay>();
  CLI::App* cmd =
      app.add_subcommand("track", "Deterministic whole-brain peak-following");
  cmd->add_option("--in", a->in, "ODF SH field")->required();
  cmd->add_option("--gfa", a->gfa, "GFA volume (default: computed from the field)");
  cmd->add_option("--out", a->out, "output streamline container (.trk)")->required();
  cmd->add_option("--text", a->text, "additional plain-text export path");
  cmd->add_option("--config", a->config, "JSON config mirroring the flags");
  ov->bind(cmd->add_option("--step", a->step, "step size in mm"), "step_size", &a->step);
  ov->bind(cmd->add_option("--max-angle", a->max_angle, "turning limit, degrees"),
           "max_angle", &a->max_angle);
  ov->bind(cmd->add_option("--gfa-threshold", a->gfa_threshold, "tracking GFA floor"),
           "gfa_threshold", &a->gfa_threshold);
  ov->bind(cmd->add_option("--max-length", a->max_length, "length cap, mm"),
           "max_length", &a->max_length);
  ov->bind(cmd->add_option("--min-length", a->min_length, "discard shorter than, mm"),
           "min_length", &a->min_length);
  ov->bind(cmd->add_option("--seeds-per-voxel", a->seeds_per_voxel, "seeds per voxel"),
           "seeds_per_voxel", &a->seeds_per_voxel);
  ov->bind(cmd->add_option("--seed", a->seed, "seed jitter stream"), "seed", &a->seed);
  ov->bind(cmd->add_option("--threads", a->threads, "worker threads (0 = auto)"),
           "threads", &a->threads);

  cmd->callback([a, ov]() {
    ov->apply(load_config_json(a->config));
    const ShField field = io::load_sh_field(a->in);
    ScalarVolume gfa;
    if (!a->gfa.empty()) {
      gfa = io::read_volume(a->gfa);
    } else {
      gfa = qball::gfa_map(field, a->threads);
    }
    track::TrackingParams p;
    p.step_size = a->step;
    p.max_angle = a->max_angle;
    p.gfa_threshold = a->gfa_threshold;
    p.max_length = a->max_length;
    p.min_length = a->min_length;
    p.seeds_per_voxel = a->seeds_per_voxel;
    const auto lines =
        track::whole_brain_track(field, gfa, p, a->seed, a->threads);
    track::save_streamlines(a->out, lines, field.coef.voxel_size);
    if (!a->text.empty()) track::export_streamlines_text(a->text, lines);
    std::size_t points = 0;
    for (const auto& l : lines) points += l.points.size();
    std::printf("track: %zu streamlines, %zu points -> %s\n", lines.size(), points,
                a->out.c_str());
  });
}

void add_roi_trends_command(CLI::App& app) {
  struct Args {
    std::string atlas, rois, out, config;
    double t_min = 3.0, t_max = 36.0, t_step = 1.0;
    bool population_only = false;
  };
  auto a = std::make_shared<Args>();
  auto ov = std::make_shared<ConfigOverlay>();
  CLI::App* cmd =
      app.add_subcommand("roi-trends", "Per-ROI GFA maturation curves as CSV");
  cmd->add_option("--atlas", a->atlas, "atlas directory")->required();
  cmd->add_option("--rois", a->rois, "integer ROI label volume")->required();
  cmd->add_option("--out", a->out, "output CSV path")->required();
  cmd->add_option("--config", a->config, "JSON config mirroring the flags");
  ov->bind(cmd->add_option("--t-min", a->t_min, "first age, months"), "t_min",
           &a->t_min);
  ov->bind(cmd->add_option("--t-max", a->t_max, "last age, months"), "t_max",
           &a->t_max);
  ov->bind(cmd->add_option("--t-step", a->t_step, "age spacing, months"), "t_step",
           &a->t_step);
  cmd->add_flag("--population-only", a->population_only, "omit subject columns");

  cmd->callback([a, ov]() {
    ov->apply(load_config_json(a->config));
    if (!(a->t_step > 0)) throw ValidationError("roi-trends: t-step must be positive");
    const atlas::AtlasModel model = atlas::load_atlas(a->atlas);
    const LabelVolume rois = io::read_labels(a->rois);
    std::vector<double> grid;
    for (double t = a->t_min; t <= a->t_max + 1e-9; t += a->t_step) grid.push_back(t);
    const cli::TrendTable table =
        cli::roi_trends(model, rois, grid, !a->population_only);
    cli::write_trends_csv(a->out, table);
    std::printf("roi-trends: %zu ROIs x %zu ages -> %s\n", table.labels.size(),
                table.t_grid.size(), a->out.c_str());
  });
}

void add_ncc_command(CLI::App& app) {
  struct Args {
    std::vector<std::string> maps;
    std::string mask, out;
  };
  auto a = std::make_shared<Args>();
  CLI::App* cmd = app.add_subcommand(
      "ncc-matrix", "Pairwise correlation of scalar maps; flags the least-correlated pair");
  cmd->add_option("--map", a->maps, "scalar map as name=path (repeatable)")
      ->required()
      ->expected(-2);
  cmd->add_option("--mask", a->mask, "mask volume")->required();
  cmd->add_option("--out", a->out, "output JSON report path");

  cmd->callback([a]() {
    std::vector<metrics::NamedMap> maps;
    for (const std::string& spec : a->maps) {
      const auto eq = spec.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
        throw ValidationError("ncc-matrix: --map expects name=path, got '" + spec + "'");
      }
      metrics::NamedMap m;
      m.name = spec.substr(0, eq);
      m.volume = io::read_volume(spec.substr(eq + 1));
      maps.push_back(std::move(m));
    }
    const MaskVolume mask = io::read_mask(a->mask);
    const metrics::NccReport report = metrics::ncc_matrix(maps, mask);
    if (!a->out.empty()) {
      json j;
      j["names"] = report.names;
      j["matrix"] = json::array();
      for (Eigen::Index i = 0; i < report.r.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index k = 0; k < report.r.cols(); ++k) row.push_back(report.r(i, k));
        j["matrix"].push_back(row);
      }
      j["least_pair"] = {report.names[static_cast<std::size_t>(report.least_i)],
                         report.names[static_cast<std::size_t>(report.least_j)]};
      j["summary"] = report.summary;
      std::ofstream os(a->out);
      if (!os) throw IoError("cannot write " + a->out);
      os << j.dump(2) << "\n";
    }
    std::printf("%s\n", report.summary.c_str());
  });
}

void add_run_command(CLI::App& app) {
  struct Args {
    std::string manifest, config, out;
    int threads = -1;
    std::uint64_t seed = 0;
    int lmax = -1;
    double lambda = -1;
    double max_angle = -1;
  };
  auto a = std::make_shared<Args>();
  CLI::App* cmd = app.add_subcommand(
      "run", "Full pipeline: fit, average, atlas, maps, optional tracking/trends");
  cmd->add_option("--manifest", a->manifest, "cohort manifest JSON")->required();
  cmd->add_option("--config", a->config, "pipeline config JSON");
  cmd->add_option("--out", a->out, "artifact directory")->required();
  auto* o_threads = cmd->add_option("--threads", a->threads, "worker threads (0 = auto)");
  auto* o_seed = cmd->add_option("--seed", a->seed, "tracking seed stream");
  auto* o_lmax = cmd->add_option("--lmax", a->lmax, "even SH order");
  auto* o_lambda = cmd->add_option("--lambda", a->lambda, "regularization weight");
  auto* o_angle = cmd->add_option("--max-angle", a->max_angle, "turning limit, degrees");

  cmd->callback([a, o_threads, o_seed, o_lmax, o_lambda, o_angle]() {
    const cli::Manifest manifest = cli::parse_manifest(a->manifest);
    cli::PipelineConfig cfg;
    if (!a->config.empty()) {
      cfg = cli::pipeline_config_from_json(load_config_json(a->config));
    }
    if (o_threads->count()) cfg.threads = a->threads;
    if (o_seed->count()) cfg.seed = a->seed;
    if (o_lmax->count()) cfg.l_max = a->lmax;
    if (o_lambda->count()) cfg.lambda = a->lambda;
    if (o_angle->count()) cfg.max_angle = a->max_angle;

    const cli::RunReport report = cli::pipeline_run(manifest, cfg, a->out);
    for (const auto& s : report.stages) {
      if (s.ran) {
        std::printf("stage %-8s ran      %8.2f s\n", s.name.c_str(), s.seconds);
      } else {
        std::printf("stage %-8s skipped  (up to date)\n", s.name.c_str());
      }
    }
    std::printf("run: artifacts in %s\n", a->out.c_str());
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voxel-wise HARDI processing: regularized Q-ball ODF reconstruction, "
               "longitudinal trend atlases, GFA/R2 maps, deterministic tractography"};
  app.set_version_flag("--version", cli::kVersion);
  app.require_subcommand(1);

  add_phantom_command(app);
  add_fit_command(app, false);
  add_fit_command(app, true);
  add_scalars_command(app);
  add_warp_command(app);
  add_lme_fit_command(app);
  add_atlas_eval_command(app);
  add_gfa_map_command(app);
  add_r2_map_command(app);
  add_track_command(app);
  add_roi_trends_command(app);
  add_ncc_command(app);
  add_run_command(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 3;
  }
  return 0;
}
