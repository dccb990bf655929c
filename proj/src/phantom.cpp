#include "odfatlas/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace odfatlas::phantom {

namespace {

constexpr std::uint64_t kLayoutStream = 0x4c41594f55540000ULL;
constexpr std::uint64_t kOffsetStream = 0x4f46467345540000ULL;
constexpr std::uint64_t kNoiseStream = 0x4e4f495345000000ULL;

const dwi::GradientScheme& default_scheme() {
  static const dwi::GradientScheme s = dwi::make_halfsphere_scheme(64, 2000.0);
  return s;
}

const dwi::GradientScheme& scheme_of(const PhantomSpec& spec) {
  return spec.scheme.size() > 0 ? spec.scheme : default_scheme();
}

}  // namespace

GfaShapeLut::GfaShapeLut(const dwi::GradientScheme& scheme, const qball::QBallConfig& cfg,
                         double md, double max_shape, int n_samples) {
  if (n_samples < 2 || !(max_shape > 0.0) || max_shape >= 1.0) {
    throw ValidationError("GfaShapeLut: need n_samples >= 2 and 0 < max_shape < 1");
  }
  const qball::QBallFitter fitter(scheme, cfg);
  const auto dwi_idx = scheme.dwi_indices();
  shape_.resize(n_samples);
  gfa_.resize(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const double s = max_shape * i / (n_samples - 1);
    const auto tensor = dwi::prolate_tensor(Vec3(0, 0, 1), md * (1 + 2 * s), md * (1 - s));
    const Eigen::VectorXd sig = dwi::multi_tensor_signal({{1.0, tensor}}, scheme, 1.0);
    Eigen::VectorXd normalized(static_cast<Eigen::Index>(dwi_idx.size()));
    for (std::size_t k = 0; k < dwi_idx.size(); ++k) {
      normalized[static_cast<Eigen::Index>(k)] = sig[dwi_idx[k]];
    }
    shape_[i] = s;
    gfa_[i] = qball::gfa_closed_form(qball::frt_to_odf(fitter.fit_normalized(normalized)));
    if (i > 0 && gfa_[i] <= gfa_[i - 1]) {
      throw NumericalError("GfaShapeLut: GFA not strictly increasing in shape");
    }
  }
}

double GfaShapeLut::gfa_for_shape(double s) const {
  s = std::clamp(s, shape_.front(), shape_.back());
  const auto it = std::upper_bound(shape_.begin(), shape_.end(), s);
  if (it == shape_.begin()) return gfa_.front();
  if (it == shape_.end()) return gfa_.back();
  const std::size_t i = static_cast<std::size_t>(it - shape_.begin());
  const double t = (s - shape_[i - 1]) / (shape_[i] - shape_[i - 1]);
  return gfa_[i - 1] + t * (gfa_[i] - gfa_[i - 1]);
}

double GfaShapeLut::shape_for_gfa(double g) const {
  g = std::clamp(g, gfa_.front(), gfa_.back());
  const auto it = std::upper_bound(gfa_.begin(), gfa_.end(), g);
  if (it == gfa_.begin()) return shape_.front();
  if (it == gfa_.end()) return shape_.back();
  const std::size_t i = static_cast<std::size_t>(it - gfa_.begin());
  const double t = (g - gfa_[i - 1]) / (gfa_[i] - gfa_[i - 1]);
  return shape_[i - 1] + t * (shape_[i] - shape_[i - 1]);
}

PhantomSpec default_phantom_spec() {
  PhantomSpec spec;
  spec.scheme = default_scheme();
  spec.noise_sigma = 1.0;
  spec.subject_spread = 0.015;
  // dODF gfa saturates near 0.33 at this regularization, so the encoded
  // trends stay inside [0.08, 0.31] even with subject offsets
  spec.regions = {
      {"genu", {6, 4, 12}, {26, 10, 20}, 0.10, 0.0030, Vec3(1, 0, 0)},
      {"body", {6, 13, 12}, {26, 19, 20}, 0.08, 0.0025, Vec3(1, 0, 0)},
      {"splenium", {6, 22, 12}, {26, 28, 20}, 0.14, 0.0035, Vec3(1, 0, 0)},
  };
  return spec;
}

PhantomLayout phantom_layout(const PhantomSpec& spec) {
  if (spec.n_subjects < 1) throw ValidationError("phantom: need at least one subject");
  if (spec.min_sessions < 1 || spec.max_sessions < spec.min_sessions) {
    throw ValidationError("phantom: invalid session count range");
  }
  if (!(spec.age_min >= 0) || !(spec.age_max >= spec.age_min)) {
    throw ValidationError("phantom: invalid age range");
  }
  if (spec.rician) {
    throw ValidationError("phantom: the Rician noise option is reserved and not implemented");
  }

  PhantomLayout layout;
  layout.labels = LabelVolume(spec.dims, 1, spec.voxel_size, 0);
  layout.mask = full_mask(spec.dims, spec.voxel_size);
  for (std::size_t r = 0; r < spec.regions.size(); ++r) {
    const PhantomRegion& region = spec.regions[r];
    for (int a = 0; a < 3; ++a) {
      if (region.lo[a] < 0 || region.hi[a] > spec.dims[a] || region.lo[a] >= region.hi[a]) {
        throw ValidationError("phantom: region '" + region.name + "' box outside the grid");
      }
    }
    for (int z = region.lo[2]; z < region.hi[2]; ++z) {
      for (int y = region.lo[1]; y < region.hi[1]; ++y) {
        for (int x = region.lo[0]; x < region.hi[0]; ++x) {
          if (layout.labels.at(x, y, z) != 0) {
            throw ValidationError("phantom: region '" + region.name + "' overlaps another region");
          }
          layout.labels.at(x, y, z) = static_cast<std::int32_t>(r + 1);
        }
      }
    }
  }

  layout.subject_offsets.resize(static_cast<std::size_t>(spec.n_subjects));
  for (int s = 0; s < spec.n_subjects; ++s) {
    Rng rng(derive_seed(spec.seed, kOffsetStream, static_cast<std::uint64_t>(s)));
    layout.subject_offsets[static_cast<std::size_t>(s)] = spec.subject_spread * rng.normal();
  }

  for (int s = 0; s < spec.n_subjects; ++s) {
    Rng rng(derive_seed(spec.seed, kLayoutStream, static_cast<std::uint64_t>(s)));
    const int span = spec.max_sessions - spec.min_sessions + 1;
    const int n_sessions =
        spec.min_sessions + static_cast<int>(rng.next() % static_cast<std::uint64_t>(span));
    std::vector<double> ages(static_cast<std::size_t>(n_sessions));
    for (double& a : ages) a = rng.uniform(spec.age_min, spec.age_max);
    std::sort(ages.begin(), ages.end());
    for (int k = 0; k < n_sessions; ++k) {
      layout.sessions.push_back({s, k, ages[static_cast<std::size_t>(k)]});
    }
  }
  return layout;
}

double encoded_gfa(const PhantomSpec& spec, const PhantomLayout& layout,
                   const GfaShapeLut& lut, int region_label, int subject, double age) {
  if (region_label == 0) return lut.min_gfa();
  const auto& region = spec.regions.at(static_cast<std::size_t>(region_label - 1));
  const double offset = layout.subject_offsets.at(static_cast<std::size_t>(subject));
  return std::clamp(region.base_gfa + region.slope_gfa * age + offset,
                    lut.min_gfa(), lut.max_gfa());
}

DwiVolume generate_phantom_session(const PhantomSpec& spec, const PhantomLayout& layout,
                                   const GfaShapeLut& lut, int session_index) {
  const auto& info = layout.sessions.at(static_cast<std::size_t>(session_index));
  const dwi::GradientScheme& scheme = scheme_of(spec);
  const int n_grad = scheme.size();

  // one signal profile per region, shared by all voxels of that region
  std::vector<Eigen::VectorXd> profile(spec.regions.size() + 1);
  for (std::size_t r = 0; r < spec.regions.size(); ++r) {
    const double g = encoded_gfa(spec, layout, lut, static_cast<int>(r + 1),
                                 info.subject, info.age);
    const double s = lut.shape_for_gfa(g);
    const auto tensor = dwi::prolate_tensor(spec.regions[r].axis, spec.md * (1 + 2 * s),
                                            spec.md * (1 - s));
    profile[r + 1] = dwi::multi_tensor_signal({{1.0, tensor}}, scheme, spec.s0);
  }

  DwiVolume out;
  out.scheme = scheme;
  out.data = Volume<double>(spec.dims, n_grad, spec.voxel_size, 0.0);
  const std::int64_t n_vox = out.data.n_voxels();

  // the isotropic background carries a fixed low-frequency diffusivity
  // texture, like a mixed tissue/fluid field: diffusivity-derived maps share
  // this structure (and are never constant images) while anisotropy maps and
  // the baseline stay flat outside the bundles
  const auto background_md = [&spec](int x, int y, int z) {
    const double px = std::sin(2.0 * std::numbers::pi * (x + 0.5) / spec.dims[0]);
    const double py = std::sin(2.0 * std::numbers::pi * (y + 0.5) / spec.dims[1]);
    const double pz = std::sin(2.0 * std::numbers::pi * (z + 0.5) / spec.dims[2]);
    return spec.md * (1.0 + 0.6 * (px + py + pz) / 3.0);
  };

  Rng noise(derive_seed(spec.seed, kNoiseStream,
                        static_cast<std::uint64_t>(info.subject),
                        static_cast<std::uint64_t>(info.session)));
  for (std::int64_t i = 0; i < n_vox; ++i) {
    const auto label = static_cast<std::size_t>(layout.labels.data[static_cast<std::size_t>(i)]);
    const int x = static_cast<int>(i % spec.dims[0]);
    const int y = static_cast<int>((i / spec.dims[0]) % spec.dims[1]);
    const int z = static_cast<int>(i / (static_cast<std::int64_t>(spec.dims[0]) * spec.dims[1]));
    const double bg_md = label == 0 ? background_md(x, y, z) : 0.0;
    for (int g = 0; g < n_grad; ++g) {
      double v = label == 0
                     ? spec.s0 * std::exp(-scheme.bvals[static_cast<std::size_t>(g)] * bg_md)
                     : profile[label][g];
      if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise.normal();
      out.data.data[static_cast<std::size_t>(i + n_vox * g)] = std::max(v, 0.0);
    }
  }
  return out;
}

PhantomDataset generate_phantom(const PhantomSpec& spec, int threads) {
  PhantomDataset ds;
  ds.spec = spec;
  if (ds.spec.scheme.size() == 0) ds.spec.scheme = default_scheme();
  ds.layout = phantom_layout(spec);
  const GfaShapeLut lut(scheme_of(spec), spec.recon, spec.md);
  ds.sessions.resize(ds.layout.sessions.size());
  parallel_for_index(static_cast<std::int64_t>(ds.layout.sessions.size()), threads,
                     [&](std::int64_t i) {
                       ds.sessions[static_cast<std::size_t>(i)] = generate_phantom_session(
                           spec, ds.layout, lut, static_cast<int>(i));
                     });
  return ds;
}

}  // namespace odfatlas::phantom
