#include "odfatlas/nifti_io.hpp"

#include <json.hpp>
#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace odfatlas::io {

namespace {

// NIfTI-1 header, 348 bytes, natural alignment matches the on-disk layout.
struct NiftiHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;
constexpr std::int16_t kIntentVector = 1007;

int dtype_bytes(std::int16_t dt) {
  switch (dt) {
    case kDtUint8: return 1;
    case kDtInt16: return 2;
    case kDtInt32: return 4;
    case kDtFloat32: return 4;
    case kDtFloat64: return 8;
    default: return 0;
  }
}

class GzReader {
public:
  explicit GzReader(const std::string& path) : path_(path) {
    f_ = gzopen(path.c_str(), "rb");
    if (!f_) throw IoError("cannot open " + path);
  }
  ~GzReader() {
    if (f_) gzclose(f_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  void read_exact(void* dst, std::size_t n, const char* what) {
    std::size_t done = 0;
    auto* p = static_cast<unsigned char*>(dst);
    while (done < n) {
      const unsigned chunk =
          static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
      const int got = gzread(f_, p + done, chunk);
      if (got <= 0) {
        throw IoError(path_ + ": truncated file while reading " + what +
                      " (offset " + std::to_string(offset_ + done) + ")");
      }
      done += static_cast<std::size_t>(got);
    }
    offset_ += n;
  }

  void skip(std::size_t n) {
    std::vector<unsigned char> junk(std::min<std::size_t>(n, 4096));
    while (n > 0) {
      const std::size_t chunk = std::min(n, junk.size());
      read_exact(junk.data(), chunk, "header extension");
      n -= chunk;
    }
  }

private:
  std::string path_;
  gzFile f_ = nullptr;
  std::size_t offset_ = 0;
};

class NiftiWriter {
public:
  NiftiWriter(const std::string& path, bool gz) : path_(path), gz_(gz) {
    if (gz_) {
      gzf_ = gzopen(path.c_str(), "wb");
      if (!gzf_) throw IoError("cannot write " + path);
    } else {
      out_.open(path, std::ios::binary);
      if (!out_) throw IoError("cannot write " + path);
    }
  }
  ~NiftiWriter() { close(); }
  NiftiWriter(const NiftiWriter&) = delete;
  NiftiWriter& operator=(const NiftiWriter&) = delete;

  void write(const void* src, std::size_t n) {
    if (gz_) {
      const auto* p = static_cast<const unsigned char*>(src);
      std::size_t done = 0;
      while (done < n) {
        const unsigned chunk =
            static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
        if (gzwrite(gzf_, p + done, chunk) != static_cast<int>(chunk)) {
          throw IoError("write failure on " + path_);
        }
        done += chunk;
      }
    } else {
      out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
      if (!out_) throw IoError("write failure on " + path_);
    }
  }

  void close() {
    if (gz_ && gzf_) {
      if (gzclose(gzf_) != Z_OK) throw IoError("close failure on " + path_);
      gzf_ = nullptr;
    } else if (!gz_ && out_.is_open()) {
      out_.close();
      if (!out_) throw IoError("close failure on " + path_);
    }
  }

private:
  std::string path_;
  bool gz_;
  gzFile gzf_ = nullptr;
  std::ofstream out_;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct RawImage {
  std::array<int, 3> dims;
  Vec3 voxel_size;
  int ncomp;            // length of the 4th dimension
  int nvec;             // length of the 5th dimension (1 unless a vector file)
  std::int16_t intent_code;
  std::vector<double> data;  // x fastest, higher dimensions slower
};

RawImage read_raw(const std::string& path) {
  GzReader in(path);
  NiftiHeader h;
  in.read_exact(&h, sizeof(h), "header");

  if (h.sizeof_hdr != 348) {
    std::int32_t swapped = h.sizeof_hdr;
    auto* b = reinterpret_cast<unsigned char*>(&swapped);
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
    if (swapped == 348) {
      throw IoError(path + ": byte-swapped NIfTI files are not supported (offset 0)");
    }
    throw IoError(path + ": not a NIfTI-1 file, sizeof_hdr=" +
                  std::to_string(h.sizeof_hdr) + " (offset 0)");
  }
  if (std::strncmp(h.magic, "n+1", 4) != 0) {
    throw IoError(path + ": bad magic, expected n+1 (offset 344)");
  }
  const int ndim = h.dim[0];
  if (ndim < 3 || ndim > 5) {
    throw IoError(path + ": unsupported dimensionality dim[0]=" + std::to_string(ndim));
  }
  const int bytes = dtype_bytes(h.datatype);
  if (bytes == 0) {
    throw IoError(path + ": unsupported datatype code " + std::to_string(h.datatype));
  }

  RawImage img;
  img.intent_code = h.intent_code;
  std::int64_t total = 1;
  for (int d = 1; d <= 5; ++d) {
    int n = (d <= ndim) ? h.dim[d] : 1;
    if (n < 1) {
      throw IoError(path + ": non-positive dim[" + std::to_string(d) + "]");
    }
    total *= n;
    if (total > (std::int64_t{1} << 33)) {
      throw IoError(path + ": dimension overflow, more than 2^33 elements");
    }
    if (d <= 3) img.dims[d - 1] = n;
    if (d == 4) img.ncomp = n;
    if (d == 5) img.nvec = n;
  }
  for (int d = 0; d < 3; ++d) {
    const float p = h.pixdim[d + 1];
    if (!(p > 0.0f) || !std::isfinite(p)) {
      throw IoError(path + ": non-positive pixdim[" + std::to_string(d + 1) + "]");
    }
    img.voxel_size[d] = static_cast<double>(p);
  }

  const auto vox_offset = static_cast<std::int64_t>(h.vox_offset);
  if (vox_offset < 348) {
    throw IoError(path + ": vox_offset " + std::to_string(vox_offset) + " below header size");
  }
  in.skip(static_cast<std::size_t>(vox_offset - 348));

  std::vector<unsigned char> buf(static_cast<std::size_t>(total) * bytes);
  in.read_exact(buf.data(), buf.size(), "voxel data");

  img.data.resize(static_cast<std::size_t>(total));
  const unsigned char* p = buf.data();
  switch (h.datatype) {
    case kDtUint8:
      for (std::int64_t i = 0; i < total; ++i) img.data[i] = p[i];
      break;
    case kDtInt16: {
      const auto* v = reinterpret_cast<const std::int16_t*>(p);
      for (std::int64_t i = 0; i < total; ++i) img.data[i] = v[i];
      break;
    }
    case kDtInt32: {
      const auto* v = reinterpret_cast<const std::int32_t*>(p);
      for (std::int64_t i = 0; i < total; ++i) img.data[i] = v[i];
      break;
    }
    case kDtFloat32: {
      const auto* v = reinterpret_cast<const float*>(p);
      for (std::int64_t i = 0; i < total; ++i) img.data[i] = v[i];
      break;
    }
    case kDtFloat64: {
      const auto* v = reinterpret_cast<const double*>(p);
      for (std::int64_t i = 0; i < total; ++i) img.data[i] = v[i];
      break;
    }
    default: break;
  }

  const double slope = h.scl_slope;
  const double inter = h.scl_inter;
  if (slope != 0.0 && !(slope == 1.0 && inter == 0.0)) {
    for (double& v : img.data) v = slope * v + inter;
  }
  return img;
}

NiftiHeader make_header(std::array<int, 3> dims, Vec3 vox, int ncomp, int nvec,
                        std::int16_t datatype, std::int16_t intent) {
  NiftiHeader h;
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = 348;
  h.regular = 'r';
  const bool vec = nvec > 1;
  h.dim[0] = static_cast<std::int16_t>(vec ? 5 : (ncomp > 1 ? 4 : 3));
  h.dim[1] = static_cast<std::int16_t>(dims[0]);
  h.dim[2] = static_cast<std::int16_t>(dims[1]);
  h.dim[3] = static_cast<std::int16_t>(dims[2]);
  h.dim[4] = static_cast<std::int16_t>(vec ? 1 : ncomp);
  h.dim[5] = static_cast<std::int16_t>(vec ? nvec : 1);
  h.dim[6] = 1;
  h.dim[7] = 1;
  h.intent_code = intent;
  h.datatype = datatype;
  h.bitpix = static_cast<std::int16_t>(8 * dtype_bytes(datatype));
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(vox.x());
  h.pixdim[2] = static_cast<float>(vox.y());
  h.pixdim[3] = static_cast<float>(vox.z());
  h.pixdim[4] = 1.0f;
  h.pixdim[5] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // millimeters
  std::strncpy(h.descrip, "odfatlas", sizeof(h.descrip) - 1);
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(vox.x());
  h.srow_y[1] = static_cast<float>(vox.y());
  h.srow_z[2] = static_cast<float>(vox.z());
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

template <typename T>
void write_nifti(const std::string& path, std::array<int, 3> dims, Vec3 vox,
                 int ncomp, int nvec, std::int16_t datatype, std::int16_t intent,
                 const std::vector<T>& payload) {
  for (int d = 0; d < 3; ++d) {
    if (dims[d] > 32767) {
      throw ValidationError("NIfTI dimension " + std::to_string(dims[d]) +
                            " exceeds the int16 header field");
    }
  }
  if (ncomp > 32767 || nvec > 32767) {
    throw ValidationError("NIfTI component count exceeds the int16 header field");
  }
  const NiftiHeader h = make_header(dims, vox, ncomp, nvec, datatype, intent);
  NiftiWriter out(path, ends_with(path, ".gz"));
  out.write(&h, sizeof(h));
  const char extender[4] = {0, 0, 0, 0};
  out.write(extender, 4);
  out.write(payload.data(), payload.size() * sizeof(T));
  out.close();
}

}  // namespace

std::string strip_nii_extension(const std::string& path) {
  if (ends_with(path, ".nii.gz")) return path.substr(0, path.size() - 7);
  if (ends_with(path, ".nii")) return path.substr(0, path.size() - 4);
  return path;
}

Volume<double> read_volume(const std::string& path) {
  RawImage raw = read_raw(path);
  if (raw.nvec != 1) {
    throw IoError(path + ": vector-valued file, expected a scalar or 4D volume");
  }
  Volume<double> v(raw.dims, raw.ncomp, raw.voxel_size);
  v.data = std::move(raw.data);
  return v;
}

void write_volume(const std::string& path, const Volume<double>& v) {
  write_nifti(path, v.dims, v.voxel_size, v.ncomp, 1, kDtFloat64, 0, v.data);
}

MaskVolume read_mask(const std::string& path) {
  RawImage raw = read_raw(path);
  if (raw.ncomp != 1 || raw.nvec != 1) {
    throw IoError(path + ": mask must be a 3D volume");
  }
  MaskVolume m(raw.dims, 1, raw.voxel_size);
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    m.data[i] = raw.data[i] != 0.0 ? 1 : 0;
  }
  return m;
}

void write_mask(const std::string& path, const MaskVolume& m) {
  write_nifti(path, m.dims, m.voxel_size, 1, 1, kDtUint8, 0, m.data);
}

LabelVolume read_labels(const std::string& path) {
  RawImage raw = read_raw(path);
  if (raw.ncomp != 1 || raw.nvec != 1) {
    throw IoError(path + ": label volume must be 3D");
  }
  LabelVolume v(raw.dims, 1, raw.voxel_size);
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    const double x = raw.data[i];
    if (x < 0 || x != std::floor(x)) {
      throw IoError(path + ": non-integer or negative label value " + std::to_string(x));
    }
    v.data[i] = static_cast<std::int32_t>(x);
  }
  return v;
}

void write_labels(const std::string& path, const LabelVolume& v) {
  write_nifti(path, v.dims, v.voxel_size, 1, 1, kDtInt32, 0, v.data);
}

DisplacementField read_displacement_field(const std::string& path) {
  RawImage raw = read_raw(path);
  if (raw.nvec != 3 || raw.ncomp != 1) {
    throw IoError(path + ": displacement field must store 3 vector components in dim 5");
  }
  DisplacementField f;
  f.dims = raw.dims;
  f.voxel_size = raw.voxel_size;
  const std::int64_t n = f.n_voxels();
  f.u.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    f.u[i] = Vec3(raw.data[i], raw.data[i + n], raw.data[i + 2 * n]);
    if (!f.u[i].allFinite()) {
      throw IoError(path + ": non-finite displacement at linear index " + std::to_string(i));
    }
  }
  return f;
}

void write_displacement_field(const std::string& path, const DisplacementField& f) {
  const std::int64_t n = f.n_voxels();
  if (static_cast<std::int64_t>(f.u.size()) != n) {
    throw ValidationError("displacement field size does not match dims");
  }
  std::vector<double> payload(static_cast<std::size_t>(3 * n));
  for (std::int64_t i = 0; i < n; ++i) {
    payload[i] = f.u[i].x();
    payload[i + n] = f.u[i].y();
    payload[i + 2 * n] = f.u[i].z();
  }
  write_nifti(path, f.dims, f.voxel_size, 1, 3, kDtFloat64, kIntentVector, payload);
}

void save_sh_field(const std::string& path, const ShField& f) {
  if (!same_grid(f.coef, f.mask)) {
    throw ValidationError("SH field and mask grids differ");
  }
  const std::string base = strip_nii_extension(path);
  const std::string mask_path = base + ".mask.nii.gz";
  write_volume(path, f.coef);
  write_mask(mask_path, f.mask);

  nlohmann::json meta;
  meta["l_max"] = f.l_max;
  meta["kind"] = to_string(f.kind);
  meta["lambda"] = f.lambda;
  meta["mask"] = std::filesystem::path(mask_path).filename().string();
  std::ofstream side(base + ".json");
  if (!side) throw IoError("cannot write " + base + ".json");
  side << meta.dump(2) << "\n";
}

ShField load_sh_field(const std::string& path) {
  const std::string base = strip_nii_extension(path);
  std::ifstream side(base + ".json");
  if (!side) throw IoError("missing SH field sidecar " + base + ".json");
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(base + ".json: " + e.what());
  }

  ShField f;
  f.coef = read_volume(path);
  try {
    f.l_max = meta.at("l_max").get<int>();
    f.kind = sh_kind_from_string(meta.at("kind").get<std::string>());
    f.lambda = meta.at("lambda").get<double>();
    const std::string mask_name = meta.at("mask").get<std::string>();
    const auto mask_path = std::filesystem::path(path).parent_path() / mask_name;
    f.mask = read_mask(mask_path.string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(base + ".json: " + e.what());
  }
  if (!same_grid(f.coef, f.mask)) {
    throw IoError(path + ": mask grid does not match the coefficient volume");
  }
  const int expect = (f.l_max / 2 + 1) * (f.l_max + 1);
  if (f.coef.ncomp != expect) {
    throw IoError(path + ": " + std::to_string(f.coef.ncomp) +
                  " components inconsistent with l_max " + std::to_string(f.l_max));
  }
  return f;
}

}  // namespace odfatlas::io
