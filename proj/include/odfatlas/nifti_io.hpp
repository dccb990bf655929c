#pragma once

#include "odfatlas/volume.hpp"

#include <string>

namespace odfatlas::io {

// Minimal NIfTI-1 single-file (.nii / .nii.gz) codec. Reading handles both
// plain and gzip encodings transparently; writing picks gzip when the path
// ends in ".gz". Scalar and coefficient volumes are stored as float64 so
// write-then-read round trips are bitwise exact.
Volume<double> read_volume(const std::string& path);
void write_volume(const std::string& path, const Volume<double>& v);

MaskVolume read_mask(const std::string& path);
void write_mask(const std::string& path, const MaskVolume& m);

LabelVolume read_labels(const std::string& path);
void write_labels(const std::string& path, const LabelVolume& v);

// Displacement fields travel as 5D files: three vector components in the
// fifth dimension (dim[4] = 1), mm units, vector intent code.
DisplacementField read_displacement_field(const std::string& path);
void write_displacement_field(const std::string& path, const DisplacementField& f);

// SH fields: 4D coefficient volume, a mask volume next to it, and a JSON
// sidecar recording l_max, kind, lambda and the mask file name.
void save_sh_field(const std::string& path, const ShField& f);
ShField load_sh_field(const std::string& path);

// "field.nii.gz" -> "field"; used to derive sidecar and mask names.
std::string strip_nii_extension(const std::string& path);

}  // namespace odfatlas::io
