#pragma once

#include "odfatlas/common.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace odfatlas::cli {

// One scan: either a raw DWI volume with its scheme files, or an already
// registered SH field; both may carry a displacement field and a mask.
struct ManifestSession {
  std::string id;
  double age = 0;  // months
  std::string dwi, bval, bvec;
  std::string sh;
  std::string warp;
  std::string mask;

  bool has_dwi() const { return !dwi.empty(); }
  bool has_sh() const { return !sh.empty(); }
};

struct ManifestSubject {
  std::string id;
  std::vector<ManifestSession> sessions;
};

struct Manifest {
  std::vector<ManifestSubject> subjects;  // sorted by id, sessions by id
  std::string root;    // directory the relative paths were resolved against
  std::string digest;  // structural hash: ids, ages, resolved paths

  int n_sessions() const {
    int n = 0;
    for (const auto& s : subjects) n += static_cast<int>(s.sessions.size());
    return n;
  }
};

// Validates everything it can and reports all findings in one error:
// duplicate ids, missing/negative ages, sessions naming neither input kind,
// dangling file paths.
Manifest parse_manifest(const std::string& path);
Manifest manifest_from_json(const nlohmann::json& doc, const std::string& root);

}  // namespace odfatlas::cli
