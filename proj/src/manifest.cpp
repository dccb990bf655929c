#include "odfatlas/manifest.hpp"

#include "odfatlas/digest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace odfatlas::cli {

namespace fs = std::filesystem;

namespace {

std::string resolve(const std::string& root, const std::string& rel) {
  if (rel.empty()) return rel;
  const fs::path p(rel);
  if (p.is_absolute()) return p.lexically_normal().string();
  return (fs::path(root) / p).lexically_normal().string();
}

// Optional string field; type errors are findings, not exceptions.
std::string take_path(const nlohmann::json& node, const char* key,
                      const std::string& where, std::vector<std::string>& findings) {
  if (!node.contains(key)) return {};
  if (!node[key].is_string()) {
    findings.push_back(where + ": field '" + key + "' must be a string");
    return {};
  }
  return node[key].get<std::string>();
}

}  // namespace

Manifest manifest_from_json(const nlohmann::json& doc, const std::string& root) {
  std::vector<std::string> findings;
  Manifest m;
  m.root = root;

  if (!doc.is_object() || !doc.contains("subjects") || !doc["subjects"].is_array()) {
    throw ValidationError("manifest: top-level object with a 'subjects' array required");
  }
  if (doc["subjects"].empty()) {
    throw ValidationError("manifest: 'subjects' is empty");
  }

  std::set<std::string> subject_ids;
  std::set<std::pair<std::string, std::string>> session_keys;

  for (const auto& snode : doc["subjects"]) {
    ManifestSubject subject;
    if (!snode.is_object() || !snode.contains("id") || !snode["id"].is_string()) {
      findings.push_back("subject without a string 'id'");
      continue;
    }
    subject.id = snode["id"].get<std::string>();
    if (!subject_ids.insert(subject.id).second) {
      findings.push_back("duplicate subject id '" + subject.id + "'");
    }
    if (!snode.contains("sessions") || !snode["sessions"].is_array() ||
        snode["sessions"].empty()) {
      findings.push_back("subject '" + subject.id + "' has no sessions");
      continue;
    }
    for (const auto& enode : snode["sessions"]) {
      ManifestSession ses;
      if (!enode.is_object() || !enode.contains("id") || !enode["id"].is_string()) {
        findings.push_back("subject '" + subject.id + "' has a session without a string 'id'");
        continue;
      }
      ses.id = enode["id"].get<std::string>();
      const std::string where = "session (" + subject.id + ", " + ses.id + ")";
      if (!session_keys.insert({subject.id, ses.id}).second) {
        findings.push_back("duplicate " + where);
      }
      if (!enode.contains("age_months")) {
        findings.push_back(where + ": missing 'age_months'");
      } else if (!enode["age_months"].is_number()) {
        findings.push_back(where + ": 'age_months' must be a number");
      } else {
        ses.age = enode["age_months"].get<double>();
        if (!(ses.age >= 0) || !std::isfinite(ses.age)) {
          findings.push_back(where + ": 'age_months' must be finite and >= 0");
        }
      }
      ses.dwi = resolve(root, take_path(enode, "dwi", where, findings));
      ses.bval = resolve(root, take_path(enode, "bval", where, findings));
      ses.bvec = resolve(root, take_path(enode, "bvec", where, findings));
      ses.sh = resolve(root, take_path(enode, "sh", where, findings));
      ses.warp = resolve(root, take_path(enode, "warp", where, findings));
      ses.mask = resolve(root, take_path(enode, "mask", where, findings));

      if (ses.has_dwi()) {
        if (ses.bval.empty() || ses.bvec.empty()) {
          findings.push_back(where + ": 'dwi' requires 'bval' and 'bvec'");
        }
      } else if (!ses.has_sh()) {
        findings.push_back(where + ": needs either 'dwi' (+scheme) or 'sh'");
      }
      for (const std::string* p : {&ses.dwi, &ses.bval, &ses.bvec, &ses.sh,
                                   &ses.warp, &ses.mask}) {
        if (!p->empty() && !fs::exists(*p)) {
          findings.push_back(where + ": file not found: " + *p);
        }
      }
      subject.sessions.push_back(std::move(ses));
    }
    m.subjects.push_back(std::move(subject));
  }

  if (!findings.empty()) {
    std::ostringstream os;
    os << "manifest: " << findings.size() << " problem(s):";
    for (const auto& f : findings) os << "\n  - " << f;
    throw ValidationError(os.str());
  }

  std::sort(m.subjects.begin(), m.subjects.end(),
            [](const ManifestSubject& a, const ManifestSubject& b) { return a.id < b.id; });
  for (auto& s : m.subjects) {
    std::sort(s.sessions.begin(), s.sessions.end(),
              [](const ManifestSession& a, const ManifestSession& b) { return a.id < b.id; });
  }

  std::ostringstream canon;
  canon.imbue(std::locale::classic());
  canon.precision(17);
  for (const auto& s : m.subjects) {
    canon << s.id << '\n';
    for (const auto& e : s.sessions) {
      canon << "  " << e.id << ' ' << e.age << ' ' << e.dwi << ' ' << e.bval << ' '
            << e.bvec << ' ' << e.sh << ' ' << e.warp << ' ' << e.mask << '\n';
    }
  }
  m.digest = string_digest(canon.str());
  return m;
}

Manifest parse_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest: invalid JSON in " + path + ": " + e.what());
  }
  return manifest_from_json(doc, fs::path(path).parent_path().string());
}

}  // namespace odfatlas::cli
