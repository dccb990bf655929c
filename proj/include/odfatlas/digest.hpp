#pragma once

#include "odfatlas/common.hpp"

#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>

namespace odfatlas {

// FNV-1a; content addressing for stage skipping, not security.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string digest_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string string_digest(std::string_view bytes) {
  return digest_hex(fnv1a64(bytes));
}

inline std::string file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for digest: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(is.gcount())), h);
    if (!is) break;
  }
  return digest_hex(h);
}

}  // namespace odfatlas
