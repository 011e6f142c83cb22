#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace radapt {

/// FNV-1a 64-bit, used for provenance digests of parameter buffers and
/// output files. Not cryptographic; collision resistance is irrelevant here.
class Digest {
 public:
  Digest& update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001B3ULL;
    }
    return *this;
  }

  Digest& update(const std::string& s) { return update(s.data(), s.size()); }

  Digest& update(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    return update(&bits, sizeof(bits));
  }

  std::uint64_t value() const { return state_; }

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(state_));
    return std::string(buf);
  }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

std::string file_digest_hex(const std::string& path);

}  // namespace radapt
