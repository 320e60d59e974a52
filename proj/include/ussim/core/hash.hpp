#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace ussim {

// 64-bit FNV-1a. Used for content hashes in manifests, checkpoints and metadata.
class Fnv1a {
 public:
  Fnv1a& update(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  template <class T>
  Fnv1a& update(std::span<const T> values) {
    return update(values.data(), values.size_bytes());
  }

  Fnv1a& update(std::string_view s) { return update(s.data(), s.size()); }

  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string hash_hex(const void* data, std::size_t size) {
  return to_hex(Fnv1a{}.update(data, size).digest());
}

}  // namespace ussim
