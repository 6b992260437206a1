#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace famt {

// 64-bit FNV-1a over raw bytes.
constexpr uint64_t fnv1a64(std::string_view bytes, uint64_t h = 14695981039346656037ull) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace famt
