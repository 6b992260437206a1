#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "famt/linalg.hpp"

namespace famt {

// Binary named-tensor container shared by checkpoints and alignment artifacts.
//
// Layout (all integers little-endian):
//   "FAMT" | u32 version | u64 config length | config bytes | u64 tensor count
//   per tensor: u32 name length | name bytes | u8 dtype | u32 rank |
//               rank x u64 dims | payload (float32, row-major)
struct StoredTensor {
  std::string name;
  std::vector<uint64_t> shape;
  std::vector<float> values;
};

class TensorArchive {
 public:
  static constexpr uint32_t kVersion = 1;
  static constexpr uint8_t kFloat32 = 0;

  std::string config_text;

  void put(const std::string& name, const Matrix& m);
  const StoredTensor* find(const std::string& name) const;
  Matrix matrix(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }
  const std::vector<StoredTensor>& tensors() const { return tensors_; }

  std::string serialize() const;
  static TensorArchive deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::vector<StoredTensor> tensors_;
};

}  // namespace famt
