#include "famt/tensor_file.hpp"

#include <bit>
#include <cstring>

#include "famt/error.hpp"
#include "famt/text.hpp"

namespace famt {
namespace {

static_assert(std::endian::native == std::endian::little, "container writer assumes a little-endian host");

template <class T>
void put_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_floats(float* dst, size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("tensor container truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  size_t pos_ = 0;
};

}  // namespace

void TensorArchive::put(const std::string& name, const Matrix& m) {
  StoredTensor t;
  t.name = name;
  t.shape = {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())};
  t.values.resize(static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) t.values[i] = static_cast<float>(m.data()[i]);
  for (auto& existing : tensors_) {
    if (existing.name == name) {
      existing = std::move(t);
      return;
    }
  }
  tensors_.push_back(std::move(t));
}

const StoredTensor* TensorArchive::find(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return &t;
  return nullptr;
}

Matrix TensorArchive::matrix(const std::string& name) const {
  const StoredTensor* t = find(name);
  if (!t) throw FormatError("tensor '" + name + "' missing from container");
  if (t->shape.size() != 2) throw FormatError("tensor '" + name + "' is not rank 2");
  Matrix m(static_cast<Eigen::Index>(t->shape[0]), static_cast<Eigen::Index>(t->shape[1]));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = t->values[static_cast<size_t>(i)];
  return m;
}

std::string TensorArchive::serialize() const {
  std::string out = "FAMT";
  put_raw<uint32_t>(out, kVersion);
  put_raw<uint64_t>(out, config_text.size());
  out.append(config_text);
  put_raw<uint64_t>(out, tensors_.size());
  for (const auto& t : tensors_) {
    put_raw<uint32_t>(out, static_cast<uint32_t>(t.name.size()));
    out.append(t.name);
    put_raw<uint8_t>(out, kFloat32);
    put_raw<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
    for (uint64_t d : t.shape) put_raw<uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
  }
  return out;
}

TensorArchive TensorArchive::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_string(4) != "FAMT") throw FormatError("bad container magic");
  const auto version = r.get<uint32_t>();
  if (version != kVersion) throw FormatError("unsupported container version " + std::to_string(version));
  TensorArchive a;
  a.config_text = r.get_string(r.get<uint64_t>());
  const auto count = r.get<uint64_t>();
  for (uint64_t k = 0; k < count; ++k) {
    StoredTensor t;
    t.name = r.get_string(r.get<uint32_t>());
    if (r.get<uint8_t>() != kFloat32) throw FormatError("tensor '" + t.name + "' has unknown dtype");
    const auto rank = r.get<uint32_t>();
    uint64_t n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.get<uint64_t>());
      n *= t.shape.back();
    }
    t.values.resize(n);
    r.get_floats(t.values.data(), n);
    a.tensors_.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after tensor container");
  return a;
}

void TensorArchive::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

TensorArchive TensorArchive::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace famt
