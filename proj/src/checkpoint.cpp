#include "misder/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

namespace misder {
namespace {

constexpr char kMagic[8] = {'M', 'S', 'D', 'R', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void write_entry(std::string& out, const std::string& name, const Matrix& m) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  write_u32(out, 2);
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float f = static_cast<float>(m.data()[i]);
    char buf[4];
    std::memcpy(buf, &f, 4);
    out.append(buf, 4);
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  float f32() {
    need(4);
    float v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error("checkpoint: truncated data");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const std::string& body) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
}

}  // namespace

void Checkpoint::put(const std::string& name, const Matrix& values) {
  if (name.empty()) throw Error("checkpoint: empty entry name");
  if (!values.allFinite()) throw Error("checkpoint: non-finite values in '" + name + "'");
  entries_[name] = values;
}

void Checkpoint::put_all(std::span<ParamTensor* const> params) {
  for (const ParamTensor* p : params) put(*p);
}

const Matrix& Checkpoint::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("checkpoint: missing entry '" + name + "'");
  return it->second;
}

void Checkpoint::restore(ParamTensor& p) const {
  const Matrix& m = get(p.name);
  if (m.rows() != p.values.rows() || m.cols() != p.values.cols()) {
    throw Error("checkpoint: shape mismatch for '" + p.name + "'");
  }
  p.values = m;
  p.zero_grad();
}

void Checkpoint::restore_all(std::span<ParamTensor* const> params) const {
  for (ParamTensor* p : params) restore(*p);
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

std::vector<std::string> Checkpoint::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) {
    if (k.compare(0, prefix.size(), prefix) == 0) out.push_back(k);
  }
  return out;
}

std::string Checkpoint::group_bytes(const std::string& prefix) const {
  std::string out;
  for (const auto& [k, m] : entries_) {
    if (k.compare(0, prefix.size(), prefix) == 0) write_entry(out, k, m);
  }
  return out;
}

std::string Checkpoint::serialize() const {
  std::string body;
  for (const auto& [k, m] : entries_) write_entry(body, k, m);
  std::string out(kMagic, sizeof(kMagic));
  write_u32(out, kFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(entries_.size()));
  write_u32(out, crc(body));
  out += body;
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error("checkpoint: bad magic");
  }
  Reader r(bytes);
  r.str(sizeof(kMagic));
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) throw Error("checkpoint: unsupported format_version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  const std::uint32_t expected_crc = r.u32();
  if (crc(bytes.substr(r.pos())) != expected_crc) throw Error("checkpoint: checksum mismatch");
  Checkpoint ck;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 2) throw Error("checkpoint: unsupported rank for '" + name + "'");
    std::uint32_t rows = r.u32();
    std::uint32_t cols = rank == 2 ? r.u32() : 1;
    if (rank == 1) std::swap(rows, cols);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(r.f32());
    ck.entries_[name] = std::move(m);
  }
  if (!r.done()) throw Error("checkpoint: trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("checkpoint: write failed for '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace misder
