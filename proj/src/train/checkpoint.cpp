#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "sfae/raw_io.hpp"
#include "sfae/train.hpp"

namespace sfae::train {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'A', 'E'};
// magic + version + total length
constexpr std::size_t kPrefixSize = 4 + 4 + 8;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void string(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : in_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string string() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw TruncatedError("archive record runs past the end at byte " + std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<std::uint8_t> encode_archive(const Archive& archive) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kArchiveVersion);
  w.u64(0);  // total length, patched below
  w.string(archive.header);
  w.u32(static_cast<std::uint32_t>(archive.records.size()));
  for (const auto& [name, t] : archive.records) {
    w.string(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
  }
  auto& buf = w.buffer();
  const std::uint64_t total = buf.size() + 4;
  for (int i = 0; i < 8; ++i) buf[8 + i] = static_cast<std::uint8_t>(total >> (8 * i));
  w.u32(crc_of(buf));
  return std::move(buf);
}

Archive decode_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw TruncatedError("archive shorter than its magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw BadMagicError("not an SFAE archive (bad magic)");
  if (bytes.size() < kPrefixSize) throw TruncatedError("archive header truncated");
  Reader prefix(bytes.subspan(4));
  const std::uint32_t version = prefix.u32();
  if (version != kArchiveVersion) {
    throw VersionError("unsupported archive version " + std::to_string(version) + " (supported: " +
                       std::to_string(kArchiveVersion) + ")");
  }
  const std::uint64_t total = prefix.u64();
  if (bytes.size() < total) {
    throw TruncatedError("archive truncated: " + std::to_string(bytes.size()) + " of " + std::to_string(total) +
                         " bytes");
  }
  if (bytes.size() > total || total < kPrefixSize + 4) {
    throw CheckpointError("archive length field " + std::to_string(total) + " does not match file size " +
                          std::to_string(bytes.size()));
  }
  const auto body = bytes.first(total - 4);
  Reader tail(bytes.subspan(total - 4));
  const std::uint32_t stored = tail.u32();
  if (crc_of(body) != stored) throw ChecksumError("archive checksum mismatch");

  Reader r(body.subspan(kPrefixSize));
  Archive a;
  a.header = r.string();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string();
    const std::uint32_t rank = r.u32();
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = ad::numel(shape);
    if (n > r.remaining() / 8) throw TruncatedError("record " + name + " payload truncated");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    a.records.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after the last record");
  return a;
}

void save_archive(const Archive& archive, const std::string& path) {
  const auto bytes = encode_archive(archive);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io::IoError(path, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw io::IoError(path, "failed writing " + path);
}

Archive load_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io::IoError(path, "cannot open " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  KeyValues header = checkpoint.config.to_kv();
  header.set("step", std::to_string(checkpoint.step));
  header.set("rng_state", checkpoint.rng_state);
  save_archive({header.to_text(), checkpoint.tensors}, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Archive a = load_archive(path);
  KeyValues header = KeyValues::parse(a.header, path);
  Checkpoint c;
  c.step = static_cast<std::uint64_t>(header.get_int("step"));
  c.rng_state = header.get_string("rng_state");
  KeyValues config;
  for (const auto& [key, value] : header.entries()) {
    if (key != "step" && key != "rng_state") config.set(key, value);
  }
  c.config = TrainConfig::from_kv(config);
  c.tensors = std::move(a.records);
  return c;
}

net::NetParams params_from_checkpoint(const Checkpoint& checkpoint) {
  net::NetParams p = net::init_params(checkpoint.config.net_config(), checkpoint.config.seed);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : checkpoint.tensors) by_name[name] = &t;
  for (auto& [name, t] : p.named()) {
    auto it = by_name.find("param/" + name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter " + name);
    if (it->second->shape() != t.shape()) {
      throw CheckpointError("parameter " + name + " has shape " + ad::to_string(it->second->shape()) +
                            " in the checkpoint but the network expects " + ad::to_string(t.shape()));
    }
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
  return p;
}

}  // namespace sfae::train
