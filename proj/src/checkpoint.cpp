#include "zhmt/checkpoint.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "zhmt/errors.hpp"
#include "zhmt/run_config.hpp"

namespace zhmt {

namespace {

constexpr char kMagic[8] = {'Z', 'H', 'M', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kDtypeF64 = 1;
enum Role : std::uint8_t { kFrozen = 0, kTrainable = 1, kAdamM = 2, kAdamV = 3 };

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <class T>
  void put(T v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(std::string_view s) {
    put<std::uint64_t>(s.size());
    buf_.append(s);
  }
  std::string& buf() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string bytes() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw CheckpointError("checkpoint truncated");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

void put_tensor(Writer& w, const std::string& name, Role role, const Tensor& t) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.buf().append(name);
  w.put<std::uint8_t>(kDtypeF64);
  w.put<std::uint8_t>(role);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
  for (std::size_t d : t.shape) w.put<std::uint64_t>(d);
  w.buf().append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
}

std::string meta_text(const std::map<std::string, std::string>& meta) {
  std::string s;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw CheckpointError("metadata entries must be single-line key=value");
    s += k + "=" + v + "\n";
  }
  return s;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.buf().append(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.bytes(serialize_model_config(c.model));
  w.bytes(meta_text(c.meta));
  w.bytes(c.log_tsv);
  w.put<std::uint64_t>(c.step);
  w.put<std::uint64_t>(c.adam.step);
  const std::size_t n = c.params.frozen.size() + c.params.trainable.size() + c.adam.m.size() + c.adam.v.size();
  w.put<std::uint64_t>(n);
  for (const auto& [name, t] : c.params.frozen) put_tensor(w, name, kFrozen, t);
  for (const auto& [name, t] : c.params.trainable) put_tensor(w, name, kTrainable, t);
  for (const auto& [name, t] : c.adam.m) put_tensor(w, name, kAdamM, t);
  for (const auto& [name, t] : c.adam.v) put_tensor(w, name, kAdamV, t);
  const std::uint64_t sum = fnv1a(w.buf());
  w.put<std::uint64_t>(sum);
  return std::move(w.buf());
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8) throw CheckpointError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  if (fnv1a(body) != stored) throw CheckpointError("checkpoint checksum mismatch (truncated or corrupt file)");

  Reader r(body.substr(sizeof kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  try {
    c.model = parse_model_config(r.bytes());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint model config: ") + e.what());
  }
  {
    std::istringstream in(r.bytes());
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw CheckpointError("malformed checkpoint metadata");
      c.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  c.log_tsv = r.bytes();
  c.step = r.get<std::uint64_t>();
  c.adam.step = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string name(len, '\0');
    r.raw(name.data(), len);
    const auto dtype = r.get<std::uint8_t>();
    const auto role = r.get<std::uint8_t>();
    if (dtype != kDtypeF64) throw CheckpointError("unsupported dtype tag for '" + name + "'");
    const auto ndim = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    Tensor t(shape);
    r.raw(t.data.data(), t.data.size() * sizeof(double));
    TensorMap* dst = nullptr;
    switch (role) {
      case kFrozen: dst = &c.params.frozen; break;
      case kTrainable: dst = &c.params.trainable; break;
      case kAdamM: dst = &c.adam.m; break;
      case kAdamV: dst = &c.adam.v; break;
      default: throw CheckpointError("unknown tensor role for '" + name + "'");
    }
    if (!dst->emplace(name, std::move(t)).second) throw CheckpointError("duplicate tensor '" + name + "'");
  }
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
  return c;
}

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".manifest";
  return p;
}

std::string manifest_text(const Checkpoint& c) {
  std::string s = "# zhmt checkpoint manifest v" + std::to_string(kCheckpointVersion) + "\n";
  s += "step\t" + std::to_string(c.step) + "\n";
  for (const auto& [k, v] : c.meta) s += "meta." + k + "\t" + v + "\n";
  s += "init_mode\t" + std::string(to_string(c.model.init_mode)) + "\n";
  s += "frozen_checksum\t" + hex64(c.params.frozen_checksum()) + "\n";
  s += "trainable_checksum\t" + hex64(c.params.trainable_checksum()) + "\n";
  auto list = [&](const TensorMap& m, const char* role) {
    for (const auto& [name, t] : m)
      s += std::string("tensor\t") + role + "\t" + name + "\t" + shape_string(t.shape) + "\t" + hex64(checksum(t)) + "\n";
  };
  list(c.params.frozen, "frozen");
  list(c.params.trainable, "trainable");
  s += serialize_model_config(c.model);
  return s;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(c);
  auto write = [](const std::filesystem::path& p, const std::string& data) {
    std::filesystem::path tmp = p;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write " + tmp.string());
      out.write(data.data(), static_cast<std::streamsize>(data.size()));
      if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, p);
  };
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write(path, bytes);
  write(manifest_path(path), manifest_text(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace zhmt
