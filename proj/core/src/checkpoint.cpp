#include "pfb/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "pfb/errors.hpp"

namespace pfb::ckpt {
namespace {

constexpr char kMagic[8] = {'P', 'F', 'B', 'C', 'K', 'P', 'T', '\0'};

struct Writer {
  std::string& out;
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
    bytes(v.data(), v.size() * sizeof(double));
  }
  void store(const nn::ParamStore& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.count()));
    for (const auto& [name, t] : s.items()) {
      str(name);
      pod<std::uint32_t>(static_cast<std::uint32_t>(t.rows()));
      pod<std::uint32_t>(static_cast<std::uint32_t>(t.cols()));
      bytes(t.data(), t.size() * sizeof(double));
    }
  }
};

struct Reader {
  const std::string& in;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > in.size()) throw ValidationError("checkpoint: truncated file");
  }
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(in.data() + pos, n);
    pos += n;
    return s;
  }
  std::vector<double> doubles() {
    const auto n = pod<std::uint32_t>();
    need(static_cast<std::size_t>(n) * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), in.data() + pos, static_cast<std::size_t>(n) * sizeof(double));
    pos += static_cast<std::size_t>(n) * sizeof(double);
    return v;
  }
  nn::ParamStore store() {
    nn::ParamStore s;
    const auto count = pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = str();
      const auto rows = pod<std::uint32_t>();
      const auto cols = pod<std::uint32_t>();
      if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24)) {
        throw ValidationError("checkpoint: tensor '" + name + "' has implausible shape");
      }
      const std::size_t n = static_cast<std::size_t>(rows) * cols;
      need(n * sizeof(double));
      std::vector<double> data(n);
      std::memcpy(data.data(), in.data() + pos, n * sizeof(double));
      pos += n * sizeof(double);
      s.add(std::move(name), Tensor(static_cast<int>(rows), static_cast<int>(cols),
                                    std::move(data)));
    }
    return s;
  }
};

}  // namespace

std::string Checkpoint::serialize() const {
  std::string out;
  Writer w{out};
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(version);
  w.pod<std::uint64_t>(seed);
  w.str(config_text);
  w.doubles(norm.x_mean);
  w.doubles(norm.x_std);
  w.doubles(norm.y_mean);
  w.doubles(norm.y_std);
  w.store(theta);
  w.store(phi);
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r{bytes};
  r.need(sizeof(kMagic));
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("checkpoint: bad magic, not a checkpoint file");
  }
  r.pos = sizeof(kMagic);
  Checkpoint c;
  c.version = r.pod<std::uint32_t>();
  if (c.version != 1) {
    throw ValidationError("checkpoint: unsupported version " + std::to_string(c.version));
  }
  c.seed = r.pod<std::uint64_t>();
  c.config_text = r.str();
  c.norm.x_mean = r.doubles();
  c.norm.x_std = r.doubles();
  c.norm.y_mean = r.doubles();
  c.norm.y_std = r.doubles();
  c.theta = r.store();
  c.phi = r.store();
  if (r.pos != bytes.size()) {
    throw ValidationError("checkpoint: trailing bytes after the parameter stores");
  }
  return c;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("checkpoint: cannot write '" + path + "'");
  const std::string bytes = serialize();
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ValidationError("checkpoint: write to '" + path + "' failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("checkpoint: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return deserialize(buf.str());
}

}  // namespace pfb::ckpt
