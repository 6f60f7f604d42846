// SPDX-License-Identifier: Apache-2.0
#include "affseq/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "affseq/error.hpp"
#include "affseq/layers.hpp"

namespace affseq {
namespace {

constexpr char kMagic[4] = {'A', 'F', 'C', 'K'};

std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  while (n > 0) {
    auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xFF));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
  void raw(const void* p, std::size_t n) {
    auto* c = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  std::size_t size() const { return bytes_.size(); }
  const unsigned char* at(std::size_t offset) const { return bytes_.data() + offset; }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size, std::string file)
      : data_(data), size_(size), file_(std::move(file)) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > size_) {
      throw TruncationError("checkpoint " + file_ + " (" + what + ")", pos_ + n, size_);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return data_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    auto v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  const unsigned char* take(std::size_t n, const char* what) {
    need(n, what);
    const unsigned char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string file_;
};

std::string encode_config(const std::map<std::string, std::string>& config) {
  std::string text;
  for (const auto& [k, v] : config) text += k + "=" + v + "\n";
  return text;
}

std::map<std::string, std::string> decode_config(std::string_view text) {
  std::map<std::string, std::string> config;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("checkpoint config line without '='");
    config.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
  }
  return config;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::size_t Checkpoint::epoch() const {
  auto it = config.find("epoch");
  if (it == config.end()) return 0;
  std::size_t v = 0;
  std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  return v;
}

std::optional<double> Checkpoint::best_score() const {
  auto it = config.find("best_score");
  if (it == config.end() || it->second == "none") return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc()) throw FormatError("checkpoint best_score is not a number");
  return v;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  std::string config = encode_config(ckpt.config);
  w.u32(static_cast<std::uint32_t>(config.size()));
  w.raw(config.data(), config.size());
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xFFFF) throw DomainError("tensor name too long: " + t.name);
    if (t.value.rank() > 0xFF) throw DomainError("tensor rank too large: " + t.name);
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    std::size_t payload_start = w.size();
    for (double v : t.value.values()) w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    w.u32(crc32_of(w.at(payload_start), w.size() - payload_start));
  }
  w.u32(crc32_of(w.at(0), w.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::string file = path.string();
  Reader r(bytes.data(), bytes.size(), file);

  if (std::memcmp(r.take(4, "magic"), kMagic, 4) != 0) {
    throw FormatError("checkpoint magic mismatch in " + file);
  }
  std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " unsupported in " +
                      file);
  }
  std::uint32_t config_len = r.u32("config length");
  const auto* config_bytes = r.take(config_len, "config");
  Checkpoint ckpt;
  ckpt.config =
      decode_config(std::string_view(reinterpret_cast<const char*>(config_bytes), config_len));

  std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = r.u16("tensor name length");
    const auto* name = r.take(name_len, "tensor name");
    std::uint8_t rank = r.u8("tensor rank");
    Tensor::Shape shape(rank);
    std::size_t elements = 1;
    for (auto& d : shape) {
      d = r.u32("tensor dims");
      elements *= d;
    }
    const auto* payload = r.take(4 * elements, "tensor payload");
    std::uint32_t stored = r.u32("tensor crc");
    NamedTensor t{std::string(reinterpret_cast<const char*>(name), name_len), Tensor(shape)};
    if (crc32_of(payload, 4 * elements) != stored) {
      throw ChecksumError("checkpoint " + file + ": CRC mismatch in tensor " + t.name);
    }
    for (std::size_t k = 0; k < elements; ++k) {
      std::uint32_t bits = static_cast<std::uint32_t>(payload[4 * k]) |
                           (static_cast<std::uint32_t>(payload[4 * k + 1]) << 8) |
                           (static_cast<std::uint32_t>(payload[4 * k + 2]) << 16) |
                           (static_cast<std::uint32_t>(payload[4 * k + 3]) << 24);
      t.value[k] = std::bit_cast<float>(bits);
    }
    ckpt.tensors.push_back(std::move(t));
  }
  std::size_t body = r.pos();
  std::uint32_t stored = r.u32("file crc");
  if (crc32_of(bytes.data(), body) != stored) {
    throw ChecksumError("checkpoint " + file + ": file CRC mismatch");
  }
  if (r.pos() != bytes.size()) {
    throw FormatError("checkpoint " + file + " has trailing bytes");
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  ModelConfig stored = ckpt.model_config();
  if (stored.variant != expected.variant) {
    throw ConfigError("checkpoint " + path.string() + " holds model.variant '" +
                      std::string(variant_name(stored.variant)) + "' but '" +
                      std::string(variant_name(expected.variant)) + "' was requested");
  }
  if (stored.cell != expected.cell) {
    throw ConfigError("checkpoint " + path.string() + " holds model.cell '" +
                      std::string(cell_name(stored.cell)) + "' but '" +
                      std::string(cell_name(expected.cell)) + "' was requested");
  }
  return ckpt;
}

Checkpoint capture_checkpoint(Model& model, const RmsProp* optimizer,
                              const NormalizationStats& stats, std::size_t epoch,
                              std::optional<double> best_score) {
  Checkpoint ckpt;
  ckpt.config = model.config().to_keys();
  ckpt.config["epoch"] = std::to_string(epoch);
  ckpt.config["best_score"] = best_score ? format_double(*best_score) : "none";
  for (auto* p : model.parameters()) ckpt.tensors.push_back({"param:" + p->name, p->value});
  if (optimizer) {
    for (const auto& [name, cache] : optimizer->caches()) {
      ckpt.tensors.push_back({"opt:" + name, cache});
    }
  }
  for (auto m : kAllModalities) {
    const auto* s = stats.get(m);
    if (!s) continue;
    const std::string base = "norm:" + std::string(modality_name(m));
    ckpt.tensors.push_back({base + ":mean", Tensor({s->mean.size()}, s->mean)});
    ckpt.tensors.push_back({base + ":std", Tensor({s->stddev.size()}, s->stddev)});
  }
  return ckpt;
}

void restore_model(const Checkpoint& ckpt, Model& model) {
  for (auto* p : model.parameters()) {
    const Tensor* t = ckpt.find("param:" + p->name);
    if (!t) throw FormatError("checkpoint lacks parameter " + p->name);
    if (t->shape() != p->value.shape()) {
      throw FormatError("checkpoint parameter " + p->name + " has shape " +
                        shape_string(t->shape()) + ", model expects " +
                        shape_string(p->value.shape()));
    }
    p->value = *t;
  }
}

void restore_optimizer(const Checkpoint& ckpt, RmsProp& optimizer) {
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind("opt:", 0) == 0) optimizer.caches()[t.name.substr(4)] = t.value;
  }
}

NormalizationStats restore_stats(const Checkpoint& ckpt) {
  NormalizationStats stats;
  for (auto m : kAllModalities) {
    const std::string base = "norm:" + std::string(modality_name(m));
    const Tensor* mean = ckpt.find(base + ":mean");
    const Tensor* sd = ckpt.find(base + ":std");
    if (!mean && !sd) continue;
    if (!mean || !sd || mean->size() != sd->size()) {
      throw FormatError("checkpoint has incomplete normalization statistics for " +
                        std::string(modality_name(m)));
    }
    ColumnStats s;
    s.mean.assign(mean->values().begin(), mean->values().end());
    s.stddev.assign(sd->values().begin(), sd->values().end());
    stats.set(m, std::move(s));
  }
  return stats;
}

}  // namespace affseq
