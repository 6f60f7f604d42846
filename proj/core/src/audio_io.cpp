// SPDX-License-Identifier: Apache-2.0
#include "affseq/audio_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>

#include "affseq/error.hpp"

namespace affseq {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

struct FormatChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
};

FormatChunk parse_fmt(const unsigned char* p, std::uint32_t size) {
  if (size < 16) throw FormatError("wav: fmt chunk shorter than 16 bytes");
  FormatChunk f;
  f.format = le16(p);
  f.channels = le16(p + 2);
  f.sample_rate = le32(p + 4);
  f.block_align = le16(p + 12);
  f.bits = le16(p + 14);
  if (f.format == kFormatExtensible) {
    if (size < 40) throw FormatError("wav: extensible fmt chunk shorter than 40 bytes");
    // The sub-format GUID starts with the plain format code.
    f.format = le16(p + 24);
  }
  return f;
}

double decode_sample(const unsigned char* p, const FormatChunk& f) {
  switch (f.bits) {
    case 16: {
      auto v = static_cast<std::int16_t>(le16(p));
      return v / 32768.0;
    }
    case 24: {
      std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
      if (v & 0x800000) v -= 0x1000000;
      return v / 8388608.0;
    }
    case 32: {
      std::uint32_t raw = le32(p);
      if (f.format == kFormatFloat) {
        float x = std::bit_cast<float>(raw);
        return std::clamp(static_cast<double>(x), -1.0, 1.0);
      }
      return static_cast<std::int32_t>(raw) / 2147483648.0;
    }
    default:
      return 0.0;
  }
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("wav: missing RIFF/WAVE header in " + path.string());
  }

  std::optional<FormatChunk> fmt;
  const unsigned char* data = nullptr;
  std::size_t data_declared = 0;
  std::size_t data_found = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    std::uint32_t size = le32(hdr + 4);
    std::size_t body = pos + 8;
    std::size_t available = bytes.size() - body;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size > available) throw FormatError("wav: fmt chunk runs past end of file");
      fmt = parse_fmt(bytes.data() + body, size);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_declared = size;
      data_found = std::min<std::size_t>(size, available);
      break;
    }
    // Chunks are padded to even length.
    pos = body + size + (size & 1u);
  }

  if (!fmt) throw FormatError("wav: no fmt chunk in " + path.string());
  if (fmt->format != kFormatPcm && fmt->format != kFormatFloat) {
    throw UnsupportedEncodingError("wav: unsupported format code " +
                                   std::to_string(fmt->format));
  }
  bool pcm_ok = fmt->format == kFormatPcm &&
                (fmt->bits == 16 || fmt->bits == 24 || fmt->bits == 32);
  bool float_ok = fmt->format == kFormatFloat && fmt->bits == 32;
  if (!pcm_ok && !float_ok) {
    throw UnsupportedEncodingError("wav: unsupported bit depth " + std::to_string(fmt->bits));
  }
  if (fmt->channels != 1 && fmt->channels != 2) {
    throw UnsupportedEncodingError("wav: unsupported channel count " +
                                   std::to_string(fmt->channels));
  }
  if (fmt->sample_rate == 0) throw FormatError("wav: sample rate is zero");
  std::size_t bytes_per_sample = fmt->bits / 8u;
  std::size_t frame_bytes = bytes_per_sample * fmt->channels;
  if (fmt->block_align != frame_bytes) {
    throw FormatError("wav: block align " + std::to_string(fmt->block_align) +
                      " inconsistent with channels and bit depth");
  }
  if (!data) throw FormatError("wav: no data chunk in " + path.string());
  if (data_found < data_declared) {
    throw TruncationError("wav: truncated data chunk in " + path.string(), data_declared,
                          data_found);
  }

  AudioClip clip;
  clip.sample_rate = fmt->sample_rate;
  std::size_t n = data_declared / frame_bytes;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* frame = data + i * frame_bytes;
    if (fmt->channels == 1) {
      clip.samples[i] = decode_sample(frame, *fmt);
    } else {
      double l = decode_sample(frame, *fmt);
      double r = decode_sample(frame + bytes_per_sample, *fmt);
      clip.samples[i] = 0.5 * (l + r);
    }
  }
  return clip;
}

void write_wav_pcm16(const std::filesystem::path& path, std::span<const double> interleaved,
                     std::uint32_t sample_rate, std::uint16_t channels) {
  if (channels == 0) throw DomainError("wav: channel count must be positive");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write wav file: " + path.string());

  auto put16 = [&](std::uint16_t v) {
    std::array<char, 2> b{static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
    out.write(b.data(), 2);
  };
  auto put32 = [&](std::uint32_t v) {
    std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                          static_cast<char>((v >> 16) & 0xFF),
                          static_cast<char>((v >> 24) & 0xFF)};
    out.write(b.data(), 4);
  };

  auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put32(16);
  put16(kFormatPcm);
  put16(channels);
  put32(sample_rate);
  put32(sample_rate * channels * 2u);
  put16(static_cast<std::uint16_t>(channels * 2u));
  put16(16);
  out.write("data", 4);
  put32(data_bytes);
  for (double s : interleaved) {
    double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
    auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put16(static_cast<std::uint16_t>(v));
  }
  if (!out) throw IoError("failed writing wav file: " + path.string());
}

}  // namespace affseq
