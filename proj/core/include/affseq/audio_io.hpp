// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace affseq {

/// Decoded mono waveform. Samples are normalized to [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  std::uint32_t sample_rate = 0;

  std::size_t duration_samples() const noexcept { return samples.size(); }
};

/// Decodes a RIFF/WAVE file holding PCM-16/24/32 or IEEE float-32 samples in
/// one or two channels. Integer samples are divided by 2^(bits-1); stereo is
/// downmixed by the per-sample channel mean. The native rate is kept.
///
/// Throws IoError, FormatError, UnsupportedEncodingError or TruncationError.
AudioClip read_wav(const std::filesystem::path& path);

/// Writes interleaved samples as PCM-16. Values are clamped to [-1, 1) and
/// scaled by 32768 with rounding to nearest.
void write_wav_pcm16(const std::filesystem::path& path, std::span<const double> interleaved,
                     std::uint32_t sample_rate, std::uint16_t channels = 1);

}  // namespace affseq
