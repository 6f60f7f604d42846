// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "affseq/audio_io.hpp"

namespace affseq {

class FeatureTrack;

namespace dsp {

/// Half-overlapping cover of a clip by one segment per video frame.
struct SegmentPlan {
  std::size_t n_segments = 0;
  std::size_t segment_len = 0;
  std::size_t hop = 0;
  std::vector<std::size_t> starts;
};

/// Segment length is floor(2T / (N + 1)) (the whole clip when N == 1), hop is
/// half of it, and the last segment is anchored to end at the clip end.
SegmentPlan plan_segments(std::size_t clip_len, std::size_t n_frames);

/// In-place-free radix-2 transform. Forward uses e^{-2 pi i kn / N}; the
/// inverse scales by 1/N. Length must be a power of two.
std::vector<std::complex<double>> fft(std::span<const std::complex<double>> signal,
                                      bool inverse = false);

/// Orthonormal DCT-II and its inverse (DCT-III).
std::vector<double> dct2(std::span<const double> x);
std::vector<double> idct2(std::span<const double> coeffs);

/// Slaney-style mel scale (linear below 1 kHz, logarithmic above).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters, row-major [n_mels x (n_fft/2 + 1)].
struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t n_bins = 0;
  double fmin = 0.0;
  double fmax = 0.0;
  std::vector<double> weights;
  /// Rows with no positive weight (centers collapsed onto one FFT bin).
  std::vector<std::size_t> empty_rows;

  std::span<const double> row(std::size_t m) const {
    return {weights.data() + m * n_bins, n_bins};
  }
};

MelFilterbank mel_filterbank(double sample_rate, std::size_t n_fft, std::size_t n_mels,
                             double fmin, double fmax);

struct DspParams {
  std::size_t n_fft = 2048;
  std::size_t stft_hop = 512;
  std::size_t n_mels = 128;
  std::size_t n_mfcc = 40;
  double fmin = 0.0;
  /// Upper filterbank edge in Hz; non-positive means Nyquist.
  double fmax = 0.0;
  double log_floor = 1e-10;

  std::size_t feature_width() const noexcept { return n_mfcc + n_mels; }
};

struct AudioFrameFeatures {
  std::vector<double> mfcc;
  std::vector<double> mel;

  /// mfcc followed by mel.
  std::vector<double> combined() const;
};

/// Precomputed per-track state: window, filterbank, DCT basis.
class FrameFeatureExtractor {
 public:
  FrameFeatureExtractor(std::uint32_t sample_rate, const DspParams& params);

  /// Hann-windowed STFT of the segment (zero-padded and centered when shorter
  /// than n_fft), power spectrum through the mel filterbank, 10*log10 with a
  /// floor, time-averaged; MFCC is the leading orthonormal DCT-II block.
  AudioFrameFeatures operator()(std::span<const double> segment) const;

  const MelFilterbank& filterbank() const noexcept { return bank_; }
  const DspParams& params() const noexcept { return params_; }

 private:
  DspParams params_;
  MelFilterbank bank_;
  std::vector<double> window_;
  std::vector<double> dct_;
};

AudioFrameFeatures frame_features(const AudioClip& clip, std::size_t start, std::size_t length,
                                  const DspParams& params);

/// One 168-dim row (with default params) per video frame. Rows are placed by
/// segment index, so the result does not depend on `threads` (0 = global).
FeatureTrack extract_audio_track(const AudioClip& clip, std::size_t n_frames,
                                 const DspParams& params, std::size_t threads = 0);

}  // namespace dsp
}  // namespace affseq
