// SPDX-License-Identifier: Apache-2.0
#include "affseq/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "affseq/dataset.hpp"
#include "affseq/error.hpp"
#include "affseq/parallel.hpp"

namespace affseq::dsp {
namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Slaney mel scale constants.
constexpr double kLinearStep = 200.0 / 3.0;
constexpr double kLogStartHz = 1000.0;
constexpr double kLogStartMel = kLogStartHz / kLinearStep;
const double kLogStep = std::log(6.4) / 27.0;

std::vector<double> dct_basis(std::size_t n) {
  std::vector<double> basis(n * n);
  const double s0 = std::sqrt(1.0 / static_cast<double>(n));
  const double sk = std::sqrt(2.0 / static_cast<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    double scale = k == 0 ? s0 : sk;
    for (std::size_t i = 0; i < n; ++i) {
      basis[k * n + i] =
          scale * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) *
                           static_cast<double>(k) / static_cast<double>(n));
    }
  }
  return basis;
}

}  // namespace

SegmentPlan plan_segments(std::size_t clip_len, std::size_t n_frames) {
  if (n_frames == 0) throw DomainError("n_frames must be ≥ 1");
  if (clip_len < n_frames) {
    throw DomainError("clip of " + std::to_string(clip_len) + " samples cannot cover " +
                      std::to_string(n_frames) + " frames");
  }
  SegmentPlan plan;
  plan.n_segments = n_frames;
  if (n_frames == 1) {
    plan.segment_len = clip_len;
    plan.hop = clip_len / 2;
    plan.starts = {0};
    return plan;
  }
  plan.segment_len = (2 * clip_len) / (n_frames + 1);
  plan.hop = plan.segment_len / 2;
  plan.starts.resize(n_frames);
  for (std::size_t i = 0; i + 1 < n_frames; ++i) plan.starts[i] = i * plan.hop;
  plan.starts[n_frames - 1] = clip_len - plan.segment_len;
  return plan;
}

std::vector<std::complex<double>> fft(std::span<const std::complex<double>> signal,
                                      bool inverse) {
  const std::size_t n = signal.size();
  if (!is_power_of_two(n)) {
    throw DomainError("fft length " + std::to_string(n) + " is not a power of two");
  }
  std::vector<std::complex<double>> a(signal.begin(), signal.end());

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  // Twiddles evaluated directly rather than by repeated multiplication.
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<std::complex<double>> twiddle(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) /
                   static_cast<double>(n);
    twiddle[k] = {std::cos(angle), std::sin(angle)};
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    std::size_t half = len / 2;
    std::size_t stride = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + half] * twiddle[k * stride];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }

  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= scale;
  }
  return a;
}

std::vector<double> dct2(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) throw DomainError("dct2 of empty vector");
  auto basis = dct_basis(n);
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += basis[k * n + i] * x[i];
    out[k] = acc;
  }
  return out;
}

std::vector<double> idct2(std::span<const double> coeffs) {
  const std::size_t n = coeffs.size();
  if (n == 0) throw DomainError("idct2 of empty vector");
  auto basis = dct_basis(n);
  std::vector<double> out(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) out[i] += basis[k * n + i] * coeffs[k];
  }
  return out;
}

double hz_to_mel(double hz) {
  if (hz < kLogStartHz) return hz / kLinearStep;
  return kLogStartMel + std::log(hz / kLogStartHz) / kLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kLogStartMel) return mel * kLinearStep;
  return kLogStartHz * std::exp(kLogStep * (mel - kLogStartMel));
}

MelFilterbank mel_filterbank(double sample_rate, std::size_t n_fft, std::size_t n_mels,
                             double fmin, double fmax) {
  if (sample_rate <= 0.0) throw DomainError("sample rate must be positive");
  if (n_fft < 2) throw DomainError("n_fft must be at least 2");
  if (n_mels == 0) throw DomainError("n_mels must be ≥ 1");
  const double nyquist = sample_rate / 2.0;
  if (fmax > nyquist) {
    throw DomainError("fmax " + std::to_string(fmax) + " Hz exceeds Nyquist " +
                      std::to_string(nyquist) + " Hz");
  }
  if (fmin < 0.0 || fmin >= fmax) throw DomainError("require 0 <= fmin < fmax");

  MelFilterbank bank;
  bank.n_mels = n_mels;
  bank.n_bins = n_fft / 2 + 1;
  bank.fmin = fmin;
  bank.fmax = fmax;
  bank.weights.assign(n_mels * bank.n_bins, 0.0);

  // n_mels + 2 edge frequencies equally spaced in mel.
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                              static_cast<double>(n_mels + 1);
    edges[i] = mel_to_hz(mel);
  }

  const double bin_hz = sample_rate / static_cast<double>(n_fft);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lower = edges[m];
    const double center = edges[m + 1];
    const double upper = edges[m + 2];
    const double norm = 2.0 / (upper - lower);
    bool any = false;
    for (std::size_t k = 0; k < bank.n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double rising = (f - lower) / (center - lower);
      const double falling = (upper - f) / (upper - center);
      const double w = std::max(0.0, std::min(rising, falling));
      bank.weights[m * bank.n_bins + k] = w * norm;
      any = any || w > 0.0;
    }
    if (!any) bank.empty_rows.push_back(m);
  }
  return bank;
}

std::vector<double> AudioFrameFeatures::combined() const {
  std::vector<double> out;
  out.reserve(mfcc.size() + mel.size());
  out.insert(out.end(), mfcc.begin(), mfcc.end());
  out.insert(out.end(), mel.begin(), mel.end());
  return out;
}

FrameFeatureExtractor::FrameFeatureExtractor(std::uint32_t sample_rate, const DspParams& params)
    : params_(params) {
  if (sample_rate == 0) throw DomainError("sample rate must be positive");
  if (!is_power_of_two(params.n_fft)) throw DomainError("n_fft must be a power of two");
  if (params.stft_hop == 0) throw DomainError("stft_hop must be ≥ 1");
  if (params.n_mfcc > params.n_mels) throw DomainError("n_mfcc cannot exceed n_mels");
  if (!(params.log_floor > 0.0)) throw DomainError("log_floor must be positive");
  const double nyquist = sample_rate / 2.0;
  const double fmax = params.fmax > 0.0 ? params.fmax : nyquist;
  bank_ = mel_filterbank(sample_rate, params.n_fft, params.n_mels, params.fmin, fmax);
  params_.fmax = fmax;
  dct_ = dct_basis(params.n_mels);

  // Periodic Hann.
  window_.resize(params.n_fft);
  for (std::size_t i = 0; i < params.n_fft; ++i) {
    window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                      static_cast<double>(params.n_fft));
  }
}

AudioFrameFeatures FrameFeatureExtractor::operator()(std::span<const double> segment) const {
  if (segment.empty()) throw DomainError("empty audio segment");
  const std::size_t n_fft = params_.n_fft;
  const std::size_t n_bins = bank_.n_bins;
  const std::size_t n_mels = params_.n_mels;

  std::vector<std::size_t> frame_starts;
  std::size_t pad_offset = 0;
  if (segment.size() <= n_fft) {
    frame_starts.push_back(0);
    pad_offset = (n_fft - segment.size()) / 2;
  } else {
    for (std::size_t s = 0; s + n_fft <= segment.size(); s += params_.stft_hop) {
      frame_starts.push_back(s);
    }
  }

  std::vector<double> log_mel_sum(n_mels, 0.0);
  std::vector<std::complex<double>> buffer(n_fft);
  std::vector<double> power(n_bins);
  for (std::size_t start : frame_starts) {
    std::fill(buffer.begin(), buffer.end(), std::complex<double>{});
    if (segment.size() <= n_fft) {
      for (std::size_t i = 0; i < segment.size(); ++i) {
        buffer[pad_offset + i] = segment[i] * window_[pad_offset + i];
      }
    } else {
      for (std::size_t i = 0; i < n_fft; ++i) buffer[i] = segment[start + i] * window_[i];
    }
    auto spectrum = fft(buffer);
    for (std::size_t k = 0; k < n_bins; ++k) power[k] = std::norm(spectrum[k]);
    for (std::size_t m = 0; m < n_mels; ++m) {
      auto row = bank_.row(m);
      double energy = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) energy += row[k] * power[k];
      log_mel_sum[m] += 10.0 * std::log10(std::max(energy, params_.log_floor));
    }
  }

  AudioFrameFeatures out;
  out.mel.resize(n_mels);
  const double inv_frames = 1.0 / static_cast<double>(frame_starts.size());
  for (std::size_t m = 0; m < n_mels; ++m) out.mel[m] = log_mel_sum[m] * inv_frames;
  out.mfcc.assign(params_.n_mfcc, 0.0);
  for (std::size_t k = 0; k < params_.n_mfcc; ++k) {
    double acc = 0.0;
    for (std::size_t m = 0; m < n_mels; ++m) acc += dct_[k * n_mels + m] * out.mel[m];
    out.mfcc[k] = acc;
  }
  return out;
}

AudioFrameFeatures frame_features(const AudioClip& clip, std::size_t start, std::size_t length,
                                  const DspParams& params) {
  if (length == 0) throw DomainError("empty audio segment");
  if (start + length > clip.samples.size()) {
    throw DomainError("segment [" + std::to_string(start) + ", " +
                      std::to_string(start + length) + ") exceeds clip length " +
                      std::to_string(clip.samples.size()));
  }
  FrameFeatureExtractor extract(clip.sample_rate, params);
  return extract(std::span<const double>(clip.samples).subspan(start, length));
}

FeatureTrack extract_audio_track(const AudioClip& clip, std::size_t n_frames,
                                 const DspParams& params, std::size_t threads) {
  auto plan = plan_segments(clip.samples.size(), n_frames);
  FrameFeatureExtractor extract(clip.sample_rate, params);

  FeatureTrack track;
  track.modality = Modality::audio;
  track.rows = n_frames;
  track.cols = params.feature_width();
  track.data.assign(track.rows * track.cols, 0.0);

  std::span<const double> samples(clip.samples);
  auto body = [&](std::size_t i) {
    auto features = extract(samples.subspan(plan.starts[i], plan.segment_len));
    auto row = track.row(i);
    std::copy(features.mfcc.begin(), features.mfcc.end(), row.begin());
    std::copy(features.mel.begin(), features.mel.end(),
              row.begin() + static_cast<long>(features.mfcc.size()));
  };
  parallel_for(0, n_frames, body, 2, threads);
  return track;
}

}  // namespace affseq::dsp
