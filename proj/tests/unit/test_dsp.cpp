// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "affseq/dataset.hpp"
#include "affseq/dsp.hpp"
#include "affseq/error.hpp"
#include "affseq/tensor.hpp"
#include "oracles.hpp"

using namespace affseq;
using namespace affseq::dsp;
using cd = std::complex<double>;

namespace {

std::vector<cd> random_signal(std::size_t n, Rng& rng) {
  std::vector<cd> x(n);
  for (auto& v : x) v = cd(rng.normal(), rng.normal());
  return x;
}

double max_abs_diff(const std::vector<cd>& a, const std::vector<cd>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

AudioClip sine_clip(double freq, double amp, std::uint32_t sr, std::size_t n) {
  AudioClip c;
  c.sample_rate = sr;
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.samples[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / sr);
  }
  return c;
}

}  // namespace

TEST(PlanSegments, Examples) {
  auto p = plan_segments(1000, 3);
  EXPECT_EQ(p.segment_len, 500u);
  EXPECT_EQ(p.hop, 250u);
  EXPECT_EQ(p.starts, (std::vector<std::size_t>{0, 250, 500}));

  p = plan_segments(1000, 1);
  EXPECT_EQ(p.segment_len, 1000u);
  EXPECT_EQ(p.starts, (std::vector<std::size_t>{0}));

  p = plan_segments(1000, 4);
  EXPECT_EQ(p.segment_len, 400u);
  EXPECT_EQ(p.hop, 200u);
  EXPECT_EQ(p.starts, (std::vector<std::size_t>{0, 200, 400, 600}));
}

TEST(PlanSegments, Errors) {
  EXPECT_THROW(plan_segments(1000, 0), DomainError);
  EXPECT_THROW(plan_segments(10, 11), DomainError);
  try {
    plan_segments(1000, 0);
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("n_frames must be ≥ 1"), std::string::npos);
  }
}

TEST(PlanSegments, InvariantsExhaustive) {
  for (std::size_t n = 1; n <= 50; ++n) {
    for (std::size_t t = n; t <= 2000; ++t) {
      auto p = plan_segments(t, n);
      ASSERT_EQ(p.n_segments, n);
      ASSERT_EQ(p.starts.size(), n);
      std::size_t l = n == 1 ? t : (2 * t) / (n + 1);
      ASSERT_EQ(p.segment_len, l) << t << "," << n;
      ASSERT_GE(l, 1u);
      ASSERT_EQ(p.hop, l / 2);
      ASSERT_EQ(p.starts.front(), 0u);
      ASSERT_EQ(p.starts.back(), t - l);
      for (std::size_t i = 0; i + 2 < n; ++i) ASSERT_EQ(p.starts[i + 1] - p.starts[i], p.hop);
      for (auto s : p.starts) ASSERT_LE(s + l, t);
      // Uncovered samples before the anchored tail stay below N.
      if (n > 1) {
        std::size_t covered_to = p.starts[n - 2] + l;
        std::size_t gap = p.starts.back() > covered_to ? p.starts.back() - covered_to : 0;
        ASSERT_LT(gap, n) << t << "," << n;
      }
    }
  }
}

TEST(Fft, TrivialTransforms) {
  std::vector<cd> impulse{1, 0, 0, 0};
  for (auto v : fft(impulse)) EXPECT_NEAR(std::abs(v - cd(1, 0)), 0.0, 1e-15);
  std::vector<cd> constant{1, 1, 1, 1};
  auto c = fft(constant);
  EXPECT_NEAR(std::abs(c[0] - cd(4, 0)), 0.0, 1e-15);
  for (std::size_t k = 1; k < 4; ++k) EXPECT_NEAR(std::abs(c[k]), 0.0, 1e-15);
}

TEST(Fft, MatchesNaiveDft) {
  Rng rng(42);
  auto x = random_signal(256, rng);
  EXPECT_LT(max_abs_diff(fft(x), testkit::naive_dft(x)), 1e-9);
  for (std::size_t n = 1; n <= 1024; n *= 2) {
    auto y = random_signal(n, rng);
    EXPECT_LT(max_abs_diff(fft(y), testkit::naive_dft(y)), 1e-9) << n;
  }
}

TEST(Fft, Linearity) {
  Rng rng(5);
  for (std::size_t n : {8u, 64u, 1024u}) {
    auto x = random_signal(n, rng), y = random_signal(n, rng);
    cd a(0.7, -1.3), b(-2.1, 0.4);
    std::vector<cd> mix(n);
    for (std::size_t i = 0; i < n; ++i) mix[i] = a * x[i] + b * y[i];
    auto fx = fft(x), fy = fft(y), fm = fft(mix);
    std::vector<cd> expect(n);
    for (std::size_t i = 0; i < n; ++i) expect[i] = a * fx[i] + b * fy[i];
    EXPECT_LT(max_abs_diff(fm, expect), 1e-9);
  }
}

TEST(Fft, ParsevalAndInverse) {
  Rng rng(6);
  for (std::size_t n : {2u, 16u, 512u, 1024u}) {
    auto x = random_signal(n, rng);
    auto fx = fft(x);
    double ex = 0.0, ef = 0.0;
    for (auto v : x) ex += std::norm(v);
    for (auto v : fx) ef += std::norm(v);
    EXPECT_NEAR(ex, ef / static_cast<double>(n), 1e-9 * ex);
    auto back = fft(fx, true);
    double num = 0.0;
    for (std::size_t i = 0; i < n; ++i) num += std::norm(back[i] - x[i]);
    EXPECT_LT(std::sqrt(num / ex), 1e-9);
  }
}

TEST(Fft, RejectsNonPowerOfTwo) {
  std::vector<cd> x(12);
  EXPECT_THROW(fft(x), DomainError);
  EXPECT_THROW(fft(std::vector<cd>{}), DomainError);
}

TEST(Dct, OrthonormalRoundTrip) {
  Rng rng(7);
  std::vector<double> x(128);
  for (auto& v : x) v = rng.normal();
  auto y = idct2(dct2(x));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-10);
  double ex = 0.0, ec = 0.0;
  for (double v : x) ex += v * v;
  for (double v : dct2(x)) ec += v * v;
  EXPECT_NEAR(ex, ec, 1e-10 * ex);
}

TEST(MelFilterbank, SingleFilterGeometry) {
  const double sr = 16000;
  auto bank = mel_filterbank(sr, 512, 1, 0.0, sr / 2);
  ASSERT_EQ(bank.n_mels, 1u);
  auto row = bank.row(0);
  auto apex = std::max_element(row.begin(), row.end()) - row.begin();
  double center = mel_to_hz((hz_to_mel(0.0) + hz_to_mel(sr / 2)) / 2.0);
  auto nearest = static_cast<std::ptrdiff_t>(std::lround(center * 512 / sr));
  EXPECT_LE(std::abs(apex - nearest), 1);
}

TEST(MelFilterbank, NonNegativeContiguousRows) {
  for (auto [sr, nfft, nm] : {std::tuple{16000.0, 512u, 128u}, std::tuple{22050.0, 2048u, 128u},
                              std::tuple{44100.0, 2048u, 40u}, std::tuple{8000.0, 256u, 64u}}) {
    auto bank = mel_filterbank(sr, nfft, nm, 0.0, sr / 2);
    for (std::size_t m = 0; m < nm; ++m) {
      auto row = bank.row(m);
      int transitions = 0;
      bool inside = false;
      for (double w : row) {
        ASSERT_GE(w, 0.0);
        bool pos = w > 0.0;
        if (pos != inside) ++transitions;
        inside = pos;
      }
      EXPECT_LE(transitions, 2) << "row " << m;
    }
  }
}

TEST(MelFilterbank, MatchesDirectOracle) {
  auto bank = mel_filterbank(16000, 512, 128, 0.0, 8000);
  auto oracle = testkit::oracle_mel_weights(16000, 512, 128, 0.0, 8000);
  const std::size_t bins = 257;
  for (std::size_t m = 0; m < 128; ++m) {
    double s = 0.0, so = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      s += bank.row(m)[k];
      so += oracle[m * bins + k];
      EXPECT_NEAR(bank.row(m)[k], oracle[m * bins + k], 1e-10);
    }
    EXPECT_NEAR(s, so, 1e-10);
  }
}

TEST(MelFilterbank, MelScaleMatchesOracle) {
  for (double hz : {0.0, 100.0, 999.0, 1000.0, 1001.0, 4000.0, 11025.0}) {
    EXPECT_NEAR(hz_to_mel(hz), testkit::oracle_hz_to_mel(hz), 1e-12);
    EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-9);
  }
}

TEST(MelFilterbank, Errors) {
  EXPECT_THROW(mel_filterbank(16000, 512, 128, 0.0, 8001), DomainError);
  EXPECT_THROW(mel_filterbank(16000, 512, 128, 100.0, 100.0), DomainError);
  EXPECT_THROW(mel_filterbank(16000, 512, 0, 0.0, 8000), DomainError);
}

TEST(MelFilterbank, DegenerateRowsReported) {
  auto bank = mel_filterbank(16000, 64, 128, 0.0, 8000);
  EXPECT_FALSE(bank.empty_rows.empty());
  for (auto m : bank.empty_rows) {
    for (double w : bank.row(m)) EXPECT_EQ(w, 0.0);
  }
}

TEST(FrameFeatures, SilenceIsFloor) {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(4000, 0.0);
  auto f = frame_features(clip, 0, 4000, DspParams{});
  ASSERT_EQ(f.mel.size(), 128u);
  ASSERT_EQ(f.mfcc.size(), 40u);
  for (double v : f.mel) EXPECT_DOUBLE_EQ(v, -100.0);
  EXPECT_NEAR(f.mfcc[0], -100.0 * std::sqrt(128.0), 1e-9);
  for (std::size_t i = 1; i < 40; ++i) EXPECT_NEAR(f.mfcc[i], 0.0, 1e-9);
}

TEST(FrameFeatures, CombinedLayout) {
  auto clip = sine_clip(1000, 0.3, 16000, 3000);
  auto f = frame_features(clip, 500, 2500, DspParams{});
  auto c = f.combined();
  ASSERT_EQ(c.size(), 168u);
  EXPECT_TRUE(std::equal(f.mfcc.begin(), f.mfcc.end(), c.begin()));
  EXPECT_TRUE(std::equal(f.mel.begin(), f.mel.end(), c.begin() + 40));
}

TEST(FrameFeatures, SineArgmaxMatchesOracle) {
  const std::uint32_t sr = 16000;
  auto clip = sine_clip(440.0, 0.5, sr, 4096);
  auto f = frame_features(clip, 0, clip.samples.size(), DspParams{});
  auto oracle = testkit::oracle_log_mel(clip.samples, sr, 2048, 512, 128);
  auto argmax = std::max_element(f.mel.begin(), f.mel.end()) - f.mel.begin();
  auto oracle_argmax = std::max_element(oracle.begin(), oracle.end()) - oracle.begin();
  EXPECT_EQ(argmax, oracle_argmax);
  for (std::size_t m = 0; m < 128; ++m) EXPECT_NEAR(f.mel[m], oracle[m], 1e-6);

  // Filter center closest to 440 Hz.
  const double mlo = hz_to_mel(0.0), mhi = hz_to_mel(sr / 2.0);
  std::size_t best = 0;
  double best_d = 1e300;
  for (std::size_t m = 0; m < 128; ++m) {
    double c = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(m + 1) / 129.0);
    if (std::abs(c - 440.0) < best_d) {
      best_d = std::abs(c - 440.0);
      best = m;
    }
  }
  EXPECT_LE(std::abs(static_cast<long>(argmax) - static_cast<long>(best)), 1);
}

TEST(FrameFeatures, EmptySegmentRejected) {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(10, 0.0);
  EXPECT_THROW(frame_features(clip, 0, 0, DspParams{}), DomainError);
}

TEST(ExtractAudioTrack, Shapes) {
  auto clip = sine_clip(300, 0.2, 16000, 1000);
  auto one = extract_audio_track(clip, 1, DspParams{});
  EXPECT_EQ(one.rows, 1u);
  EXPECT_EQ(one.cols, 168u);

  auto three = extract_audio_track(clip, 3, DspParams{});
  ASSERT_EQ(three.rows, 3u);
  auto r1 = frame_features(clip, 250, 500, DspParams{}).combined();
  auto r2 = frame_features(clip, 500, 500, DspParams{}).combined();
  EXPECT_TRUE(std::equal(r1.begin(), r1.end(), three.row(1).begin()));
  EXPECT_TRUE(std::equal(r2.begin(), r2.end(), three.row(2).begin()));
}

TEST(ExtractAudioTrack, SilenceRowsIdentical) {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(16000, 0.0);
  auto t = extract_audio_track(clip, 5, DspParams{});
  ASSERT_EQ(t.rows, 5u);
  for (std::size_t r = 1; r < 5; ++r) {
    EXPECT_TRUE(std::equal(t.row(0).begin(), t.row(0).end(), t.row(r).begin()));
  }
}

TEST(ExtractAudioTrack, DeterministicAcrossThreads) {
  Rng rng(9);
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(20000);
  for (auto& s : clip.samples) s = rng.uniform(-0.5, 0.5);
  auto a = extract_audio_track(clip, 17, DspParams{}, 1);
  auto b = extract_audio_track(clip, 17, DspParams{}, 1);
  auto c = extract_audio_track(clip, 17, DspParams{}, 4);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(a.data, c.data);
}

TEST(ExtractAudioTrack, PropagatesPlanErrors) {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(4, 0.0);
  EXPECT_THROW(extract_audio_track(clip, 0, DspParams{}), DomainError);
  EXPECT_THROW(extract_audio_track(clip, 5, DspParams{}), DomainError);
}
