// SPDX-License-Identifier: Apache-2.0
#include "affseq/metrics.hpp"

#include <cstdio>

#include "affseq/error.hpp"

namespace affseq {

CccValue ccc_checked(std::span<const double> pred, std::span<const double> gold) {
  if (pred.size() != gold.size()) {
    throw DomainError("ccc: " + std::to_string(pred.size()) + " predictions for " +
                      std::to_string(gold.size()) + " labels");
  }
  const std::size_t n = pred.size();
  if (n < 2) throw DomainError("ccc needs at least 2 samples");
  const double inv_n = 1.0 / static_cast<double>(n);
  double mp = 0.0, mg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += pred[i];
    mg += gold[i];
  }
  mp *= inv_n;
  mg *= inv_n;
  double vp = 0.0, vg = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = pred[i] - mp;
    const double dg = gold[i] - mg;
    vp += dp * dp;
    vg += dg * dg;
    cov += dp * dg;
  }
  vp *= inv_n;
  vg *= inv_n;
  cov *= inv_n;
  const double shift = mp - mg;
  const double denom = vp + vg + shift * shift;
  if (denom == 0.0) return {0.0, true};
  return {2.0 * cov / denom, false};
}

double ccc(std::span<const double> pred, std::span<const double> gold) {
  return ccc_checked(pred, gold).value;
}

double mse(std::span<const double> pred, std::span<const double> gold) {
  if (pred.size() != gold.size()) throw DomainError("mse: length mismatch");
  if (pred.empty()) throw DomainError("mse of empty sequences");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gold[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

std::string_view ccc_mode_name(CccMode m) noexcept {
  return m == CccMode::concat ? "concat" : "per-video-mean";
}

CccMode parse_ccc_mode(std::string_view name) {
  if (name == "concat") return CccMode::concat;
  if (name == "per-video-mean") return CccMode::per_video_mean;
  throw ConfigError("unknown ccc_mode '" + std::string(name) +
                    "' (expected concat or per-video-mean)");
}

EvalReport evaluate(const PredictionMap& predictions, std::span<const LabelTrack> labels,
                    CccMode mode) {
  std::vector<double> pv, pa, gv, ga;
  double sum_ccc_v = 0.0, sum_ccc_a = 0.0;
  std::size_t videos = 0;
  for (const auto& track : labels) {
    auto it = predictions.find(track.video_id);
    if (it == predictions.end()) {
      throw CoverageError("no prediction track for video " + track.video_id);
    }
    const auto& pred = it->second;
    if (pred.size() != 2 * track.size()) {
      throw DomainError("video " + track.video_id + ": " + std::to_string(pred.size() / 2) +
                        " predicted frames for " + std::to_string(track.size()) + " labels");
    }
    std::vector<double> vpv, vpa, vgv, vga;
    for (std::size_t f = 0; f < track.size(); ++f) {
      if (!track.valid[f]) continue;
      vpv.push_back(pred[2 * f]);
      vpa.push_back(pred[2 * f + 1]);
      vgv.push_back(track.valence[f]);
      vga.push_back(track.arousal[f]);
    }
    if (mode == CccMode::per_video_mean && vpv.size() >= 2) {
      sum_ccc_v += ccc(vpv, vgv);
      sum_ccc_a += ccc(vpa, vga);
      ++videos;
    }
    pv.insert(pv.end(), vpv.begin(), vpv.end());
    pa.insert(pa.end(), vpa.begin(), vpa.end());
    gv.insert(gv.end(), vgv.begin(), vgv.end());
    ga.insert(ga.end(), vga.begin(), vga.end());
  }

  EvalReport report;
  report.n_frames_evaluated = pv.size();
  if (pv.empty()) throw DomainError("evaluation set has no valid labeled frames");
  report.mse_valence = mse(pv, gv);
  report.mse_arousal = mse(pa, ga);
  if (mode == CccMode::concat) {
    report.ccc_valence = ccc(pv, gv);
    report.ccc_arousal = ccc(pa, ga);
  } else {
    if (videos == 0) throw DomainError("no video has at least 2 valid frames");
    report.ccc_valence = sum_ccc_v / static_cast<double>(videos);
    report.ccc_arousal = sum_ccc_a / static_cast<double>(videos);
  }
  return report;
}

std::string report_csv(const EvalReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "metric,valence,arousal\nccc,%.10g,%.10g\nmse,%.10g,%.10g\n",
                report.ccc_valence, report.ccc_arousal, report.mse_valence,
                report.mse_arousal);
  return buf;
}

std::string report_text(const EvalReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "frames evaluated: %zu\n"
                "          valence    arousal\n"
                "CCC    %10.4f %10.4f\n"
                "MSE    %10.4f %10.4f\n",
                report.n_frames_evaluated, report.ccc_valence, report.ccc_arousal,
                report.mse_valence, report.mse_arousal);
  return buf;
}

}  // namespace affseq
