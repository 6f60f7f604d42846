// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "affseq/dataset.hpp"

namespace affseq {

struct CccValue {
  double value = 0.0;
  /// Both sequences constant with equal means; value is reported as 0.
  bool degenerate = false;
};

/// Concordance correlation coefficient with population (1/N) moments:
///   2 cov(p, g) / (var(p) + var(g) + (mean(p) - mean(g))^2)
/// Throws DomainError for fewer than two samples or unequal lengths.
CccValue ccc_checked(std::span<const double> pred, std::span<const double> gold);
double ccc(std::span<const double> pred, std::span<const double> gold);

double mse(std::span<const double> pred, std::span<const double> gold);

enum class CccMode { concat, per_video_mean };

std::string_view ccc_mode_name(CccMode m) noexcept;
CccMode parse_ccc_mode(std::string_view name);

struct EvalReport {
  double ccc_valence = 0.0;
  double ccc_arousal = 0.0;
  double mse_valence = 0.0;
  double mse_arousal = 0.0;
  std::size_t n_frames_evaluated = 0;

  double mean_ccc() const noexcept { return 0.5 * (ccc_valence + ccc_arousal); }
};

/// Frame-level predictions [n_frames x 2] (valence, arousal interleaved),
/// keyed by video id.
using PredictionMap = std::map<std::string, std::vector<double>>;

/// Scores every labeled video over its valid frames. In concat mode the valid
/// frames of all videos are pooled and CCC/MSE computed once; in
/// per_video_mean mode CCC is averaged over videos (MSE stays pooled).
EvalReport evaluate(const PredictionMap& predictions, std::span<const LabelTrack> labels,
                    CccMode mode = CccMode::concat);

/// `metric,valence,arousal` with rows ccc and mse.
std::string report_csv(const EvalReport& report);
std::string report_text(const EvalReport& report);

}  // namespace affseq
