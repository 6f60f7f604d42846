// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace affseq {

enum class Modality { audio, expnet, facepose };

inline constexpr std::array<Modality, 3> kAllModalities{Modality::audio, Modality::expnet,
                                                        Modality::facepose};

/// Declared per-frame width: audio 168, expnet 2048, facepose 714.
std::size_t modality_width(Modality m) noexcept;
std::string_view modality_name(Modality m) noexcept;
Modality parse_modality(std::string_view name);

/// Per-video matrix of per-frame feature vectors, row-major [n_frames x dim].
struct FeatureTrack {
  std::string video_id;
  Modality modality = Modality::audio;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
};

inline constexpr std::uint32_t kFeatureFileVersion = 1;

/// Binary feature file: "AFFW", u32 version, u32 rows, u32 cols, then
/// rows*cols little-endian float32 values, row-major.
void save_feature_file(const std::filesystem::path& path, const FeatureTrack& track);

/// Decodes a feature file and checks its width. When expected_cols is empty the
/// modality's declared width is required.
FeatureTrack load_feature_track(const std::filesystem::path& path, Modality modality,
                                std::optional<std::size_t> expected_cols = std::nullopt);

/// Per-frame labels. Values outside [-1, 1] (including the -5 "unannotated"
/// sentinel) are marked invalid.
struct LabelTrack {
  std::string video_id;
  std::vector<double> valence;
  std::vector<double> arousal;
  std::vector<bool> valid;

  std::size_t size() const noexcept { return valid.size(); }
};

inline constexpr double kUnannotated = -5.0;

/// CSV with header `frame,valence,arousal`; frame indices must run 0, 1, 2, ...
LabelTrack load_labels(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path, const LabelTrack& labels);

inline constexpr std::size_t kWindowLength = 15;
inline constexpr std::size_t kWindowOverlap = 5;
inline constexpr std::size_t kWindowHop = kWindowLength - kWindowOverlap;

/// Starts at multiples of the hop, plus an anchored tail window ending at the
/// last frame; tracks shorter than one window yield the single start 0.
std::vector<std::size_t> window_track(std::size_t n_frames,
                                      std::size_t window = kWindowLength,
                                      std::size_t hop = kWindowHop);

struct ColumnStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline constexpr double kStdFloor = 1e-8;

/// Per-modality z-score statistics, computed on the training split only.
struct NormalizationStats {
  std::array<std::optional<ColumnStats>, 3> per_modality;

  const ColumnStats* get(Modality m) const {
    auto& s = per_modality[static_cast<std::size_t>(m)];
    return s ? &*s : nullptr;
  }
  void set(Modality m, ColumnStats stats) {
    per_modality[static_cast<std::size_t>(m)] = std::move(stats);
  }
};

/// Population mean and standard deviation over the concatenated rows of all
/// tracks, std floored at kStdFloor. Results are rounded to float32 so they
/// survive a checkpoint round trip unchanged.
ColumnStats compute_column_stats(std::span<const FeatureTrack* const> tracks);

/// Per-column (x - mean) / max(std, kStdFloor).
FeatureTrack normalize(const FeatureTrack& track, const ColumnStats& stats);

/// One window of one video: per-modality [length x dim] slices, [length x 2]
/// targets and a per-frame mask. Frames past the track end are edge-replicated
/// and masked.
struct SequenceWindow {
  std::string video_id;
  std::size_t video_index = 0;
  std::size_t start_frame = 0;
  /// Frames that came from the track; the rest are padding.
  std::size_t real_frames = 0;
  std::array<std::vector<double>, 3> features;
  std::vector<double> targets;
  std::vector<std::uint8_t> mask;
};

/// A video with the modalities it carries and (optionally) its labels.
struct VideoData {
  std::string video_id;
  std::size_t n_frames = 0;
  std::array<std::optional<FeatureTrack>, 3> features;
  std::optional<LabelTrack> labels;

  const FeatureTrack* track(Modality m) const {
    auto& t = features[static_cast<std::size_t>(m)];
    return t ? &*t : nullptr;
  }
};

/// Cuts a video into windows. Only modalities listed in `used` are sliced;
/// each must be present. Without labels, targets are zero and mask marks the
/// real (unpadded) frames.
std::vector<SequenceWindow> make_windows(const VideoData& video, std::size_t video_index,
                                         std::span<const Modality> used,
                                         std::size_t window = kWindowLength,
                                         std::size_t hop = kWindowHop);

/// A window's prediction block, [real_frames x 2] for the first real_frames
/// positions of a window starting at `start`.
struct WindowPrediction {
  std::size_t start = 0;
  std::size_t length = 0;
  std::vector<double> values;
};

/// Frame-level predictions [n_frames x 2]: each frame is the mean over every
/// window covering it. Throws CoverageError for an uncovered frame.
std::vector<double> merge_window_predictions(std::span<const WindowPrediction> windows,
                                             std::size_t n_frames);

enum class Split { train, val };

struct ManifestEntry {
  std::string video_id;
  Split split = Split::train;
  std::array<std::filesystem::path, 3> feature_paths;
  std::filesystem::path label_path;
  std::size_t n_frames = 0;
};

/// CSV with header
/// `video_id,split,audio_path,expnet_path,facepose_path,label_path,n_frames`.
/// Relative paths resolve against the manifest's directory; empty path fields
/// mean the modality (or labels) is absent.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

/// Loads the listed modalities and, if present, the labels of one manifest row,
/// checking that every track has n_frames rows.
VideoData load_video(const ManifestEntry& entry, std::span<const Modality> used,
                     bool require_labels,
                     std::optional<std::array<std::size_t, 3>> widths = std::nullopt);

}  // namespace affseq
