// SPDX-License-Identifier: Apache-2.0
#include "affseq/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "affseq/error.hpp"

namespace affseq {
namespace {

constexpr char kFeatureMagic[4] = {'A', 'F', 'F', 'W'};
constexpr std::size_t kFeatureHeaderBytes = 16;

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
               static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    std::size_t comma = line.find(',', pos);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(pos)));
      return fields;
    }
    fields.push_back(trim(line.substr(pos, comma - pos)));
    pos = comma + 1;
  }
}

double parse_double(std::string_view field, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(where + ": not a number: '" + std::string(field) + "'");
  }
  return v;
}

std::size_t parse_count(std::string_view field, const std::string& where) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(where + ": not a non-negative integer: '" + std::string(field) + "'");
  }
  return v;
}

std::ifstream open_text(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw IoError(std::string("cannot open ") + what + ": " + path.string());
  return in;
}

}  // namespace

std::size_t modality_width(Modality m) noexcept {
  switch (m) {
    case Modality::audio:
      return 168;
    case Modality::expnet:
      return 2048;
    case Modality::facepose:
      return 714;
  }
  return 0;
}

std::string_view modality_name(Modality m) noexcept {
  switch (m) {
    case Modality::audio:
      return "audio";
    case Modality::expnet:
      return "expnet";
    case Modality::facepose:
      return "facepose";
  }
  return "?";
}

Modality parse_modality(std::string_view name) {
  for (auto m : kAllModalities) {
    if (modality_name(m) == name) return m;
  }
  throw ConfigError("unknown modality '" + std::string(name) + "'");
}

void save_feature_file(const std::filesystem::path& path, const FeatureTrack& track) {
  if (track.data.size() != track.rows * track.cols) {
    throw DomainError("feature track data size does not match rows x cols");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file: " + path.string());
  out.write(kFeatureMagic, 4);
  put_u32(out, kFeatureFileVersion);
  put_u32(out, static_cast<std::uint32_t>(track.rows));
  put_u32(out, static_cast<std::uint32_t>(track.cols));
  for (double v : track.data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw IoError("failed writing feature file: " + path.string());
}

FeatureTrack load_feature_track(const std::filesystem::path& path, Modality modality,
                                std::optional<std::size_t> expected_cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < kFeatureHeaderBytes) {
    throw TruncationError("feature file header " + path.string(), kFeatureHeaderBytes,
                          bytes.size());
  }
  if (std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) {
    throw FormatError("feature file magic mismatch in " + path.string());
  }
  std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kFeatureFileVersion) {
    throw FormatError("feature file version " + std::to_string(version) + " unsupported in " +
                      path.string());
  }
  FeatureTrack track;
  track.modality = modality;
  track.video_id = path.stem().string();
  track.rows = get_u32(bytes.data() + 8);
  track.cols = get_u32(bytes.data() + 12);

  std::size_t want = expected_cols.value_or(modality_width(modality));
  if (track.cols != want) {
    throw DomainError("feature width mismatch in " + path.string() + ": " +
                      std::string(modality_name(modality)) + " expects " + std::to_string(want) +
                      " columns, file has " + std::to_string(track.cols));
  }
  std::size_t payload = 4 * track.rows * track.cols;
  std::size_t found = bytes.size() - kFeatureHeaderBytes;
  if (found < payload) {
    throw TruncationError("feature file payload " + path.string(), payload, found);
  }
  if (found > payload) {
    throw FormatError("feature file " + path.string() + " has " +
                      std::to_string(found - payload) + " trailing bytes");
  }
  track.data.resize(track.rows * track.cols);
  const unsigned char* p = bytes.data() + kFeatureHeaderBytes;
  for (std::size_t i = 0; i < track.data.size(); ++i) {
    float v = std::bit_cast<float>(get_u32(p + 4 * i));
    if (!std::isfinite(v)) {
      throw DomainError("non-finite feature value at row " + std::to_string(i / track.cols) +
                        " in " + path.string());
    }
    track.data[i] = v;
  }
  return track;
}

LabelTrack load_labels(const std::filesystem::path& path) {
  auto in = open_text(path, "label file");
  LabelTrack labels;
  labels.video_id = path.stem().string();
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    std::string where = path.string() + ":" + std::to_string(line_no);
    if (!header_seen) {
      header_seen = true;
      if (fields.size() != 3 || (fields[0] != "frame" && fields[0] != "frame_index") ||
          fields[1] != "valence" || fields[2] != "arousal") {
        throw FormatError(where + ": expected header 'frame,valence,arousal'");
      }
      continue;
    }
    if (fields.size() != 3) throw FormatError(where + ": expected 3 fields");
    std::size_t frame = parse_count(fields[0], where);
    if (frame != labels.size()) {
      throw FormatError(where + ": frame index " + std::to_string(frame) + " where " +
                        std::to_string(labels.size()) + " was expected");
    }
    double v = parse_double(fields[1], where);
    double a = parse_double(fields[2], where);
    bool ok = v >= -1.0 && v <= 1.0 && a >= -1.0 && a <= 1.0;
    labels.valence.push_back(v);
    labels.arousal.push_back(a);
    labels.valid.push_back(ok);
  }
  if (!header_seen) throw FormatError(path.string() + ": empty label file");
  return labels;
}

void save_labels(const std::filesystem::path& path, const LabelTrack& labels) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write label file: " + path.string());
  out << "frame,valence,arousal\n";
  char buf[64];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double v = labels.valid[i] ? labels.valence[i] : kUnannotated;
    double a = labels.valid[i] ? labels.arousal[i] : kUnannotated;
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i, v, a);
    out << buf;
  }
}

std::vector<std::size_t> window_track(std::size_t n_frames, std::size_t window,
                                      std::size_t hop) {
  if (n_frames == 0) throw DomainError("n_frames must be ≥ 1");
  if (window == 0 || hop == 0) throw DomainError("window and hop must be positive");
  if (n_frames <= window) return {0};
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + window <= n_frames; s += hop) starts.push_back(s);
  if (starts.back() != n_frames - window) starts.push_back(n_frames - window);
  return starts;
}

ColumnStats compute_column_stats(std::span<const FeatureTrack* const> tracks) {
  if (tracks.empty()) throw DomainError("cannot compute statistics of zero tracks");
  const std::size_t cols = tracks.front()->cols;
  std::vector<double> sum(cols, 0.0);
  std::size_t count = 0;
  for (const auto* t : tracks) {
    if (t->cols != cols) throw DomainError("tracks disagree on feature width");
    for (std::size_t r = 0; r < t->rows; ++r) {
      auto row = t->row(r);
      for (std::size_t c = 0; c < cols; ++c) sum[c] += row[c];
    }
    count += t->rows;
  }
  if (count == 0) throw DomainError("cannot compute statistics of zero rows");

  ColumnStats stats;
  stats.mean.resize(cols);
  for (std::size_t c = 0; c < cols; ++c) stats.mean[c] = sum[c] / static_cast<double>(count);

  // Second pass on centered values for accuracy.
  std::vector<double> sq(cols, 0.0);
  for (const auto* t : tracks) {
    for (std::size_t r = 0; r < t->rows; ++r) {
      auto row = t->row(r);
      for (std::size_t c = 0; c < cols; ++c) {
        double d = row[c] - stats.mean[c];
        sq[c] += d * d;
      }
    }
  }
  stats.stddev.resize(cols);
  for (std::size_t c = 0; c < cols; ++c) {
    double sd = std::sqrt(sq[c] / static_cast<double>(count));
    stats.stddev[c] = std::max(sd, kStdFloor);
  }
  for (auto& v : stats.mean) v = static_cast<float>(v);
  for (auto& v : stats.stddev) v = std::max<double>(static_cast<float>(v), kStdFloor);
  return stats;
}

FeatureTrack normalize(const FeatureTrack& track, const ColumnStats& stats) {
  if (stats.mean.size() != track.cols || stats.stddev.size() != track.cols) {
    throw DomainError("normalization statistics have width " +
                      std::to_string(stats.mean.size()) + ", track has " +
                      std::to_string(track.cols));
  }
  FeatureTrack out = track;
  for (std::size_t r = 0; r < out.rows; ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < out.cols; ++c) {
      row[c] = (row[c] - stats.mean[c]) / std::max(stats.stddev[c], kStdFloor);
    }
  }
  return out;
}

std::vector<SequenceWindow> make_windows(const VideoData& video, std::size_t video_index,
                                         std::span<const Modality> used, std::size_t window,
                                         std::size_t hop) {
  const std::size_t n = video.n_frames;
  for (auto m : used) {
    const auto* t = video.track(m);
    if (!t) {
      throw CoverageError("video " + video.video_id + " lacks modality " +
                          std::string(modality_name(m)));
    }
    if (t->rows != n) {
      throw DomainError("video " + video.video_id + ": " + std::string(modality_name(m)) +
                        " track has " + std::to_string(t->rows) + " rows, expected " +
                        std::to_string(n));
    }
  }
  if (video.labels && video.labels->size() != n) {
    throw DomainError("video " + video.video_id + ": label track has " +
                      std::to_string(video.labels->size()) + " frames, expected " +
                      std::to_string(n));
  }

  std::vector<SequenceWindow> windows;
  for (std::size_t start : window_track(n, window, hop)) {
    SequenceWindow w;
    w.video_id = video.video_id;
    w.video_index = video_index;
    w.start_frame = start;
    w.real_frames = std::min(window, n - start);
    w.targets.assign(window * 2, 0.0);
    w.mask.assign(window, 0);
    for (auto m : used) {
      const auto& t = *video.track(m);
      auto& dst = w.features[static_cast<std::size_t>(m)];
      dst.resize(window * t.cols);
      for (std::size_t i = 0; i < window; ++i) {
        // Edge replication past the end of the track.
        std::size_t src = std::min(start + i, n - 1);
        auto row = t.row(src);
        std::copy(row.begin(), row.end(), dst.begin() + static_cast<long>(i * t.cols));
      }
    }
    for (std::size_t i = 0; i < w.real_frames; ++i) {
      std::size_t f = start + i;
      if (video.labels) {
        const auto& l = *video.labels;
        if (l.valid[f]) {
          w.targets[2 * i] = l.valence[f];
          w.targets[2 * i + 1] = l.arousal[f];
          w.mask[i] = 1;
        }
      } else {
        w.mask[i] = 1;
      }
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

std::vector<double> merge_window_predictions(std::span<const WindowPrediction> windows,
                                             std::size_t n_frames) {
  std::vector<double> sum(n_frames * 2, 0.0);
  std::vector<std::size_t> hits(n_frames, 0);
  for (const auto& w : windows) {
    if (w.values.size() < w.length * 2) {
      throw DomainError("window prediction holds fewer than length x 2 values");
    }
    if (w.start + w.length > n_frames) {
      throw DomainError("window [" + std::to_string(w.start) + ", " +
                        std::to_string(w.start + w.length) + ") extends past frame " +
                        std::to_string(n_frames));
    }
    for (std::size_t i = 0; i < w.length; ++i) {
      sum[2 * (w.start + i)] += w.values[2 * i];
      sum[2 * (w.start + i) + 1] += w.values[2 * i + 1];
      ++hits[w.start + i];
    }
  }
  for (std::size_t f = 0; f < n_frames; ++f) {
    if (hits[f] == 0) throw CoverageError("frame " + std::to_string(f) + " is not covered");
    sum[2 * f] /= static_cast<double>(hits[f]);
    sum[2 * f + 1] /= static_cast<double>(hits[f]);
  }
  return sum;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  auto in = open_text(path, "manifest");
  const auto base = path.parent_path();
  auto resolve = [&](std::string_view field) -> std::filesystem::path {
    if (field.empty()) return {};
    std::filesystem::path p(field);
    return p.is_absolute() ? p : base / p;
  };

  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    std::string where = path.string() + ":" + std::to_string(line_no);
    if (!header_seen) {
      header_seen = true;
      static const char* kHeader[] = {"video_id",      "split",      "audio_path", "expnet_path",
                                      "facepose_path", "label_path", "n_frames"};
      bool ok = fields.size() == 7;
      for (std::size_t i = 0; ok && i < 7; ++i) ok = fields[i] == kHeader[i];
      if (!ok) {
        throw FormatError(where +
                          ": expected header "
                          "'video_id,split,audio_path,expnet_path,facepose_path,label_path,"
                          "n_frames'");
      }
      continue;
    }
    if (fields.size() != 7) throw FormatError(where + ": expected 7 fields");
    ManifestEntry e;
    e.video_id = std::string(fields[0]);
    if (e.video_id.empty()) throw FormatError(where + ": empty video_id");
    if (fields[1] == "train") {
      e.split = Split::train;
    } else if (fields[1] == "val") {
      e.split = Split::val;
    } else {
      throw FormatError(where + ": split must be 'train' or 'val'");
    }
    for (std::size_t m = 0; m < 3; ++m) e.feature_paths[m] = resolve(fields[2 + m]);
    e.label_path = resolve(fields[5]);
    e.n_frames = parse_count(fields[6], where);
    if (e.n_frames == 0) throw DomainError(where + ": n_frames must be ≥ 1");
    entries.push_back(std::move(e));
  }
  if (!header_seen) throw FormatError(path.string() + ": empty manifest");
  return entries;
}

VideoData load_video(const ManifestEntry& entry, std::span<const Modality> used,
                     bool require_labels, std::optional<std::array<std::size_t, 3>> widths) {
  VideoData video;
  video.video_id = entry.video_id;
  video.n_frames = entry.n_frames;
  for (auto m : used) {
    const auto& p = entry.feature_paths[static_cast<std::size_t>(m)];
    if (p.empty()) {
      throw CoverageError("video " + entry.video_id + " has no " +
                          std::string(modality_name(m)) + " feature file");
    }
    std::optional<std::size_t> want;
    if (widths) want = (*widths)[static_cast<std::size_t>(m)];
    auto track = load_feature_track(p, m, want);
    track.video_id = entry.video_id;
    if (track.rows != entry.n_frames) {
      throw DomainError("video " + entry.video_id + ": " + std::string(modality_name(m)) +
                        " has " + std::to_string(track.rows) + " rows, manifest says " +
                        std::to_string(entry.n_frames));
    }
    video.features[static_cast<std::size_t>(m)] = std::move(track);
  }
  if (!entry.label_path.empty()) {
    auto labels = load_labels(entry.label_path);
    labels.video_id = entry.video_id;
    if (labels.size() != entry.n_frames) {
      throw DomainError("video " + entry.video_id + ": label file has " +
                        std::to_string(labels.size()) + " frames, manifest says " +
                        std::to_string(entry.n_frames));
    }
    video.labels = std::move(labels);
  } else if (require_labels) {
    throw CoverageError("video " + entry.video_id + " has no label file");
  }
  return video;
}

}  // namespace affseq
