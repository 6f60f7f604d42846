// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>

#include "affseq/dataset.hpp"

namespace affseq::testkit {

/// Writes feature files, label files and a manifest for the given videos and
/// returns the manifest path.
inline std::filesystem::path write_manifest(const std::filesystem::path& dir,
                                            std::span<const VideoData> train,
                                            std::span<const VideoData> val) {
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.csv";
  std::ofstream out(manifest);
  out << "video_id,split,audio_path,expnet_path,facepose_path,label_path,n_frames\n";
  auto emit = [&](const VideoData& v, const char* split) {
    out << v.video_id << "," << split;
    for (std::size_t m = 0; m < 3; ++m) {
      out << ",";
      if (!v.features[m]) continue;
      const std::string name = v.video_id + "." + std::string(modality_name(kAllModalities[m])) + ".bin";
      save_feature_file(dir / name, *v.features[m]);
      out << name;
    }
    out << ",";
    if (v.labels) {
      save_labels(dir / (v.video_id + ".labels.csv"), *v.labels);
      out << v.video_id << ".labels.csv";
    }
    out << "," << v.n_frames << "\n";
  };
  for (const auto& v : train) emit(v, "train");
  for (const auto& v : val) emit(v, "val");
  return manifest;
}

}  // namespace affseq::testkit
