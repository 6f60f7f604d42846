// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "affseq/checkpoint.hpp"
#include "affseq/dataset.hpp"
#include "affseq/metrics.hpp"
#include "affseq/model.hpp"

namespace affseq {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  bool shuffle = true;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 5.0;
  /// Z-score inputs with statistics from the training split.
  bool normalize = true;
  std::size_t threads = 1;
  CccMode ccc_mode = CccMode::concat;
  ModelConfig model;
  /// When set, best.ckpt and history.csv are written here.
  std::filesystem::path checkpoint_dir;
};

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  EvalReport val;
};

struct Dataset {
  std::vector<VideoData> train;
  std::vector<VideoData> val;
};

/// Loads every manifest row with the modalities `model` consumes, labels
/// required, split by the manifest's split column.
Dataset load_dataset(std::span<const ManifestEntry> entries, const ModelConfig& model);

struct TrainResult {
  Checkpoint best;
  std::vector<HistoryRow> history;
  /// Model state after the last epoch.
  std::unique_ptr<Model> model;
  NormalizationStats stats;
};

using EpochCallback = std::function<void(const HistoryRow&)>;

/// Per epoch: shuffle windows (seeded), train on masked MSE with RMSprop,
/// evaluate the validation split, keep the checkpoint with the best mean CCC.
TrainResult train(const Dataset& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// `epoch,train_loss,val_ccc_valence,val_ccc_arousal,val_mse_valence,val_mse_arousal`
std::string history_csv(std::span<const HistoryRow> rows);

/// Inference-mode predictions merged to frame level for each video.
PredictionMap predict(Model& model, const NormalizationStats& stats,
                      std::span<const VideoData> videos, std::size_t batch_size = 32);

/// `frame,valence,arousal`, one row per frame.
void write_prediction_csv(const std::filesystem::path& path, std::span<const double> frames);

/// Model and statistics restored from a checkpoint.
struct LoadedModel {
  std::unique_ptr<Model> model;
  NormalizationStats stats;
};
LoadedModel load_model(const Checkpoint& ckpt);

}  // namespace affseq
