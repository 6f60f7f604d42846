// SPDX-License-Identifier: Apache-2.0
#include "affseq/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "affseq/error.hpp"
#include "affseq/parallel.hpp"

namespace affseq {
namespace {

std::vector<VideoData> normalized_copy(std::span<const VideoData> videos,
                                       const NormalizationStats& stats,
                                       std::span<const Modality> used) {
  std::vector<VideoData> out(videos.begin(), videos.end());
  for (auto& v : out) {
    for (auto m : used) {
      const auto* s = stats.get(m);
      auto& t = v.features[static_cast<std::size_t>(m)];
      if (s && t) t = normalize(*t, *s);
    }
  }
  return out;
}

struct Batch {
  ModelInputs inputs;
  Tensor targets;
  std::vector<std::uint8_t> mask;
};

Batch assemble(std::span<const SequenceWindow* const> windows, const ModelConfig& config) {
  const std::size_t B = windows.size();
  const std::size_t T = config.sequence_len;
  Batch batch;
  for (auto m : config.modalities()) {
    const std::size_t dim = config.input_dim(m);
    Tensor x({B, T, dim});
    for (std::size_t b = 0; b < B; ++b) {
      const auto& src = windows[b]->features[static_cast<std::size_t>(m)];
      if (src.size() != T * dim) {
        throw DomainError("window of video " + windows[b]->video_id + " has " +
                          std::to_string(src.size()) + " " + std::string(modality_name(m)) +
                          " values, expected " + std::to_string(T * dim));
      }
      std::copy(src.begin(), src.end(), x.data() + b * T * dim);
    }
    batch.inputs[m] = std::move(x);
  }
  batch.targets = Tensor({B, T, 2});
  batch.mask.resize(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy(windows[b]->targets.begin(), windows[b]->targets.end(),
              batch.targets.data() + b * T * 2);
    std::copy(windows[b]->mask.begin(), windows[b]->mask.end(), batch.mask.begin() + b * T);
  }
  return batch;
}

std::vector<SequenceWindow> windows_of(std::span<const VideoData> videos,
                                       const ModelConfig& config) {
  auto used = config.modalities();
  std::vector<SequenceWindow> all;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    auto w = make_windows(videos[i], i, used, config.sequence_len, kWindowHop);
    std::move(w.begin(), w.end(), std::back_inserter(all));
  }
  return all;
}

PredictionMap predict_normalized(Model& model, std::span<const VideoData> videos,
                                 std::size_t batch_size) {
  const auto& config = model.config();
  PredictionMap out;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    auto windows = make_windows(videos[i], i, config.modalities(), config.sequence_len,
                                kWindowHop);
    std::vector<WindowPrediction> preds;
    for (std::size_t lo = 0; lo < windows.size(); lo += batch_size) {
      std::size_t hi = std::min(windows.size(), lo + batch_size);
      std::vector<const SequenceWindow*> ptrs;
      for (std::size_t k = lo; k < hi; ++k) ptrs.push_back(&windows[k]);
      Batch batch = assemble(ptrs, config);
      Tensor y = model.forward(batch.inputs, Mode::infer);
      const std::size_t T = config.sequence_len;
      for (std::size_t k = 0; k < ptrs.size(); ++k) {
        WindowPrediction wp;
        wp.start = ptrs[k]->start_frame;
        wp.length = ptrs[k]->real_frames;
        wp.values.assign(y.data() + k * T * 2, y.data() + k * T * 2 + wp.length * 2);
        preds.push_back(std::move(wp));
      }
    }
    out[videos[i].video_id] = merge_window_predictions(preds, videos[i].n_frames);
  }
  return out;
}

EvalReport evaluate_videos(Model& model, std::span<const VideoData> videos,
                           std::size_t batch_size, CccMode mode) {
  auto preds = predict_normalized(model, videos, batch_size);
  std::vector<LabelTrack> labels;
  for (const auto& v : videos) {
    if (!v.labels) throw CoverageError("validation video " + v.video_id + " has no labels");
    LabelTrack l = *v.labels;
    l.video_id = v.video_id;
    labels.push_back(std::move(l));
  }
  return evaluate(preds, labels, mode);
}

void round_caches(RmsProp& optimizer) {
  for (auto& [name, cache] : optimizer.caches()) round_to_float(cache);
}

std::string format_row(const HistoryRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.train_loss,
                r.val.ccc_valence, r.val.ccc_arousal, r.val.mse_valence, r.val.mse_arousal);
  return buf;
}

}  // namespace

Dataset load_dataset(std::span<const ManifestEntry> entries, const ModelConfig& model) {
  auto used = model.modalities();
  const std::array<std::size_t, 3> widths{model.audio_dim, model.expnet_dim, model.facepose_dim};
  Dataset data;
  for (const auto& e : entries) {
    auto video = load_video(e, used, true, widths);
    (e.split == Split::train ? data.train : data.val).push_back(std::move(video));
  }
  return data;
}

TrainResult train(const Dataset& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  if (data.train.empty()) throw ConfigError("training split is empty");
  if (data.val.empty()) throw ConfigError("validation split is empty");
  if (config.batch_size == 0) throw ConfigError("batch_size must be ≥ 1");
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  set_num_threads(config.threads);

  const ModelConfig& mc = config.model;
  const auto used = mc.modalities();

  TrainResult result;
  if (config.normalize) {
    for (auto m : used) {
      std::vector<const FeatureTrack*> tracks;
      for (const auto& v : data.train) {
        const auto* t = v.track(m);
        if (!t) {
          throw CoverageError("training video " + v.video_id + " lacks modality " +
                              std::string(modality_name(m)));
        }
        tracks.push_back(t);
      }
      result.stats.set(m, compute_column_stats(tracks));
    }
  }
  auto train_videos = normalized_copy(data.train, result.stats, used);
  auto val_videos = normalized_copy(data.val, result.stats, used);
  auto windows = windows_of(train_videos, mc);

  result.model = std::make_unique<Model>(mc, config.seed);
  Model& model = *result.model;
  RmsProp optimizer({config.learning_rate, 0.9, 1e-7});
  Rng shuffle_rng(config.seed ^ 0x5851F42D4C957F2Dull);
  auto params = model.parameters();

  std::optional<double> best;
  result.best = capture_checkpoint(model, &optimizer, result.stats, 0, best);

  std::ofstream history_file;
  if (!config.checkpoint_dir.empty()) {
    std::filesystem::create_directories(config.checkpoint_dir);
    history_file.open(config.checkpoint_dir / "history.csv", std::ios::trunc);
    if (!history_file) {
      throw IoError("cannot write " + (config.checkpoint_dir / "history.csv").string());
    }
    history_file << history_csv({});
    history_file.flush();
    if (config.epochs == 0) save_checkpoint(config.checkpoint_dir / "best.ckpt", result.best);
  }

  std::vector<std::size_t> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);
      }
    }
    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    std::size_t batch_index = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size, ++batch_index) {
      std::size_t hi = std::min(order.size(), lo + config.batch_size);
      std::vector<const SequenceWindow*> ptrs;
      for (std::size_t k = lo; k < hi; ++k) ptrs.push_back(&windows[order[k]]);
      Batch batch = assemble(ptrs, mc);
      if (std::none_of(batch.mask.begin(), batch.mask.end(), [](auto m) { return m != 0; })) {
        continue;
      }
      try {
        model.zero_grad();
        Tensor y = model.forward(batch.inputs, Mode::train);
        auto loss = masked_mse(y, batch.targets, batch.mask);
        if (!std::isfinite(loss.loss)) throw NumericFault("non-finite loss");
        model.backward(loss.grad);
        if (config.grad_clip > 0.0) clip_grad_norm(params, config.grad_clip);
        optimizer.step(params);
        model.round_to_storage();
        round_caches(optimizer);
        loss_sum += loss.loss;
        ++loss_batches;
      } catch (const NumericFault& e) {
        throw NumericFault("epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
    }

    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    row.val = evaluate_videos(model, val_videos, config.batch_size, config.ccc_mode);
    result.history.push_back(row);

    const double score = row.val.mean_ccc();
    if (!best || score > *best) {
      best = score;
      result.best = capture_checkpoint(model, &optimizer, result.stats, epoch, best);
      if (!config.checkpoint_dir.empty()) {
        save_checkpoint(config.checkpoint_dir / "best.ckpt", result.best);
      }
    }
    if (history_file.is_open()) {
      history_file << format_row(row);
      history_file.flush();
    }
    if (on_epoch) on_epoch(row);
  }
  return result;
}

std::string history_csv(std::span<const HistoryRow> rows) {
  std::string out =
      "epoch,train_loss,val_ccc_valence,val_ccc_arousal,val_mse_valence,val_mse_arousal\n";
  for (const auto& r : rows) out += format_row(r);
  return out;
}

PredictionMap predict(Model& model, const NormalizationStats& stats,
                      std::span<const VideoData> videos, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be ≥ 1");
  auto used = model.config().modalities();
  auto normalized = normalized_copy(videos, stats, used);
  return predict_normalized(model, normalized, batch_size);
}

void write_prediction_csv(const std::filesystem::path& path, std::span<const double> frames) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write predictions: " + path.string());
  out << "frame,valence,arousal\n";
  char buf[96];
  for (std::size_t f = 0; f < frames.size() / 2; ++f) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", f, frames[2 * f], frames[2 * f + 1]);
    out << buf;
  }
  if (!out) throw IoError("failed writing predictions: " + path.string());
}

LoadedModel load_model(const Checkpoint& ckpt) {
  LoadedModel loaded;
  loaded.model = std::make_unique<Model>(ckpt.model_config());
  restore_model(ckpt, *loaded.model);
  loaded.stats = restore_stats(ckpt);
  return loaded;
}

}  // namespace affseq
