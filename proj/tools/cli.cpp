// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <set>

#include "affseq/audio_io.hpp"
#include "affseq/checkpoint.hpp"
#include "affseq/dataset.hpp"
#include "affseq/dsp.hpp"
#include "affseq/error.hpp"
#include "affseq/metrics.hpp"
#include "affseq/parallel.hpp"
#include "affseq/train.hpp"

namespace affseq::cli {
namespace {

std::string default_threads() {
  const char* env = std::getenv("AFFSEQ_THREADS");
  return env && *env ? std::string(env) : std::string("1");
}

KeySpec threads_key() {
  return {"threads", "worker threads (default from AFFSEQ_THREADS)", default_threads(), false};
}

std::vector<KeySpec> dsp_keys() {
  dsp::DspParams d;
  return {
      {"n_fft", "STFT frame length (power of two)", std::to_string(d.n_fft), false},
      {"stft_hop", "STFT hop in samples", std::to_string(d.stft_hop), false},
      {"n_mels", "mel bands", std::to_string(d.n_mels), false},
      {"n_mfcc", "cepstral coefficients kept", std::to_string(d.n_mfcc), false},
      {"fmin", "lowest filterbank frequency in Hz", "0", false},
      {"fmax", "highest filterbank frequency in Hz (0 = Nyquist)", "0", false},
      {"log_floor", "energy floor before log10", "1e-10", false},
  };
}

std::vector<KeySpec> model_keys() {
  std::vector<KeySpec> keys;
  const std::map<std::string, std::string> help = {
      {"model.variant", "fusion | audio_only | video_only"},
      {"model.cell", "gru | bilstm"},
      {"model.sequence_len", "frames per training window"},
      {"model.dropout", "dropout rate"},
      {"model.audio_dim", "audio feature width"},
      {"model.expnet_dim", "expnet feature width"},
      {"model.facepose_dim", "facepose feature width"},
      {"model.audio_units", "audio branch widths, comma separated"},
      {"model.expnet_units", "expnet branch widths, comma separated"},
      {"model.facepose_units", "facepose branch widths, comma separated"},
      {"model.head_units", "hidden width of the head"},
  };
  for (const auto& [key, value] : ModelConfig{}.to_keys()) {
    auto it = help.find(key);
    keys.push_back({key, it == help.end() ? key : it->second, value, false});
  }
  return keys;
}

template <typename... Groups>
std::vector<KeySpec> concat(std::vector<KeySpec> first, Groups... rest) {
  (first.insert(first.end(), rest.begin(), rest.end()), ...);
  return first;
}

class Settings {
 public:
  explicit Settings(std::map<std::string, std::string> values) : values_(std::move(values)) {}

  bool has(const std::string& key) const { return !get(key).empty(); }

  const std::string& get(const std::string& key) const {
    static const std::string empty;
    auto it = values_.find(key);
    return it == values_.end() ? empty : it->second;
  }

  std::filesystem::path path(const std::string& key) const { return get(key); }

  std::uint64_t u64(const std::string& key) const {
    const auto& v = get(key);
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
  }

  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

  double real(const std::string& key) const {
    const auto& v = get(key);
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    return out;
  }

  bool flag(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
  }

  std::map<std::string, std::string> with_prefix(const std::string& prefix) const {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : values_) {
      if (k.rfind(prefix, 0) == 0) out[k] = v;
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

std::vector<ManifestEntry> select_split(std::vector<ManifestEntry> entries,
                                        const std::string& split) {
  if (split == "all") return entries;
  Split want;
  if (split == "train") {
    want = Split::train;
  } else if (split == "val") {
    want = Split::val;
  } else {
    throw ConfigError("split: expected train, val or all, got '" + split + "'");
  }
  std::erase_if(entries, [&](const ManifestEntry& e) { return e.split != want; });
  if (entries.empty()) throw ConfigError("manifest has no rows in split '" + split + "'");
  return entries;
}

std::array<std::size_t, 3> widths_of(const ModelConfig& m) {
  return {m.audio_dim, m.expnet_dim, m.facepose_dim};
}

int cmd_extract_audio(const Settings& s, std::ostream& out) {
  dsp::DspParams p;
  p.n_fft = s.size("n_fft");
  p.stft_hop = s.size("stft_hop");
  p.n_mels = s.size("n_mels");
  p.n_mfcc = s.size("n_mfcc");
  p.fmin = s.real("fmin");
  p.fmax = s.real("fmax");
  p.log_floor = s.real("log_floor");
  const auto frames = s.size("frames");
  const auto out_path = s.path("out");
  if (frames == 0) throw DomainError("n_frames must be ≥ 1");

  auto clip = read_wav(s.path("wav"));
  auto track = dsp::extract_audio_track(clip, frames, p, s.size("threads"));
  track.video_id = out_path.stem().string();
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  save_feature_file(out_path, track);
  out << "wrote " << track.rows << " x " << track.cols << " audio features to "
      << out_path.string() << "\n";
  return kOk;
}

int cmd_train(const Settings& s, std::ostream& out) {
  TrainConfig cfg;
  cfg.epochs = s.size("epochs");
  cfg.batch_size = s.size("batch_size");
  cfg.learning_rate = s.real("learning_rate");
  cfg.seed = s.u64("seed");
  cfg.shuffle = s.flag("shuffle");
  cfg.grad_clip = s.real("grad_clip");
  cfg.normalize = s.flag("normalize");
  cfg.threads = s.size("threads");
  cfg.ccc_mode = parse_ccc_mode(s.get("ccc_mode"));
  cfg.model = ModelConfig::from_keys(s.with_prefix("model."));
  cfg.checkpoint_dir = s.path("out");

  auto entries = load_manifest(s.path("manifest"));
  auto data = load_dataset(entries, cfg.model);
  out << "training " << variant_name(cfg.model.variant) << "/" << cell_name(cfg.model.cell)
      << " on " << data.train.size() << " train and " << data.val.size() << " val videos\n";
  auto result = train(data, cfg, [&](const HistoryRow& row) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu loss %.6g val ccc %.4f/%.4f\n", row.epoch,
                  row.train_loss, row.val.ccc_valence, row.val.ccc_arousal);
    out << buf;
  });
  out << "best checkpoint (epoch " << result.best.epoch() << ") at "
      << (cfg.checkpoint_dir / "best.ckpt").string() << "\n";
  return kOk;
}

int cmd_evaluate(const Settings& s, std::ostream& out) {
  auto entries = select_split(load_manifest(s.path("manifest")), s.get("split"));
  const auto mode = parse_ccc_mode(s.get("ccc_mode"));
  set_num_threads(s.size("threads"));

  std::vector<LabelTrack> labels;
  PredictionMap preds;
  if (s.has("predictions")) {
    const auto dir = s.path("predictions");
    for (const auto& e : entries) {
      auto v = load_video(e, {}, true);
      labels.push_back(*v.labels);
      auto p = load_labels(dir / (e.video_id + ".csv"));
      std::vector<double> frames;
      for (std::size_t i = 0; i < p.size(); ++i) {
        frames.push_back(p.valence[i]);
        frames.push_back(p.arousal[i]);
      }
      preds[e.video_id] = std::move(frames);
    }
  } else {
    if (!s.has("checkpoint")) throw ConfigError("evaluate needs --checkpoint or --predictions");
    auto loaded = load_model(load_checkpoint(s.path("checkpoint")));
    const auto& mc = loaded.model->config();
    auto used = mc.modalities();
    std::vector<VideoData> videos;
    for (const auto& e : entries) {
      videos.push_back(load_video(e, used, true, widths_of(mc)));
      labels.push_back(*videos.back().labels);
    }
    preds = predict(*loaded.model, loaded.stats, videos, s.size("batch_size"));
  }
  auto report = evaluate(preds, labels, mode);
  const auto csv = report_csv(report);
  out << csv << report_text(report);
  if (s.has("out")) {
    std::ofstream f(s.path("out"), std::ios::trunc);
    if (!f) throw IoError("cannot write report: " + s.get("out"));
    f << csv;
  }
  return kOk;
}

int cmd_predict(const Settings& s, std::ostream& out) {
  auto entries = select_split(load_manifest(s.path("manifest")), s.get("split"));
  set_num_threads(s.size("threads"));
  auto loaded = load_model(load_checkpoint(s.path("checkpoint")));
  const auto& mc = loaded.model->config();
  auto used = mc.modalities();
  std::vector<VideoData> videos;
  for (const auto& e : entries) videos.push_back(load_video(e, used, false, widths_of(mc)));
  auto preds = predict(*loaded.model, loaded.stats, videos, s.size("batch_size"));

  const auto dir = s.path("out");
  std::filesystem::create_directories(dir);
  for (const auto& [id, frames] : preds) write_prediction_csv(dir / (id + ".csv"), frames);
  out << "wrote " << preds.size() << " prediction files to " << dir.string() << "\n";
  return kOk;
}

using Command = std::function<int(const Settings&, std::ostream&)>;

Command command_for(std::string_view name) {
  if (name == "extract-audio") return cmd_extract_audio;
  if (name == "train") return cmd_train;
  if (name == "evaluate") return cmd_evaluate;
  return cmd_predict;
}

std::string describe(std::string_view name) {
  if (name == "extract-audio") return "Compute per-frame MFCC + log-mel features from a WAV file";
  if (name == "train") return "Train a model and keep the best checkpoint by validation CCC";
  if (name == "evaluate") return "Report CCC and MSE for a manifest split";
  return "Write per-frame valence/arousal predictions";
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::vector<std::string> subcommands() { return {"extract-audio", "train", "evaluate", "predict"}; }

std::vector<KeySpec> subcommand_keys(std::string_view subcommand) {
  if (subcommand == "extract-audio") {
    return concat(std::vector<KeySpec>{{"wav", "input WAV file", "", true},
                                       {"frames", "number of video frames N", "", true},
                                       {"out", "output feature file", "", true}},
                  dsp_keys(), std::vector<KeySpec>{threads_key()});
  }
  if (subcommand == "train") {
    TrainConfig d;
    return concat(
        std::vector<KeySpec>{
            {"manifest", "manifest CSV", "", true},
            {"out", "directory for best.ckpt and history.csv", "", true},
            {"epochs", "training epochs", std::to_string(d.epochs), false},
            {"batch_size", "windows per batch", std::to_string(d.batch_size), false},
            {"learning_rate", "RMSprop learning rate", "1e-4", false},
            {"seed", "random seed", std::to_string(d.seed), false},
            {"shuffle", "shuffle windows each epoch", "true", false},
            {"grad_clip", "global gradient-norm clip (0 disables)", "5", false},
            {"normalize", "z-score features with training-split statistics", "true", false},
            {"ccc_mode", "concat | per-video-mean", "concat", false},
            threads_key()},
        model_keys());
  }
  if (subcommand == "evaluate") {
    return {{"manifest", "manifest CSV", "", true},
            {"checkpoint", "checkpoint to evaluate", "", false},
            {"predictions", "directory of <video_id>.csv predictions instead of a checkpoint", "",
             false},
            {"split", "train | val | all", "val", false},
            {"ccc_mode", "concat | per-video-mean", "concat", false},
            {"batch_size", "windows per forward pass", "32", false},
            {"out", "also write the report CSV here", "", false},
            threads_key()};
  }
  if (subcommand == "predict") {
    return {{"manifest", "manifest CSV", "", true},
            {"checkpoint", "checkpoint to run", "", true},
            {"out", "output directory for <video_id>.csv files", "", true},
            {"split", "train | val | all", "all", false},
            {"batch_size", "windows per forward pass", "32", false},
            threads_key()};
  }
  throw ConfigError("unknown subcommand '" + std::string(subcommand) + "'");
}

std::string flag_for_key(std::string_view key) {
  std::string flag = "--" + std::string(key);
  std::replace(flag.begin() + 2, flag.end(), '_', '-');
  return flag;
}

std::string key_for_flag(std::string_view flag) {
  std::string key(flag.substr(flag.rfind("--", 0) == 0 ? 2 : 0));
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path,
                                                     std::span<const KeySpec> allowed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::set<std::string> known;
  for (const auto& k : allowed) known.insert(k.key);
  std::map<std::string, std::string> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    auto key = trim(std::string_view(text).substr(0, eq));
    auto value = trim(std::string_view(text).substr(eq + 1));
    if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    if (values.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    values[key] = value;
  }
  return values;
}

int exit_code_for(const std::exception& e) noexcept {
  if (dynamic_cast<const NumericFault*>(&e)) return kNumericFailure;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const TruncationError*>(&e) ||
      dynamic_cast<const UnsupportedEncodingError*>(&e) ||
      dynamic_cast<const ChecksumError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const std::filesystem::filesystem_error*>(&e)) {
    return kIoFailure;
  }
  if (dynamic_cast<const Error*>(&e)) return kDomainFailure;
  return kUnexpected;
}

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal valence/arousal sequence regression", "affseq"};
  app.require_subcommand(1);

  struct Bound {
    CLI::App* app = nullptr;
    std::vector<KeySpec> keys;
    std::map<std::string, std::string> flags;
    std::map<std::string, CLI::Option*> options;
    std::string config_path;
  };
  std::map<std::string, Bound> bound;
  for (const auto& name : subcommands()) {
    auto& b = bound[name];
    b.app = app.add_subcommand(name, describe(name));
    b.keys = subcommand_keys(name);
    b.app->add_option("--config", b.config_path, "flat 'key = value' file; flags override it");
    for (const auto& k : b.keys) {
      std::string help = k.help + " [key: " + k.key;
      if (!k.default_value.empty()) help += ", default: " + k.default_value;
      if (k.required) help += ", required";
      help += "]";
      b.options[k.key] = b.app->add_option(flag_for_key(k.key), b.flags[k.key], help);
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kDomainFailure;
  }

  for (auto& [name, b] : bound) {
    if (!b.app->parsed()) continue;
    try {
      std::map<std::string, std::string> values;
      for (const auto& k : b.keys) {
        if (!k.default_value.empty()) values[k.key] = k.default_value;
      }
      if (!b.config_path.empty()) {
        for (auto& [k, v] : parse_config_file(b.config_path, b.keys)) values[k] = v;
      }
      for (const auto& k : b.keys) {
        if (b.options[k.key]->count() > 0) values[k.key] = b.flags[k.key];
      }
      for (const auto& k : b.keys) {
        if (k.required && values[k.key].empty()) {
          throw ConfigError("missing required setting " + flag_for_key(k.key) + " (key '" +
                            k.key + "')");
        }
      }
      return command_for(name)(Settings(std::move(values)), out);
    } catch (const std::exception& e) {
      err << "affseq " << name << ": error: " << e.what() << "\n";
      return exit_code_for(e);
    }
  }
  return kUnexpected;
}

}  // namespace affseq::cli
