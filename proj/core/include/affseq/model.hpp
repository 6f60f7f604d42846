// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "affseq/dataset.hpp"
#include "affseq/layers.hpp"

namespace affseq {

enum class Variant { fusion, audio_only, video_only };
enum class Cell { gru, bilstm };

std::string_view variant_name(Variant v) noexcept;
Variant parse_variant(std::string_view name);
std::string_view cell_name(Cell c) noexcept;
Cell parse_cell(std::string_view name);

/// Architecture description. Defaults give the three-branch fusion network:
/// audio GRU(128) -> GRU(64); expnet GRU(256) -> GRU(256) -> GRU(64); facepose
/// TD-Dense(128) -> TD-Dense(64); a batchnorm per branch output; then a
/// time-distributed Dense(64) -> Dense(2) -> tanh head.
struct ModelConfig {
  Variant variant = Variant::fusion;
  Cell cell = Cell::gru;
  std::size_t sequence_len = kWindowLength;
  double dropout = 0.25;
  std::size_t audio_dim = 168;
  std::size_t expnet_dim = 2048;
  std::size_t facepose_dim = 714;
  std::vector<std::size_t> audio_units{128, 64};
  std::vector<std::size_t> expnet_units{256, 256, 64};
  std::vector<std::size_t> facepose_units{128, 64};
  std::size_t head_units = 64;

  /// Every width (inputs, layers, head) divided by `factor`, rounded up.
  ModelConfig scaled_down(std::size_t factor) const;

  /// Modalities the variant consumes, in branch order.
  std::vector<Modality> modalities() const;
  std::size_t input_dim(Modality m) const;

  /// Flat `key=value` lines (model.variant, model.cell, ...).
  std::map<std::string, std::string> to_keys() const;
  static ModelConfig from_keys(const std::map<std::string, std::string>& keys);

  bool operator==(const ModelConfig&) const = default;
};

/// Per-modality [batch x time x dim] inputs; unused modalities may be empty.
struct ModelInputs {
  std::array<Tensor, 3> features;

  Tensor& operator[](Modality m) { return features[static_cast<std::size_t>(m)]; }
  const Tensor& operator[](Modality m) const { return features[static_cast<std::size_t>(m)]; }
};

struct LayerSummary {
  std::string name;
  std::string kind;
  std::size_t parameters = 0;
};

class Model {
 public:
  /// Builds and initializes the variant. Initial weights are drawn from `seed`
  /// and rounded to float32 so a checkpoint reproduces them exactly.
  explicit Model(ModelConfig config, std::uint64_t seed = 0);
  // Dropout layers hold a pointer to rng_, so a model stays where it was built.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return config_; }

  /// [batch x time x 2] predictions in (-1, 1).
  Tensor forward(const ModelInputs& inputs, Mode mode);
  /// Accumulates parameter gradients; returns input gradients for the
  /// modalities the variant uses.
  ModelInputs backward(const Tensor& grad_out);

  /// All parameters, trainable and running statistics, in a stable order.
  std::vector<Parameter*> parameters();
  Parameter* find_parameter(const std::string& name);
  void zero_grad();
  /// Rounds every parameter to float32 precision.
  void round_to_storage();

  std::vector<LayerSummary> layer_table();
  std::size_t parameter_count();

  /// Generator behind dropout masks.
  Rng& rng() noexcept { return rng_; }

 private:
  struct Branch {
    Modality modality;
    Sequential layers;
    std::size_t width = 0;
  };

  void build();
  void add_recurrent(Sequential& seq, const std::string& name, std::size_t in,
                     std::size_t units, Rng& init);

  ModelConfig config_;
  Rng init_rng_;
  Rng rng_;
  std::vector<Branch> branches_;
  Sequential head_;
};

}  // namespace affseq
