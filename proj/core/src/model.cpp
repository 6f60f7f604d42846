// SPDX-License-Identifier: Apache-2.0
#include "affseq/model.hpp"

#include <charconv>
#include <sstream>

#include "affseq/error.hpp"
#include "affseq/recurrent.hpp"

namespace affseq {
namespace {

std::string join_units(const std::vector<std::size_t>& units) {
  std::string s;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(units[i]);
  }
  return s;
}

std::size_t parse_size(std::string_view text, const std::string& key) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::size_t> parse_units(std::string_view text, const std::string& key) {
  std::vector<std::size_t> units;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    units.push_back(parse_size(text.substr(pos, comma - pos), key));
    pos = comma + 1;
  }
  return units;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

std::string_view variant_name(Variant v) noexcept {
  switch (v) {
    case Variant::fusion:
      return "fusion";
    case Variant::audio_only:
      return "audio_only";
    case Variant::video_only:
      return "video_only";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::fusion, Variant::audio_only, Variant::video_only}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown model.variant '" + std::string(name) +
                    "' (expected fusion, audio_only or video_only)");
}

std::string_view cell_name(Cell c) noexcept { return c == Cell::gru ? "gru" : "bilstm"; }

Cell parse_cell(std::string_view name) {
  if (name == "gru") return Cell::gru;
  if (name == "bilstm") return Cell::bilstm;
  throw ConfigError("unknown model.cell '" + std::string(name) + "' (expected gru or bilstm)");
}

ModelConfig ModelConfig::scaled_down(std::size_t factor) const {
  if (factor == 0) throw ConfigError("scale factor must be positive");
  ModelConfig c = *this;
  c.audio_dim = ceil_div(audio_dim, factor);
  c.expnet_dim = ceil_div(expnet_dim, factor);
  c.facepose_dim = ceil_div(facepose_dim, factor);
  for (auto* units : {&c.audio_units, &c.expnet_units, &c.facepose_units}) {
    for (auto& u : *units) u = ceil_div(u, factor);
  }
  c.head_units = ceil_div(head_units, factor);
  return c;
}

std::vector<Modality> ModelConfig::modalities() const {
  switch (variant) {
    case Variant::fusion:
      return {Modality::audio, Modality::expnet, Modality::facepose};
    case Variant::audio_only:
      return {Modality::audio};
    case Variant::video_only:
      return {Modality::expnet};
  }
  return {};
}

std::size_t ModelConfig::input_dim(Modality m) const {
  switch (m) {
    case Modality::audio:
      return audio_dim;
    case Modality::expnet:
      return expnet_dim;
    case Modality::facepose:
      return facepose_dim;
  }
  return 0;
}

std::map<std::string, std::string> ModelConfig::to_keys() const {
  std::ostringstream dropout_text;
  dropout_text.precision(17);
  dropout_text << dropout;
  return {
      {"model.variant", std::string(variant_name(variant))},
      {"model.cell", std::string(cell_name(cell))},
      {"model.sequence_len", std::to_string(sequence_len)},
      {"model.dropout", dropout_text.str()},
      {"model.audio_dim", std::to_string(audio_dim)},
      {"model.expnet_dim", std::to_string(expnet_dim)},
      {"model.facepose_dim", std::to_string(facepose_dim)},
      {"model.audio_units", join_units(audio_units)},
      {"model.expnet_units", join_units(expnet_units)},
      {"model.facepose_units", join_units(facepose_units)},
      {"model.head_units", std::to_string(head_units)},
  };
}

ModelConfig ModelConfig::from_keys(const std::map<std::string, std::string>& keys) {
  ModelConfig c;
  for (const auto& [key, value] : keys) {
    if (key == "model.variant") {
      c.variant = parse_variant(value);
    } else if (key == "model.cell") {
      c.cell = parse_cell(value);
    } else if (key == "model.sequence_len") {
      c.sequence_len = parse_size(value, key);
    } else if (key == "model.dropout") {
      double d = 0.0;
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), d);
      if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError(key + ": expected a number, got '" + value + "'");
      }
      c.dropout = d;
    } else if (key == "model.audio_dim") {
      c.audio_dim = parse_size(value, key);
    } else if (key == "model.expnet_dim") {
      c.expnet_dim = parse_size(value, key);
    } else if (key == "model.facepose_dim") {
      c.facepose_dim = parse_size(value, key);
    } else if (key == "model.audio_units") {
      c.audio_units = parse_units(value, key);
    } else if (key == "model.expnet_units") {
      c.expnet_units = parse_units(value, key);
    } else if (key == "model.facepose_units") {
      c.facepose_units = parse_units(value, key);
    } else if (key == "model.head_units") {
      c.head_units = parse_size(value, key);
    }
  }
  return c;
}

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), init_rng_(seed), rng_(seed ^ 0xD1B54A32D192ED03ull) {
  if (!(config_.dropout >= 0.0 && config_.dropout < 1.0)) {
    throw ConfigError("model.dropout must lie in [0, 1)");
  }
  if (config_.sequence_len == 0) throw ConfigError("model.sequence_len must be ≥ 1");
  build();
  round_to_storage();
}

void Model::add_recurrent(Sequential& seq, const std::string& name, std::size_t in,
                          std::size_t units, Rng& init) {
  if (config_.cell == Cell::gru) {
    seq.add<GruLayer>(name, in, units, init);
    return;
  }
  if (units % 2 != 0) {
    throw ConfigError(name + ": bilstm slot width " + std::to_string(units) + " must be even");
  }
  auto fwd = std::make_unique<LstmLayer>(name + ".fwd", in, units / 2, init);
  auto bwd = std::make_unique<LstmLayer>(name + ".bwd", in, units / 2, init);
  seq.add<Bidirectional>(name, std::move(fwd), std::move(bwd));
}

void Model::build() {
  const double rate = config_.dropout;
  const std::string cell = config_.cell == Cell::gru ? "gru" : "bilstm";
  for (auto m : config_.modalities()) {
    Branch branch{m, Sequential(std::string(modality_name(m))), 0};
    const std::string prefix = std::string(modality_name(m)) + ".";
    std::size_t width = config_.input_dim(m);
    if (width == 0) throw ConfigError(prefix + "input width must be positive");
    switch (m) {
      case Modality::audio:
        if (config_.audio_units.empty()) throw ConfigError("model.audio_units is empty");
        for (std::size_t i = 0; i < config_.audio_units.size(); ++i) {
          std::size_t units = config_.audio_units[i];
          std::string id = prefix + cell + std::to_string(i);
          add_recurrent(branch.layers, id, width, units, init_rng_);
          branch.layers.add<PRelu>(prefix + "prelu" + std::to_string(i), units);
          branch.layers.add<Dropout>(prefix + "dropout" + std::to_string(i), rate, rng_);
          width = units;
        }
        break;
      case Modality::expnet:
        if (config_.expnet_units.empty()) throw ConfigError("model.expnet_units is empty");
        for (std::size_t i = 0; i < config_.expnet_units.size(); ++i) {
          std::size_t units = config_.expnet_units[i];
          add_recurrent(branch.layers, prefix + cell + std::to_string(i), width, units,
                        init_rng_);
          branch.layers.add<PRelu>(prefix + "prelu" + std::to_string(i), units);
          width = units;
        }
        break;
      case Modality::facepose:
        if (config_.facepose_units.empty()) throw ConfigError("model.facepose_units is empty");
        for (std::size_t i = 0; i < config_.facepose_units.size(); ++i) {
          std::size_t units = config_.facepose_units[i];
          branch.layers.add<Dense>(prefix + "dense" + std::to_string(i), width, units,
                                   init_rng_);
          branch.layers.add<Dropout>(prefix + "dropout" + std::to_string(i), rate, rng_);
          width = units;
        }
        break;
    }
    branch.layers.add<BatchNorm>(prefix + "batchnorm", width);
    branch.width = width;
    branches_.push_back(std::move(branch));
  }

  std::size_t joined = 0;
  for (const auto& b : branches_) joined += b.width;
  head_ = Sequential("head");
  head_.add<Dense>("head.dense0", joined, config_.head_units, init_rng_);
  head_.add<PRelu>("head.prelu0", config_.head_units);
  head_.add<Dense>("head.dense1", config_.head_units, 2, init_rng_);
  head_.add<Tanh>("head.tanh");
}

Tensor Model::forward(const ModelInputs& inputs, Mode mode) {
  std::vector<Tensor> outputs;
  outputs.reserve(branches_.size());
  const Tensor* first = nullptr;
  for (auto& branch : branches_) {
    const Tensor& x = inputs[branch.modality];
    const std::size_t dim = config_.input_dim(branch.modality);
    if (x.rank() != 3 || x.dim(2) != dim) {
      throw DomainError(std::string(modality_name(branch.modality)) + " input " +
                        shape_string(x.shape()) + " does not match width " +
                        std::to_string(dim));
    }
    if (first && (x.dim(0) != first->dim(0) || x.dim(1) != first->dim(1))) {
      throw DomainError("modalities disagree on batch or sequence length");
    }
    first = &x;
    outputs.push_back(branch.layers.forward(x, mode));
  }
  std::vector<const Tensor*> parts;
  for (const auto& o : outputs) parts.push_back(&o);
  Tensor joined = concatenate_features(parts);
  return head_.forward(joined, mode);
}

ModelInputs Model::backward(const Tensor& grad_out) {
  Tensor g = head_.backward(grad_out);
  std::vector<std::size_t> widths;
  for (const auto& b : branches_) widths.push_back(b.width);
  auto parts = split_features(g, widths);
  ModelInputs grads;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    grads[branches_[i].modality] = branches_[i].layers.backward(parts[i]);
  }
  return grads;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& b : branches_) {
    for (auto* p : b.layers.parameters()) out.push_back(p);
  }
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

Parameter* Model::find_parameter(const std::string& name) {
  for (auto* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void Model::zero_grad() {
  auto params = parameters();
  affseq::zero_grad(params);
}

void Model::round_to_storage() {
  for (auto* p : parameters()) round_to_float(p->value);
}

std::vector<LayerSummary> Model::layer_table() {
  std::vector<LayerSummary> rows;
  auto collect = [&](Sequential& seq) {
    for (const auto& layer : seq.layers()) {
      rows.push_back({layer->name(), layer->kind(), layer->parameter_count()});
    }
  };
  for (auto& b : branches_) collect(b.layers);
  collect(head_);
  return rows;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const auto& row : layer_table()) n += row.parameters;
  return n;
}

}  // namespace affseq
