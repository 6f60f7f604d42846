// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "affseq/tensor.hpp"

namespace affseq {

enum class Mode { train, infer };

/// Named tensor with a gradient of the same shape. Non-trainable parameters
/// (batchnorm running statistics) are saved with the model but skipped by the
/// optimizer and by parameter counts.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}
};

/// A layer caches whatever its forward pass needs; backward consumes the
/// cache, accumulates into parameter gradients and returns the input gradient.
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  virtual std::string kind() const = 0;

  const std::string& name() const noexcept { return name_; }
  std::size_t parameter_count();

 private:
  std::string name_;
};

void glorot_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);
/// Fills a square matrix with an orthogonal one (Gram-Schmidt on a Gaussian draw).
void orthogonal(Tensor& w, Rng& rng);

/// y = xW + b, applied to every row of x (so it is time-distributed over
/// [batch x time x in] inputs).
Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);

class Dense final : public Layer {
 public:
  Dense(std::string name, std::size_t in, std::size_t out, Rng& init);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  std::string kind() const override { return "Dense"; }

  Parameter& weight() noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }

 private:
  std::size_t in_;
  std::size_t out_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

/// y = x for x > 0, alpha * x otherwise; one learnable alpha per feature.
Tensor prelu(const Tensor& x, const Tensor& alpha);

class PRelu final : public Layer {
 public:
  PRelu(std::string name, std::size_t width, double initial_alpha = 0.25);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&alpha_}; }
  std::string kind() const override { return "PReLU"; }

  Parameter& alpha() noexcept { return alpha_; }

 private:
  Parameter alpha_;
  Tensor input_;
};

/// Per-feature normalization over all leading axes (batch x time).
class BatchNorm final : public Layer {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.9;

  BatchNorm(std::string name, std::size_t width);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override {
    return {&gamma_, &beta_, &running_mean_, &running_var_};
  }
  std::string kind() const override { return "BatchNorm"; }

  Parameter& gamma() noexcept { return gamma_; }
  Parameter& beta() noexcept { return beta_; }
  Parameter& running_mean() noexcept { return running_mean_; }
  Parameter& running_var() noexcept { return running_var_; }

 private:
  Parameter gamma_;
  Parameter beta_;
  Parameter running_mean_;
  Parameter running_var_;
  Mode mode_ = Mode::infer;
  Tensor normalized_;
  std::vector<double> inv_std_;
};

/// Inverted dropout: in train mode each unit is zeroed with probability
/// `rate` and survivors are scaled by 1 / (1 - rate); identity in infer mode.
Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng);

class Dropout final : public Layer {
 public:
  Dropout(std::string name, double rate, Rng& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "Dropout"; }

 private:
  double rate_;
  Rng* rng_;
  std::vector<double> scale_;
};

class Tanh final : public Layer {
 public:
  explicit Tanh(std::string name) : Layer(std::move(name)) {}

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "Tanh"; }

 private:
  Tensor output_;
};

/// Runs layers in order; checks every intermediate for NaN/Inf.
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::string name) : name_(std::move(name)) {}

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& grad_out);
  std::vector<Parameter*> parameters();

  std::span<const std::unique_ptr<Layer>> layers() const noexcept { return layers_; }
  bool empty() const noexcept { return layers_.empty(); }
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Joins tensors with identical leading shape along the feature axis.
Tensor concatenate_features(std::span<const Tensor* const> parts);
/// Inverse of concatenate_features for a gradient.
std::vector<Tensor> split_features(const Tensor& joined, std::span<const std::size_t> widths);

struct LossResult {
  double loss = 0.0;
  Tensor grad;
  std::size_t count = 0;
};

/// Mean of squared errors over unmasked elements. `mask` has one entry per
/// row of pred (each [.. x 2] frame); a zero masks every column of that row.
/// Throws DomainError if every element is masked.
LossResult masked_mse(const Tensor& pred, const Tensor& target,
                      std::span<const std::uint8_t> mask);

struct RmsPropOptions {
  double learning_rate = 1e-4;
  double rho = 0.9;
  double epsilon = 1e-7;
};

/// cache <- rho * cache + (1 - rho) * g^2;  w <- w - lr * g / (sqrt(cache) + eps)
void rmsprop_update(Tensor& weight, const Tensor& grad, Tensor& cache,
                    const RmsPropOptions& options);

class RmsProp {
 public:
  explicit RmsProp(RmsPropOptions options = {}) : options_(options) {}

  /// Updates every trainable parameter from its gradient. Throws NumericFault
  /// on a non-finite gradient before touching any parameter.
  void step(std::span<Parameter* const> params);

  const RmsPropOptions& options() const noexcept { return options_; }
  std::map<std::string, Tensor>& caches() noexcept { return caches_; }
  const std::map<std::string, Tensor>& caches() const noexcept { return caches_; }

 private:
  RmsPropOptions options_;
  std::map<std::string, Tensor> caches_;
};

void zero_grad(std::span<Parameter* const> params);

/// Scales all trainable gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace affseq
