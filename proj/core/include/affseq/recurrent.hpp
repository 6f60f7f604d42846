// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "affseq/layers.hpp"

namespace affseq {

/// Gate parameters of one GRU. Kernels are [in x h], recurrent kernels [h x h],
/// one bias per gate.
struct GruWeights {
  const Tensor& w_z;
  const Tensor& w_r;
  const Tensor& w_h;
  const Tensor& u_z;
  const Tensor& u_r;
  const Tensor& u_h;
  const Tensor& b_z;
  const Tensor& b_r;
  const Tensor& b_h;
};

/// One GRU step on a batch, x_t [B x in], h_prev [B x h]:
///   z  = sigmoid(x W_z + h_prev U_z + b_z)
///   r  = sigmoid(x W_r + h_prev U_r + b_r)
///   hc = tanh(x W_h + (r * h_prev) U_h + b_h)
///   h  = z * h_prev + (1 - z) * hc
Tensor gru_cell(const Tensor& x_t, const Tensor& h_prev, const GruWeights& w);

/// GRU over [batch x time x in] starting from a zero state; returns the full
/// hidden sequence [batch x time x units]. Backward is exact BPTT.
class GruLayer final : public Layer {
 public:
  GruLayer(std::string name, std::size_t in, std::size_t units, Rng& init);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override;
  std::string kind() const override { return "GRU"; }

  GruWeights weights() const;
  std::size_t units() const noexcept { return units_; }
  /// 3 * (in * h + h * h + h)
  static std::size_t count_for(std::size_t in, std::size_t units) noexcept {
    return 3 * (in * units + units * units + units);
  }

  // Gate order: z, r, h.
  Parameter w[3];
  Parameter u[3];
  Parameter b[3];

 private:
  std::size_t in_;
  std::size_t units_;
  std::size_t batch_ = 0;
  std::size_t steps_ = 0;
  Tensor input_;
  // Per-step caches, each [T][B x h] flattened.
  std::vector<double> h_prev_;
  std::vector<double> z_;
  std::vector<double> r_;
  std::vector<double> cand_;
};

/// LSTM over [batch x time x in] with packed gate blocks (i, f, g, o):
/// kernel [in x 4h], recurrent kernel [h x 4h], bias [4h] with the forget block
/// initialized to `forget_bias`.
class LstmLayer final : public Layer {
 public:
  LstmLayer(std::string name, std::size_t in, std::size_t units, Rng& init,
            double forget_bias = 1.0);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&kernel, &recurrent, &bias}; }
  std::string kind() const override { return "LSTM"; }

  std::size_t units() const noexcept { return units_; }
  static std::size_t count_for(std::size_t in, std::size_t units) noexcept {
    return 4 * (in * units + units * units + units);
  }

  Parameter kernel;
  Parameter recurrent;
  Parameter bias;

 private:
  std::size_t in_;
  std::size_t units_;
  std::size_t batch_ = 0;
  std::size_t steps_ = 0;
  Tensor input_;
  std::vector<double> h_prev_;
  std::vector<double> c_prev_;
  std::vector<double> gates_;  // activated [T][B x 4h]
  std::vector<double> c_;
};

/// Reverses the time axis of a [batch x time x features] tensor.
Tensor reverse_time(const Tensor& x);

/// Runs `forward_layer` on the sequence and `backward_layer` on its time
/// reversal, then concatenates per step: [fwd(t), bwd(t)].
class Bidirectional final : public Layer {
 public:
  Bidirectional(std::string name, std::unique_ptr<Layer> forward_layer,
                std::unique_ptr<Layer> backward_layer);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override;
  std::string kind() const override { return "Bidirectional(" + forward_->kind() + ")"; }

  Layer& forward_layer() noexcept { return *forward_; }
  Layer& backward_layer() noexcept { return *backward_; }

 private:
  std::unique_ptr<Layer> forward_;
  std::unique_ptr<Layer> backward_;
  std::size_t forward_width_ = 0;
  std::size_t backward_width_ = 0;
};

}  // namespace affseq
