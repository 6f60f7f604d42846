// SPDX-License-Identifier: Apache-2.0
#include "affseq/layers.hpp"

#include <algorithm>
#include <cmath>

#include "affseq/error.hpp"

namespace affseq {

std::size_t Layer::parameter_count() {
  std::size_t n = 0;
  for (const auto* p : parameters()) {
    if (p->trainable) n += p->value.size();
  }
  return n;
}

void glorot_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w.values()) v = rng.uniform(-limit, limit);
}

void orthogonal(Tensor& w, Rng& rng) {
  const std::size_t n = w.rows();
  if (w.rank() != 2 || w.cols() != n) throw DomainError("orthogonal init needs a square matrix");
  for (auto& v : w.values()) v = rng.normal();
  // Modified Gram-Schmidt over rows.
  for (std::size_t i = 0; i < n; ++i) {
    auto ri = w.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      auto rj = w.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += ri[c] * rj[c];
      for (std::size_t c = 0; c < n; ++c) ri[c] -= dot * rj[c];
    }
    double norm = 0.0;
    for (double v : ri) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericFault("orthogonal init: rank-deficient draw");
    for (auto& v : ri) v /= norm;
  }
}

Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.cols() != weight.dim(0) || bias.size() != weight.dim(1)) {
    throw DomainError("dense: input " + shape_string(x.shape()) + ", weight " +
                      shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  const std::size_t rows = x.rows();
  const std::size_t out = weight.dim(1);
  auto shape = x.shape();
  shape.back() = out;
  Tensor y(shape);
  for (std::size_t r = 0; r < rows; ++r) std::copy(bias.data(), bias.data() + out, &y.at(r, 0));
  gemm(rows, out, x.cols(), x.data(), weight.data(), y.data(), true);
  return y;
}

Dense::Dense(std::string name, std::size_t in, std::size_t out, Rng& init)
    : Layer(std::move(name)),
      in_(in),
      out_(out),
      weight_(this->name() + ".W", Tensor({in, out})),
      bias_(this->name() + ".b", Tensor({out})) {
  glorot_uniform(weight_.value, in, out, init);
}

Tensor Dense::forward(const Tensor& x, Mode) {
  input_ = x;
  return dense_forward(x, weight_.value, bias_.value);
}

Tensor Dense::backward(const Tensor& grad_out) {
  const std::size_t rows = input_.rows();
  if (grad_out.rows() != rows || grad_out.cols() != out_) {
    throw DomainError(name() + ": gradient shape " + shape_string(grad_out.shape()));
  }
  gemm_tn(rows, out_, in_, input_.data(), grad_out.data(), weight_.grad.data(), true);
  for (std::size_t r = 0; r < rows; ++r) {
    auto g = grad_out.row(r);
    for (std::size_t j = 0; j < out_; ++j) bias_.grad[j] += g[j];
  }
  Tensor dx(input_.shape());
  gemm_nt(rows, out_, in_, grad_out.data(), weight_.value.data(), dx.data(), false);
  return dx;
}

Tensor prelu(const Tensor& x, const Tensor& alpha) {
  if (alpha.size() != x.cols()) {
    throw DomainError("prelu: " + std::to_string(alpha.size()) + " slopes for width " +
                      std::to_string(x.cols()));
  }
  Tensor y(x.shape());
  const std::size_t w = x.cols();
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = x[i];
    y[i] = v > 0.0 ? v : alpha[i % w] * v;
  }
  return y;
}

PRelu::PRelu(std::string name, std::size_t width, double initial_alpha)
    : Layer(std::move(name)), alpha_(this->name() + ".alpha", Tensor({width}, initial_alpha)) {}

Tensor PRelu::forward(const Tensor& x, Mode) {
  input_ = x;
  return prelu(x, alpha_.value);
}

Tensor PRelu::backward(const Tensor& grad_out) {
  if (!grad_out.same_shape(input_)) throw DomainError(name() + ": gradient shape mismatch");
  const std::size_t w = input_.cols();
  Tensor dx(input_.shape());
  for (std::size_t i = 0; i < input_.size(); ++i) {
    double v = input_[i];
    if (v > 0.0) {
      dx[i] = grad_out[i];
    } else {
      dx[i] = alpha_.value[i % w] * grad_out[i];
      alpha_.grad[i % w] += v * grad_out[i];
    }
  }
  return dx;
}

BatchNorm::BatchNorm(std::string name, std::size_t width)
    : Layer(std::move(name)),
      gamma_(this->name() + ".gamma", Tensor({width}, 1.0)),
      beta_(this->name() + ".beta", Tensor({width}, 0.0)),
      running_mean_(this->name() + ".running_mean", Tensor({width}, 0.0), false),
      running_var_(this->name() + ".running_var", Tensor({width}, 1.0), false) {}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) {
  const std::size_t w = gamma_.value.size();
  if (x.cols() != w) {
    throw DomainError(name() + ": input width " + std::to_string(x.cols()) + ", expected " +
                      std::to_string(w));
  }
  const std::size_t n = x.rows();
  mode_ = mode;
  std::vector<double> mean(w, 0.0);
  std::vector<double> var(w, 0.0);
  if (mode == Mode::train) {
    if (n < 2) throw DomainError(name() + ": train-mode batchnorm needs at least 2 rows");
    for (std::size_t r = 0; r < n; ++r) {
      auto row = x.row(r);
      for (std::size_t c = 0; c < w; ++c) mean[c] += row[c];
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      auto row = x.row(r);
      for (std::size_t c = 0; c < w; ++c) {
        double d = row[c] - mean[c];
        var[c] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<double>(n);
    for (std::size_t c = 0; c < w; ++c) {
      running_mean_.value[c] = kMomentum * running_mean_.value[c] + (1.0 - kMomentum) * mean[c];
      running_var_.value[c] = kMomentum * running_var_.value[c] + (1.0 - kMomentum) * var[c];
    }
  } else {
    for (std::size_t c = 0; c < w; ++c) {
      mean[c] = running_mean_.value[c];
      var[c] = running_var_.value[c];
    }
  }
  inv_std_.resize(w);
  for (std::size_t c = 0; c < w; ++c) inv_std_[c] = 1.0 / std::sqrt(var[c] + kEpsilon);

  normalized_ = Tensor(x.shape());
  Tensor y(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    auto in = x.row(r);
    auto xn = normalized_.row(r);
    auto out = y.row(r);
    for (std::size_t c = 0; c < w; ++c) {
      xn[c] = (in[c] - mean[c]) * inv_std_[c];
      out[c] = gamma_.value[c] * xn[c] + beta_.value[c];
    }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
  if (!grad_out.same_shape(normalized_)) throw DomainError(name() + ": gradient shape mismatch");
  const std::size_t w = gamma_.value.size();
  const std::size_t n = normalized_.rows();
  std::vector<double> sum_dxn(w, 0.0);
  std::vector<double> sum_dxn_xn(w, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto g = grad_out.row(r);
    auto xn = normalized_.row(r);
    for (std::size_t c = 0; c < w; ++c) {
      gamma_.grad[c] += g[c] * xn[c];
      beta_.grad[c] += g[c];
      double dxn = g[c] * gamma_.value[c];
      sum_dxn[c] += dxn;
      sum_dxn_xn[c] += dxn * xn[c];
    }
  }
  Tensor dx(normalized_.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto g = grad_out.row(r);
    auto xn = normalized_.row(r);
    auto d = dx.row(r);
    for (std::size_t c = 0; c < w; ++c) {
      double dxn = g[c] * gamma_.value[c];
      if (mode_ == Mode::train) {
        d[c] = inv_std_[c] * (dxn - inv_n * sum_dxn[c] - xn[c] * inv_n * sum_dxn_xn[c]);
      } else {
        d[c] = inv_std_[c] * dxn;
      }
    }
  }
  return dx;
}

Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DomainError("dropout rate must lie in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return x;
  Tensor y(x.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = rng.uniform() < rate ? 0.0 : x[i] * keep_scale;
  }
  return y;
}

Dropout::Dropout(std::string name, double rate, Rng& rng)
    : Layer(std::move(name)), rate_(rate), rng_(&rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DomainError("dropout rate must lie in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, Mode mode) {
  scale_.assign(x.size(), 1.0);
  if (mode == Mode::infer || rate_ == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate_);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    scale_[i] = rng_->uniform() < rate_ ? 0.0 : keep_scale;
    y[i] = x[i] * scale_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  if (grad_out.size() != scale_.size()) throw DomainError(name() + ": gradient shape mismatch");
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_out[i] * scale_[i];
  return dx;
}

Tensor Tanh::forward(const Tensor& x, Mode) {
  output_ = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) output_[i] = std::tanh(x[i]);
  return output_;
}

Tensor Tanh::backward(const Tensor& grad_out) {
  if (!grad_out.same_shape(output_)) throw DomainError(name() + ": gradient shape mismatch");
  Tensor dx(output_.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    dx[i] = grad_out[i] * (1.0 - output_[i] * output_[i]);
  }
  return dx;
}

Tensor Sequential::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& layer : layers_) {
    h = layer->forward(h, mode);
    check_finite(h, layer->name() + " forward");
  }
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = (*it)->backward(g);
    check_finite(g, (*it)->name() + " backward");
  }
  return g;
}

std::vector<Parameter*> Sequential::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    for (auto* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

Tensor concatenate_features(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw DomainError("concatenate: no inputs");
  const std::size_t rows = parts.front()->rows();
  auto lead = parts.front()->shape();
  lead.pop_back();
  std::size_t total = 0;
  for (const auto* p : parts) {
    auto l = p->shape();
    l.pop_back();
    if (l != lead) {
      throw DomainError("concatenate: leading shape " + shape_string(p->shape()) +
                        " differs from " + shape_string(parts.front()->shape()));
    }
    total += p->cols();
  }
  auto shape = lead;
  shape.push_back(total);
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = out.row(r);
    std::size_t off = 0;
    for (const auto* p : parts) {
      auto src = p->row(r);
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<long>(off));
      off += src.size();
    }
  }
  return out;
}

std::vector<Tensor> split_features(const Tensor& joined, std::span<const std::size_t> widths) {
  std::size_t total = 0;
  for (auto w : widths) total += w;
  if (total != joined.cols()) throw DomainError("split: widths do not sum to feature width");
  std::vector<Tensor> parts;
  auto shape = joined.shape();
  std::size_t off = 0;
  for (auto w : widths) {
    shape.back() = w;
    Tensor part(shape);
    for (std::size_t r = 0; r < joined.rows(); ++r) {
      auto src = joined.row(r);
      std::copy(src.begin() + static_cast<long>(off), src.begin() + static_cast<long>(off + w),
                part.row(r).begin());
    }
    off += w;
    parts.push_back(std::move(part));
  }
  return parts;
}

LossResult masked_mse(const Tensor& pred, const Tensor& target,
                      std::span<const std::uint8_t> mask) {
  if (!pred.same_shape(target)) {
    throw DomainError("mse: prediction " + shape_string(pred.shape()) + " vs target " +
                      shape_string(target.shape()));
  }
  if (mask.size() != pred.rows()) {
    throw DomainError("mse: mask has " + std::to_string(mask.size()) + " entries for " +
                      std::to_string(pred.rows()) + " frames");
  }
  LossResult result;
  result.grad = Tensor(pred.shape());
  const std::size_t w = pred.cols();
  double sum = 0.0;
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    if (!mask[r]) continue;
    for (std::size_t c = 0; c < w; ++c) {
      double d = pred.at(r, c) - target.at(r, c);
      sum += d * d;
    }
    result.count += w;
  }
  if (result.count == 0) throw DomainError("mse: every element is masked");
  const double inv = 1.0 / static_cast<double>(result.count);
  result.loss = sum * inv;
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    if (!mask[r]) continue;
    for (std::size_t c = 0; c < w; ++c) {
      result.grad.at(r, c) = 2.0 * (pred.at(r, c) - target.at(r, c)) * inv;
    }
  }
  return result;
}

void rmsprop_update(Tensor& weight, const Tensor& grad, Tensor& cache,
                    const RmsPropOptions& options) {
  if (!weight.same_shape(grad) || !weight.same_shape(cache)) {
    throw DomainError("rmsprop: parameter, gradient and cache shapes differ");
  }
  for (std::size_t i = 0; i < weight.size(); ++i) {
    double g = grad[i];
    if (!std::isfinite(g)) throw NumericFault("rmsprop: non-finite gradient");
    cache[i] = options.rho * cache[i] + (1.0 - options.rho) * g * g;
    weight[i] -= options.learning_rate * g / (std::sqrt(cache[i]) + options.epsilon);
  }
}

void RmsProp::step(std::span<Parameter* const> params) {
  for (const auto* p : params) {
    if (p->trainable && !p->grad.all_finite()) {
      throw NumericFault("rmsprop: non-finite gradient for " + p->name);
    }
  }
  for (auto* p : params) {
    if (!p->trainable) continue;
    auto [it, inserted] = caches_.try_emplace(p->name, p->value.shape());
    rmsprop_update(p->value, p->grad, it->second, options_);
  }
}

void zero_grad(std::span<Parameter* const> params) {
  for (auto* p : params) p->grad.fill(0.0);
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    if (!p->trainable) continue;
    for (double g : p->grad.values()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double scale = max_norm / norm;
    for (auto* p : params) {
      if (!p->trainable) continue;
      for (auto& g : p->grad.values()) g *= scale;
    }
  }
  return norm;
}

}  // namespace affseq
