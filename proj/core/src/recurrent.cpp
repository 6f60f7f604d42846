// SPDX-License-Identifier: Apache-2.0
#include "affseq/recurrent.hpp"

#include <algorithm>
#include <cmath>

#include "affseq/error.hpp"

namespace affseq {
namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

void require_sequence(const Tensor& x, std::size_t in, const std::string& who) {
  if (x.rank() != 3 || x.dim(2) != in || x.dim(1) == 0) {
    throw DomainError(who + ": expected [batch x time x " + std::to_string(in) + "], got " +
                      shape_string(x.shape()));
  }
}

// Projects every (batch, time) row of x through `kernel` and adds `bias`.
std::vector<double> project(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  const std::size_t rows = x.rows();
  const std::size_t out = kernel.dim(1);
  std::vector<double> y(rows * out);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(bias.data(), bias.data() + out, y.data() + r * out);
  }
  gemm(rows, out, x.cols(), x.data(), kernel.data(), y.data(), true);
  return y;
}

}  // namespace

Tensor gru_cell(const Tensor& x_t, const Tensor& h_prev, const GruWeights& w) {
  const std::size_t in = w.w_z.dim(0);
  const std::size_t h = w.u_z.dim(0);
  if (x_t.cols() != in || h_prev.cols() != h || x_t.rows() != h_prev.rows()) {
    throw DomainError("gru_cell: input " + shape_string(x_t.shape()) + ", state " +
                      shape_string(h_prev.shape()) + " do not match kernel [" +
                      std::to_string(in) + " x " + std::to_string(h) + "]");
  }
  const std::size_t batch = x_t.rows();
  Tensor az = dense_forward(x_t, w.w_z, w.b_z);
  Tensor ar = dense_forward(x_t, w.w_r, w.b_r);
  Tensor ah = dense_forward(x_t, w.w_h, w.b_h);
  gemm(batch, h, h, h_prev.data(), w.u_z.data(), az.data(), true);
  gemm(batch, h, h, h_prev.data(), w.u_r.data(), ar.data(), true);
  Tensor rh(h_prev.shape());
  for (std::size_t i = 0; i < rh.size(); ++i) rh[i] = sigmoid(ar[i]) * h_prev[i];
  gemm(batch, h, h, rh.data(), w.u_h.data(), ah.data(), true);
  Tensor out(h_prev.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double z = sigmoid(az[i]);
    out[i] = z * h_prev[i] + (1.0 - z) * std::tanh(ah[i]);
  }
  return out;
}

GruLayer::GruLayer(std::string name, std::size_t in, std::size_t units, Rng& init)
    : Layer(std::move(name)), in_(in), units_(units) {
  static const char* kGate[3] = {"z", "r", "h"};
  for (int g = 0; g < 3; ++g) {
    w[g] = Parameter(this->name() + ".W_" + kGate[g], Tensor({in, units}));
    u[g] = Parameter(this->name() + ".U_" + kGate[g], Tensor({units, units}));
    b[g] = Parameter(this->name() + ".b_" + kGate[g], Tensor({units}));
  }
  // Glorot over the joint [in x 3h] kernel, as with a packed GRU.
  for (int g = 0; g < 3; ++g) glorot_uniform(w[g].value, in, 3 * units, init);
  for (int g = 0; g < 3; ++g) orthogonal(u[g].value, init);
}

std::vector<Parameter*> GruLayer::parameters() {
  return {&w[0], &w[1], &w[2], &u[0], &u[1], &u[2], &b[0], &b[1], &b[2]};
}

GruWeights GruLayer::weights() const {
  return {w[0].value, w[1].value, w[2].value, u[0].value, u[1].value,
          u[2].value, b[0].value, b[1].value, b[2].value};
}

Tensor GruLayer::forward(const Tensor& x, Mode) {
  require_sequence(x, in_, name());
  const std::size_t B = x.dim(0);
  const std::size_t T = x.dim(1);
  const std::size_t H = units_;
  batch_ = B;
  steps_ = T;
  input_ = x;

  auto xz = project(x, w[0].value, b[0].value);
  auto xr = project(x, w[1].value, b[1].value);
  auto xh = project(x, w[2].value, b[2].value);

  const std::size_t step = B * H;
  h_prev_.assign(T * step, 0.0);
  z_.assign(T * step, 0.0);
  r_.assign(T * step, 0.0);
  cand_.assign(T * step, 0.0);

  Tensor out({B, T, H});
  std::vector<double> h(step, 0.0);
  std::vector<double> az(step), ar(step), ah(step), rh(step);
  for (std::size_t t = 0; t < T; ++t) {
    std::copy(h.begin(), h.end(), h_prev_.begin() + static_cast<long>(t * step));
    for (std::size_t bi = 0; bi < B; ++bi) {
      const std::size_t row = (bi * T + t) * H;
      std::copy(xz.begin() + static_cast<long>(row), xz.begin() + static_cast<long>(row + H),
                az.begin() + static_cast<long>(bi * H));
      std::copy(xr.begin() + static_cast<long>(row), xr.begin() + static_cast<long>(row + H),
                ar.begin() + static_cast<long>(bi * H));
      std::copy(xh.begin() + static_cast<long>(row), xh.begin() + static_cast<long>(row + H),
                ah.begin() + static_cast<long>(bi * H));
    }
    gemm(B, H, H, h.data(), u[0].value.data(), az.data(), true);
    gemm(B, H, H, h.data(), u[1].value.data(), ar.data(), true);
    double* z = z_.data() + t * step;
    double* r = r_.data() + t * step;
    double* c = cand_.data() + t * step;
    for (std::size_t i = 0; i < step; ++i) {
      z[i] = sigmoid(az[i]);
      r[i] = sigmoid(ar[i]);
      rh[i] = r[i] * h[i];
    }
    gemm(B, H, H, rh.data(), u[2].value.data(), ah.data(), true);
    for (std::size_t i = 0; i < step; ++i) {
      c[i] = std::tanh(ah[i]);
      h[i] = z[i] * h[i] + (1.0 - z[i]) * c[i];
    }
    for (std::size_t bi = 0; bi < B; ++bi) {
      std::copy(h.begin() + static_cast<long>(bi * H), h.begin() + static_cast<long>((bi + 1) * H),
                out.data() + (bi * T + t) * H);
    }
  }
  return out;
}

Tensor GruLayer::backward(const Tensor& grad_out) {
  const std::size_t B = batch_;
  const std::size_t T = steps_;
  const std::size_t H = units_;
  if (grad_out.rank() != 3 || grad_out.dim(0) != B || grad_out.dim(1) != T ||
      grad_out.dim(2) != H) {
    throw DomainError(name() + ": gradient shape " + shape_string(grad_out.shape()));
  }
  const std::size_t step = B * H;
  std::vector<double> dproj[3];
  for (auto& d : dproj) d.assign(B * T * H, 0.0);

  std::vector<double> dh_next(step, 0.0);
  std::vector<double> dh(step), dhp(step), dah(step), daz(step), dar(step), drh(step), rh(step);
  for (std::size_t t = T; t-- > 0;) {
    const double* hp = h_prev_.data() + t * step;
    const double* z = z_.data() + t * step;
    const double* r = r_.data() + t * step;
    const double* c = cand_.data() + t * step;
    for (std::size_t bi = 0; bi < B; ++bi) {
      const double* g = grad_out.data() + (bi * T + t) * H;
      for (std::size_t j = 0; j < H; ++j) dh[bi * H + j] = g[j] + dh_next[bi * H + j];
    }
    for (std::size_t i = 0; i < step; ++i) {
      dhp[i] = dh[i] * z[i];
      dah[i] = dh[i] * (1.0 - z[i]) * (1.0 - c[i] * c[i]);
      rh[i] = r[i] * hp[i];
    }
    gemm_tn(B, H, H, rh.data(), dah.data(), u[2].grad.data(), true);
    gemm_nt(B, H, H, dah.data(), u[2].value.data(), drh.data(), false);
    for (std::size_t i = 0; i < step; ++i) {
      double dz = dh[i] * (hp[i] - c[i]);
      daz[i] = dz * z[i] * (1.0 - z[i]);
      double dr = drh[i] * hp[i];
      dar[i] = dr * r[i] * (1.0 - r[i]);
      dhp[i] += drh[i] * r[i];
    }
    gemm_tn(B, H, H, hp, daz.data(), u[0].grad.data(), true);
    gemm_tn(B, H, H, hp, dar.data(), u[1].grad.data(), true);
    gemm_nt(B, H, H, daz.data(), u[0].value.data(), dhp.data(), true);
    gemm_nt(B, H, H, dar.data(), u[1].value.data(), dhp.data(), true);
    for (std::size_t bi = 0; bi < B; ++bi) {
      const std::size_t row = (bi * T + t) * H;
      for (std::size_t j = 0; j < H; ++j) {
        dproj[0][row + j] = daz[bi * H + j];
        dproj[1][row + j] = dar[bi * H + j];
        dproj[2][row + j] = dah[bi * H + j];
      }
    }
    dh_next.swap(dhp);
  }

  const std::size_t rows = B * T;
  Tensor dx(input_.shape());
  for (int g = 0; g < 3; ++g) {
    gemm_tn(rows, H, in_, input_.data(), dproj[g].data(), w[g].grad.data(), true);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < H; ++j) b[g].grad[j] += dproj[g][r * H + j];
    }
    gemm_nt(rows, H, in_, dproj[g].data(), w[g].value.data(), dx.data(), true);
  }
  return dx;
}

LstmLayer::LstmLayer(std::string name, std::size_t in, std::size_t units, Rng& init,
                     double forget_bias)
    : Layer(std::move(name)),
      kernel(this->name() + ".W", Tensor({in, 4 * units})),
      recurrent(this->name() + ".U", Tensor({units, 4 * units})),
      bias(this->name() + ".b", Tensor({4 * units})),
      in_(in),
      units_(units) {
  glorot_uniform(kernel.value, in, 4 * units, init);
  // One orthogonal block per gate.
  for (std::size_t g = 0; g < 4; ++g) {
    Tensor block({units, units});
    orthogonal(block, init);
    for (std::size_t r = 0; r < units; ++r) {
      for (std::size_t c = 0; c < units; ++c) recurrent.value.at(r, g * units + c) = block.at(r, c);
    }
  }
  for (std::size_t j = 0; j < units; ++j) bias.value[units + j] = forget_bias;
}

Tensor LstmLayer::forward(const Tensor& x, Mode) {
  require_sequence(x, in_, name());
  const std::size_t B = x.dim(0);
  const std::size_t T = x.dim(1);
  const std::size_t H = units_;
  const std::size_t G = 4 * H;
  batch_ = B;
  steps_ = T;
  input_ = x;

  auto proj = project(x, kernel.value, bias.value);
  h_prev_.assign(T * B * H, 0.0);
  c_prev_.assign(T * B * H, 0.0);
  c_.assign(T * B * H, 0.0);
  gates_.assign(T * B * G, 0.0);

  Tensor out({B, T, H});
  std::vector<double> h(B * H, 0.0), c(B * H, 0.0), a(B * G);
  for (std::size_t t = 0; t < T; ++t) {
    std::copy(h.begin(), h.end(), h_prev_.begin() + static_cast<long>(t * B * H));
    std::copy(c.begin(), c.end(), c_prev_.begin() + static_cast<long>(t * B * H));
    for (std::size_t bi = 0; bi < B; ++bi) {
      const double* src = proj.data() + (bi * T + t) * G;
      std::copy(src, src + G, a.begin() + static_cast<long>(bi * G));
    }
    gemm(B, G, H, h.data(), recurrent.value.data(), a.data(), true);
    double* act = gates_.data() + t * B * G;
    for (std::size_t bi = 0; bi < B; ++bi) {
      const double* ab = a.data() + bi * G;
      double* gb = act + bi * G;
      for (std::size_t j = 0; j < H; ++j) {
        double ig = sigmoid(ab[j]);
        double fg = sigmoid(ab[H + j]);
        double gg = std::tanh(ab[2 * H + j]);
        double og = sigmoid(ab[3 * H + j]);
        gb[j] = ig;
        gb[H + j] = fg;
        gb[2 * H + j] = gg;
        gb[3 * H + j] = og;
        double cn = fg * c[bi * H + j] + ig * gg;
        c[bi * H + j] = cn;
        h[bi * H + j] = og * std::tanh(cn);
      }
    }
    std::copy(c.begin(), c.end(), c_.begin() + static_cast<long>(t * B * H));
    for (std::size_t bi = 0; bi < B; ++bi) {
      std::copy(h.begin() + static_cast<long>(bi * H), h.begin() + static_cast<long>((bi + 1) * H),
                out.data() + (bi * T + t) * H);
    }
  }
  return out;
}

Tensor LstmLayer::backward(const Tensor& grad_out) {
  const std::size_t B = batch_;
  const std::size_t T = steps_;
  const std::size_t H = units_;
  const std::size_t G = 4 * H;
  if (grad_out.rank() != 3 || grad_out.dim(0) != B || grad_out.dim(1) != T ||
      grad_out.dim(2) != H) {
    throw DomainError(name() + ": gradient shape " + shape_string(grad_out.shape()));
  }
  std::vector<double> dproj(B * T * G, 0.0);
  std::vector<double> dh_next(B * H, 0.0), dc_next(B * H, 0.0), da(B * G), dhp(B * H);
  for (std::size_t t = T; t-- > 0;) {
    const double* act = gates_.data() + t * B * G;
    const double* cp = c_prev_.data() + t * B * H;
    const double* cn = c_.data() + t * B * H;
    const double* hp = h_prev_.data() + t * B * H;
    for (std::size_t bi = 0; bi < B; ++bi) {
      const double* g = grad_out.data() + (bi * T + t) * H;
      const double* gb = act + bi * G;
      double* dab = da.data() + bi * G;
      for (std::size_t j = 0; j < H; ++j) {
        const std::size_t k = bi * H + j;
        double dh = g[j] + dh_next[k];
        double ig = gb[j], fg = gb[H + j], gg = gb[2 * H + j], og = gb[3 * H + j];
        double tc = std::tanh(cn[k]);
        double dc = dc_next[k] + dh * og * (1.0 - tc * tc);
        dab[j] = dc * gg * ig * (1.0 - ig);
        dab[H + j] = dc * cp[k] * fg * (1.0 - fg);
        dab[2 * H + j] = dc * ig * (1.0 - gg * gg);
        dab[3 * H + j] = dh * tc * og * (1.0 - og);
        dc_next[k] = dc * fg;
      }
    }
    gemm_tn(B, G, H, hp, da.data(), recurrent.grad.data(), true);
    gemm_nt(B, G, H, da.data(), recurrent.value.data(), dhp.data(), false);
    for (std::size_t bi = 0; bi < B; ++bi) {
      std::copy(da.begin() + static_cast<long>(bi * G), da.begin() + static_cast<long>((bi + 1) * G),
                dproj.begin() + static_cast<long>((bi * T + t) * G));
    }
    dh_next.swap(dhp);
  }
  const std::size_t rows = B * T;
  gemm_tn(rows, G, in_, input_.data(), dproj.data(), kernel.grad.data(), true);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < G; ++j) bias.grad[j] += dproj[r * G + j];
  }
  Tensor dx(input_.shape());
  gemm_nt(rows, G, in_, dproj.data(), kernel.value.data(), dx.data(), false);
  return dx;
}

Tensor reverse_time(const Tensor& x) {
  if (x.rank() != 3) throw DomainError("reverse_time: expected a rank-3 sequence");
  const std::size_t B = x.dim(0), T = x.dim(1), F = x.dim(2);
  Tensor y(x.shape());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const double* src = x.data() + (b * T + t) * F;
      std::copy(src, src + F, y.data() + (b * T + (T - 1 - t)) * F);
    }
  }
  return y;
}

Bidirectional::Bidirectional(std::string name, std::unique_ptr<Layer> forward_layer,
                             std::unique_ptr<Layer> backward_layer)
    : Layer(std::move(name)),
      forward_(std::move(forward_layer)),
      backward_(std::move(backward_layer)) {}

Tensor Bidirectional::forward(const Tensor& x, Mode mode) {
  Tensor yf = forward_->forward(x, mode);
  Tensor yb = reverse_time(backward_->forward(reverse_time(x), mode));
  forward_width_ = yf.cols();
  backward_width_ = yb.cols();
  const Tensor* parts[2] = {&yf, &yb};
  return concatenate_features(parts);
}

Tensor Bidirectional::backward(const Tensor& grad_out) {
  const std::size_t widths[2] = {forward_width_, backward_width_};
  auto parts = split_features(grad_out, widths);
  Tensor dx = forward_->backward(parts[0]);
  Tensor dxb = reverse_time(backward_->backward(reverse_time(parts[1])));
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dxb[i];
  return dx;
}

std::vector<Parameter*> Bidirectional::parameters() {
  auto out = forward_->parameters();
  for (auto* p : backward_->parameters()) out.push_back(p);
  return out;
}

}  // namespace affseq
