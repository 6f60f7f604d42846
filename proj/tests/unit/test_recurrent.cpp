// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "affseq/error.hpp"
#include "affseq/recurrent.hpp"
#include "gradcheck.hpp"

using namespace affseq;
using affseq::testkit::check_layer;
using affseq::testkit::random_tensor;

namespace {

void zero_all(Layer& layer) {
  for (auto* p : layer.parameters()) p->value.fill(0.0);
}

void expect_all_below(const testkit::GradCheckReport& r, double tol) {
  EXPECT_LT(r.input_error, tol) << "input";
  for (const auto& [name, e] : r.parameter_errors) EXPECT_LT(e, tol) << name;
}

void randomize(Layer& layer, Rng& rng, double scale) {
  for (auto* p : layer.parameters()) {
    for (auto& v : p->value.values()) v = rng.uniform(-scale, scale);
  }
}

}  // namespace

TEST(GruCell, ZeroParametersHalveState) {
  Rng rng(1);
  GruLayer gru("g", 3, 4, rng);
  zero_all(gru);
  Tensor x({1, 3}, {0.7, -1.1, 2.0});
  Tensor h({1, 4}, {1.0, -2.0, 0.5, 8.0});
  Tensor h0 = h;
  for (int t = 1; t <= 6; ++t) {
    h = gru_cell(x, h, gru.weights());
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(h[j], std::pow(0.5, t) * h0[j]);
  }
  auto zero = gru_cell(x, Tensor({1, 4}), gru.weights());
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(gru_cell(Tensor({1, 2}), Tensor({1, 4}), gru.weights()), DomainError);
}

TEST(GruCell, MatchesHandFormula) {
  Rng rng(2);
  GruLayer gru("g", 2, 3, rng);
  randomize(gru, rng, 0.8);
  auto x = random_tensor({1, 2}, rng), h = random_tensor({1, 3}, rng);
  auto out = gru_cell(x, h, gru.weights());
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  auto lin = [&](const Tensor& w, const Tensor& in, std::size_t n_in, std::size_t j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n_in; ++i) s += in[i] * w.at(i, j);
    return s;
  };
  std::vector<double> rh(3);
  for (std::size_t j = 0; j < 3; ++j) {
    double r = sig(lin(gru.w[1].value, x, 2, j) + lin(gru.u[1].value, h, 3, j) + gru.b[1].value[j]);
    rh[j] = r * h[j];
  }
  Tensor rh_t({1, 3}, rh);
  for (std::size_t j = 0; j < 3; ++j) {
    double z = sig(lin(gru.w[0].value, x, 2, j) + lin(gru.u[0].value, h, 3, j) + gru.b[0].value[j]);
    double c = std::tanh(lin(gru.w[2].value, x, 2, j) + lin(gru.u[2].value, rh_t, 3, j) +
                         gru.b[2].value[j]);
    EXPECT_NEAR(out[j], z * h[j] + (1 - z) * c, 1e-14);
  }
}

TEST(GruLayer, SingleStepEqualsCell) {
  Rng rng(3);
  GruLayer gru("g", 4, 5, rng);
  auto x = random_tensor({2, 1, 4}, rng);
  auto y = gru.forward(x, Mode::infer);
  auto c = gru_cell(x.reshaped({2, 4}), Tensor({2, 5}), gru.weights());
  ASSERT_EQ(y.shape(), (Tensor::Shape{2, 1, 5}));
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_DOUBLE_EQ(y[i], c[i]);
}

TEST(GruLayer, ZeroParametersGiveZeroSequence) {
  Rng rng(4);
  GruLayer gru("g", 3, 4, rng);
  zero_all(gru);
  auto y = gru.forward(random_tensor({2, 7, 3}, rng), Mode::infer);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(GruLayer, ParameterCount) {
  Rng rng(5);
  EXPECT_EQ(GruLayer::count_for(168, 128), 114048u);
  GruLayer gru("g", 168, 128, rng);
  EXPECT_EQ(gru.parameter_count(), 114048u);
  auto names = gru.parameters();
  ASSERT_EQ(names.size(), 9u);
}

TEST(GruLayer, ThreeStepSumOfSquaresGradient) {
  Rng rng(6);
  GruLayer gru("g", 3, 4, rng);
  randomize(gru, rng, 0.6);
  auto x = random_tensor({1, 3, 3}, rng);
  auto loss = [&]() {
    auto h = gru.forward(x, Mode::train);
    double s = 0.0;
    for (double v : h.values()) s += v * v;
    return s;
  };
  auto params = gru.parameters();
  zero_grad(params);
  auto h = gru.forward(x, Mode::train);
  Tensor g(h.shape());
  for (std::size_t i = 0; i < h.size(); ++i) g[i] = 2.0 * h[i];
  auto dx = gru.backward(g);
  EXPECT_LT(testkit::relative_error(dx.values(), testkit::numeric_gradient(x.values(), loss)), 1e-5);
  for (auto* p : params) {
    std::vector<double> analytic(p->grad.values().begin(), p->grad.values().end());
    EXPECT_LT(testkit::relative_error(analytic, testkit::numeric_gradient(p->value.values(), loss)),
              1e-5)
        << p->name;
  }
}

TEST(GruLayer, GradientCheckShapes) {
  Rng rng(7);
  for (auto [b, t, in, h] : {std::tuple{1u, 3u, 2u, 3u}, std::tuple{2u, 5u, 4u, 3u},
                             std::tuple{3u, 15u, 3u, 5u}}) {
    GruLayer gru("g", in, h, rng);
    randomize(gru, rng, 0.5);
    expect_all_below(check_layer(gru, random_tensor({b, t, in}, rng), Mode::train, rng), 1e-5);
  }
}

TEST(LstmLayer, ZeroParametersNoForgetBiasStayZero) {
  Rng rng(8);
  LstmLayer lstm("l", 3, 4, rng, 0.0);
  zero_all(lstm);
  auto y = lstm.forward(random_tensor({2, 6, 3}, rng), Mode::infer);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LstmLayer, ForgetBiasInitAndCount) {
  Rng rng(9);
  LstmLayer lstm("l", 5, 4, rng);
  for (std::size_t j = 0; j < 16; ++j) {
    EXPECT_EQ(lstm.bias.value[j], (j >= 4 && j < 8) ? 1.0 : 0.0);
  }
  EXPECT_EQ(lstm.parameter_count(), LstmLayer::count_for(5, 4));
  EXPECT_EQ(LstmLayer::count_for(5, 4), 4u * (20u + 16u + 4u));
}

TEST(LstmLayer, GradientCheckShapes) {
  Rng rng(10);
  for (auto [b, t, in, h] : {std::tuple{1u, 3u, 2u, 3u}, std::tuple{2u, 5u, 4u, 3u},
                             std::tuple{3u, 15u, 3u, 4u}}) {
    LstmLayer lstm("l", in, h, rng);
    randomize(lstm, rng, 0.5);
    expect_all_below(check_layer(lstm, random_tensor({b, t, in}, rng), Mode::train, rng), 1e-5);
  }
}

TEST(Bidirectional, PalindromeSymmetry) {
  Rng rng(11);
  auto fwd = std::make_unique<LstmLayer>("f", 3, 4, rng);
  auto bwd = std::make_unique<LstmLayer>("b", 3, 4, rng);
  bwd->kernel.value = fwd->kernel.value;
  bwd->recurrent.value = fwd->recurrent.value;
  bwd->bias.value = fwd->bias.value;
  Bidirectional bi("bi", std::move(fwd), std::move(bwd));
  const std::size_t T = 7;
  Tensor x({1, T, 3});
  for (std::size_t t = 0; t <= T / 2; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      double v = rng.uniform(-1, 1);
      x.at(t, c) = v;
      x.at(T - 1 - t, c) = v;
    }
  }
  auto y = bi.forward(x, Mode::infer);
  ASSERT_EQ(y.shape(), (Tensor::Shape{1, T, 8}));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(y.at(t, c), y.at(T - 1 - t, 4 + c), 1e-15);
    }
  }
}

TEST(Bidirectional, GradientCheckShapes) {
  Rng rng(12);
  for (auto [b, t, in, h] : {std::tuple{1u, 3u, 2u, 2u}, std::tuple{2u, 5u, 3u, 3u},
                             std::tuple{2u, 15u, 4u, 2u}}) {
    Bidirectional bi("bi", std::make_unique<LstmLayer>("f", in, h, rng),
                     std::make_unique<LstmLayer>("b", in, h, rng));
    randomize(bi, rng, 0.5);
    expect_all_below(check_layer(bi, random_tensor({b, t, in}, rng), Mode::train, rng), 1e-5);
  }
}

TEST(ReverseTime, Involution) {
  Rng rng(13);
  auto x = random_tensor({2, 5, 3}, rng);
  auto r = reverse_time(x);
  EXPECT_EQ(r.at(0 * 5 + 0, 1), x.at(0 * 5 + 4, 1));
  EXPECT_EQ(reverse_time(r).storage(), x.storage());
}
