// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dmacos/autodiff.hpp"
#include "dmacos/errors.hpp"

namespace ad = dmacos::ad;
using ad::Tensor;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

Tensor random_param(ad::Shape shape, std::mt19937_64& rng) {
  const std::size_t n = ad::shape_size(shape);
  return Tensor::parameter(std::move(shape), random_values(n, rng));
}

// Weighted sum against fixed random coefficients so every output entry matters.
Tensor probe(const Tensor& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const Tensor w = Tensor::constant(out.shape(), random_values(out.size(), rng));
  return ad::sum(ad::mul(out, w));
}

double check(const std::function<Tensor()>& f, std::vector<ad::NamedTensor> params) {
  ad::GradCheckOptions opts;
  opts.entries_per_tensor = 64;
  return ad::grad_check(f, params, opts).max_rel_error();
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::constant({2, 2}, {1, 2, 3, 4});
  const Tensor r = ad::matmul(eye, m);
  EXPECT_EQ(r.shape(), (ad::Shape{2, 2}));
  EXPECT_EQ(std::vector<double>(r.values().begin(), r.values().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, ZeroOperandGivesZeros) {
  const Tensor r = ad::matmul(Tensor::constant({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2, 3}));
  EXPECT_EQ(r.shape(), (ad::Shape{2, 3}));
  for (double v : r.values()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const dmacos::DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const Tensor a = random_param({3, 4}, rng);
  const Tensor b = random_param({4, 2}, rng);
  EXPECT_LT(check([&] { return ad::sum(ad::matmul(a, b)); }, {{"a", a}, {"b", b}}), 1e-6);
}

TEST(Matmul, MatchesNaiveProduct) {
  std::mt19937_64 rng(2);
  const Tensor a = random_param({3, 5}, rng);
  const Tensor b = random_param({5, 4}, rng);
  const Tensor r = ad::matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += a.at(i * 5 + k) * b.at(k * 4 + j);
      EXPECT_NEAR(r.at(i * 4 + j), s, 1e-12);
    }
  }
}

TEST(Matvec, BothOrientationsMatchMatmul) {
  std::mt19937_64 rng(3);
  const Tensor m = random_param({3, 4}, rng);
  const Tensor v4 = random_param({4}, rng);
  const Tensor v3 = random_param({3}, rng);
  const Tensor mv = ad::matvec(m, v4);
  const Tensor mtv = ad::matvec_t(m, v3);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < 4; ++k) s += m.at(i * 4 + k) * v4.at(k);
    EXPECT_NEAR(mv.at(i), s, 1e-12);
  }
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0;
    for (std::size_t k = 0; k < 3; ++k) s += m.at(k * 4 + j) * v3.at(k);
    EXPECT_NEAR(mtv.at(j), s, 1e-12);
  }
  EXPECT_LT(check([&] { return probe(ad::matvec(m, v4)); }, {{"m", m}, {"v", v4}}), 1e-5);
  EXPECT_LT(check([&] { return probe(ad::matvec_t(m, v3)); }, {{"m", m}, {"v", v3}}), 1e-5);
}

TEST(Elementwise, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(ad::sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_DOUBLE_EQ(ad::tanh(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(ad::sigmoid(Tensor::scalar(2.0)).item(), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(ad::sigmoid(Tensor::scalar(2.0)).item(), 0.880797, 1e-6);
  EXPECT_NEAR(ad::sigmoid(Tensor::scalar(-800.0)).item(), 0.0, 1e-300);
  EXPECT_TRUE(std::isfinite(ad::sigmoid(Tensor::scalar(-800.0)).item()));
}

TEST(Elementwise, SigmoidGradientAtTwo) {
  const Tensor x = Tensor::parameter({1}, {2.0});
  {
    ad::Tape tape;
    tape.backward(ad::sigmoid(x));
  }
  const double s = 1.0 / (1.0 + std::exp(-2.0));
  EXPECT_NEAR(x.grad()[0], s * (1 - s), 1e-12);
  const double fd = (1.0 / (1.0 + std::exp(-(2.0 + 1e-5))) - 1.0 / (1.0 + std::exp(-(2.0 - 1e-5)))) / 2e-5;
  EXPECT_NEAR(x.grad()[0], fd, 1e-6);
}

TEST(Elementwise, EveryOpPassesGradCheck) {
  std::mt19937_64 rng(4);
  const Tensor a = random_param({5}, rng);
  const Tensor b = random_param({5}, rng);
  const Tensor m = random_param({3, 5}, rng);
  const Tensor bias = random_param({5}, rng);
  const Tensor s = random_param({1}, rng);
  const Tensor pos = Tensor::parameter({4}, {0.3, 0.9, 1.7, 0.05});
  const double tol = 1e-5;
  EXPECT_LT(check([&] { return probe(ad::add(a, b)); }, {{"a", a}, {"b", b}}), tol);
  EXPECT_LT(check([&] { return probe(ad::sub(a, b)); }, {{"a", a}, {"b", b}}), tol);
  EXPECT_LT(check([&] { return probe(ad::mul(a, b)); }, {{"a", a}, {"b", b}}), tol);
  EXPECT_LT(check([&] { return probe(ad::sigmoid(a)); }, {{"a", a}}), tol);
  EXPECT_LT(check([&] { return probe(ad::tanh(a)); }, {{"a", a}}), tol);
  EXPECT_LT(check([&] { return probe(ad::log(pos)); }, {{"p", pos}}), tol);
  EXPECT_LT(check([&] { return probe(ad::scale(a, -1.7)); }, {{"a", a}}), tol);
  EXPECT_LT(check([&] { return probe(ad::scale_by(a, s)); }, {{"a", a}, {"s", s}}), tol);
  EXPECT_LT(check([&] { return probe(ad::one_minus(a)); }, {{"a", a}}), tol);
  EXPECT_LT(check([&] { return probe(ad::add_row_bias(m, bias)); }, {{"m", m}, {"bias", bias}}), tol);
  EXPECT_LT(check([&] { return probe(ad::softmax(a)); }, {{"a", a}}), tol);
  EXPECT_LT(check([&] { return probe(ad::softmax(m, 1)); }, {{"m", m}}), tol);
  EXPECT_LT(check([&] { return probe(ad::softmax(m, 0)); }, {{"m", m}}), tol);
  EXPECT_LT(check([&] { return probe(ad::concat({a, s, b})); }, {{"a", a}, {"s", s}, {"b", b}}), tol);
  EXPECT_LT(check([&] { return probe(ad::stack(std::vector<Tensor>{a, b, a})); }, {{"a", a}, {"b", b}}), tol);
  EXPECT_LT(check([&] { return probe(ad::row(m, 1)); }, {{"m", m}}), tol);
  EXPECT_LT(check([&] { return probe(ad::element(a, 3)); }, {{"a", a}}), tol);
  const std::vector<std::size_t> idx = {2, 0, 2, 6, 1};
  EXPECT_LT(check([&] { return probe(ad::scatter_add(a, idx, 7)); }, {{"a", a}}), tol);
  EXPECT_LT(check([&] { return ad::mean(ad::mul(a, a)); }, {{"a", a}}), tol);
}

TEST(Elementwise, ShapeMismatchThrows) {
  EXPECT_THROW(ad::add(Tensor::zeros({3}), Tensor::zeros({4})), dmacos::DimensionError);
  EXPECT_THROW(ad::mul(Tensor::zeros({3}), Tensor::zeros({3, 1})), dmacos::DimensionError);
}

TEST(Softmax, ClosedFormCases) {
  const Tensor half = ad::softmax(Tensor::vector({0.0, 0.0}));
  EXPECT_DOUBLE_EQ(half.at(0), 0.5);
  EXPECT_DOUBLE_EQ(half.at(1), 0.5);

  const Tensor big = ad::softmax(Tensor::vector({1000.0, 0.0}));
  EXPECT_TRUE(std::isfinite(big.at(0)) && std::isfinite(big.at(1)));
  EXPECT_NEAR(big.at(0), 1.0, 1e-12);
  EXPECT_NEAR(big.at(1), 0.0, 1e-12);

  const long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L);
  const long double z = e1 + e2 + e3;
  const Tensor r = ad::softmax(Tensor::vector({1.0, 2.0, 3.0}));
  EXPECT_NEAR(r.at(0), static_cast<double>(e1 / z), 1e-15);
  EXPECT_NEAR(r.at(1), static_cast<double>(e2 / z), 1e-15);
  EXPECT_NEAR(r.at(2), static_cast<double>(e3 / z), 1e-15);
}

TEST(Softmax, RandomVectorsAreDistributions) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> len(1, 40);
  for (int trial = 0; trial < 500; ++trial) {
    const Tensor r = ad::softmax(Tensor::vector(random_values(len(rng), rng, -50.0, 50.0)));
    double s = 0;
    for (double p : r.values()) {
      EXPECT_GE(p, 0.0);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Backward, SumGivesOnesAndZeroScaleGivesZeros) {
  Tensor p = Tensor::parameter({4}, {1, -2, 3, 0.5});
  {
    ad::Tape tape;
    tape.backward(ad::sum(p));
  }
  for (double g : p.grad()) EXPECT_EQ(g, 1.0);
  p.zero_grad();
  {
    ad::Tape tape;
    tape.backward(ad::sum(ad::scale(p, 0.0)));
  }
  for (double g : p.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, ReuseAccumulatesPathGradients) {
  std::mt19937_64 rng(6);
  const Tensor x = random_param({3}, rng);
  const Tensor w = Tensor::constant({3}, {0.5, -1.0, 2.0});
  {
    ad::Tape tape;
    tape.backward(ad::add(probe(ad::mul(x, w), 1), probe(ad::tanh(x), 2)));
  }
  const std::vector<double> shared(x.grad().begin(), x.grad().end());

  const Tensor x1 = Tensor::parameter({3}, std::vector<double>(x.values().begin(), x.values().end()));
  const Tensor x2 = Tensor::parameter({3}, std::vector<double>(x.values().begin(), x.values().end()));
  {
    ad::Tape tape;
    tape.backward(ad::add(probe(ad::mul(x1, w), 1), probe(ad::tanh(x2), 2)));
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(shared[i], x1.grad()[i] + x2.grad()[i], 1e-14);
}

TEST(Backward, GradientsAccumulateAcrossTapesUntilZeroed) {
  Tensor p = Tensor::parameter({2}, {1, 2});
  for (int i = 0; i < 2; ++i) {
    ad::Tape tape;
    tape.backward(ad::sum(p));
  }
  EXPECT_EQ(p.grad()[0], 2.0);
  p.zero_grad();
  EXPECT_FALSE(p.has_grad());
}

TEST(Backward, NonScalarLossIsContractError) {
  const Tensor p = Tensor::parameter({2}, {1, 2});
  ad::Tape tape;
  EXPECT_THROW(tape.backward(ad::mul(p, p)), dmacos::ContractError);
}

TEST(Backward, TapeIsSingleUse) {
  const Tensor p = Tensor::parameter({2}, {1, 2});
  ad::Tape tape;
  const Tensor loss = ad::sum(p);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), dmacos::ContractError);
}

TEST(Backward, NoGradProducesConstants) {
  const Tensor p = Tensor::parameter({2}, {1, 2});
  ad::Tape tape;
  Tensor y;
  {
    ad::NoGradGuard guard;
    y = ad::sum(ad::mul(p, p));
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, WithoutTapeOpsAreConstants) {
  const Tensor p = Tensor::parameter({2}, {1, 2});
  const Tensor y = ad::sum(p);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_DOUBLE_EQ(y.item(), 3.0);
}

TEST(Tensor, RejectsMismatchedValues) {
  EXPECT_THROW(Tensor::constant({2, 2}, {1, 2, 3}), dmacos::DimensionError);
  EXPECT_THROW(Tensor::constant({0}, {}), dmacos::DimensionError);
}

TEST(GradCheck, QuadraticIsExact) {
  const Tensor theta = Tensor::parameter({6}, std::vector<double>(6, 1.0));
  const auto report = ad::grad_check([&] { return ad::sum(ad::mul(theta, theta)); }, {{{"theta", theta}}});
  EXPECT_LT(report.max_rel_error(), 1e-8);
  EXPECT_EQ(report.tensors.at(0).checked, 6u);
}

TEST(GradCheck, LinearModelMse) {
  std::mt19937_64 rng(7);
  const Tensor w = random_param({3, 4}, rng);
  const Tensor bias = random_param({3}, rng);
  const Tensor x = Tensor::constant({4}, random_values(4, rng));
  const Tensor y = Tensor::constant({3}, random_values(3, rng));
  auto f = [&] {
    const Tensor err = ad::sub(ad::add(ad::matvec(w, x), bias), y);
    return ad::mean(ad::mul(err, err));
  };
  EXPECT_LT(check(f, {{"w", w}, {"b", bias}}), 1e-7);
}

TEST(GradCheck, GruStepNorm) {
  std::mt19937_64 rng(8);
  const std::size_t h = 4, d = 3;
  const Tensor wz = random_param({h, h + d}, rng), wr = random_param({h, h + d}, rng), wc = random_param({h, h + d}, rng);
  const Tensor x = Tensor::constant({d}, random_values(d, rng));
  const Tensor prev = Tensor::constant({h}, random_values(h, rng, -1, 1));
  auto f = [&] {
    const Tensor hx = ad::concat({prev, x});
    const Tensor z = ad::sigmoid(ad::matvec(wz, hx));
    const Tensor r = ad::sigmoid(ad::matvec(wr, hx));
    const Tensor c = ad::tanh(ad::matvec(wc, ad::concat({ad::mul(r, prev), x})));
    const Tensor out = ad::add(ad::mul(ad::one_minus(z), prev), ad::mul(z, c));
    return ad::sum(ad::mul(out, out));
  };
  EXPECT_LT(check(f, {{"wz", wz}, {"wr", wr}, {"wc", wc}}), 1e-5);
}

TEST(GradCheck, NonFiniteLossIsNumericError) {
  const Tensor p = Tensor::parameter({1}, {1.0});
  auto f = [&] { return ad::scale(ad::sum(p), std::numeric_limits<double>::infinity()); };
  EXPECT_THROW(ad::grad_check(f, {{{"p", p}}}), dmacos::NumericError);
}

TEST(GradCheck, SubsamplesLargeTensorsToRequestedCount) {
  std::mt19937_64 rng(9);
  const Tensor big = random_param({20, 20}, rng);
  ad::GradCheckOptions opts;
  opts.entries_per_tensor = 32;
  const auto report = ad::grad_check([&] { return probe(ad::tanh(big)); }, {{{"big", big}}}, opts);
  EXPECT_GE(report.tensors.at(0).checked, 32u);
  EXPECT_LT(report.max_rel_error(), 1e-5);
}
