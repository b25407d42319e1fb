#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "ctpvt/adamw.hpp"
#include "ctpvt/checkpoint.hpp"
#include "ctpvt/ops.hpp"
#include "support/criteria.hpp"
#include "support/oracles.hpp"

using namespace ctpvt;

namespace {

Tensor tensor(Shape shape, std::vector<float> values) { return Tensor(std::move(shape), std::move(values)); }

void expect_values(const Tensor& t, const std::vector<float>& expected, float tol = 0.0f) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t[i], expected[i], tol) << "at " << i;
}

}  // namespace

TEST(Tensor, DataLengthMatchesShape) {
  const Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(Tensor({2, 0}), shape_error);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), shape_error);
}

TEST(Tensor, CloneIsIndependent) {
  Tensor a = tensor({2}, {1, 2});
  Tensor b = a.clone();
  b.mutable_data()[0] = 5;
  EXPECT_EQ(a[0], 1);
  EXPECT_FALSE(a.same_storage(b));
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = tensor({2, 2}, {1, 0, 0, 1});
  expect_values(matmul(eye, tensor({2, 2}, {1, 2, 3, 4})), {1, 2, 3, 4});
}

TEST(Matmul, RowTimesColumn) { expect_values(matmul(tensor({1, 2}, {1, 2}), tensor({2, 1}, {3, 4})), {11}); }

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(5);
  const Tensor a = Tensor::randn({4, 5}, rng), b = Tensor::randn({5, 3}, rng);
  const auto ref = oracle::matmul(oracle::to_double(a), oracle::to_double(b), 4, 5, 3);
  EXPECT_LT(criteria::max_abs_diff(ref, matmul(a, b).data()), 1e-5);
  EXPECT_LT(criteria::matmul_oracle_error(11), 1e-5);
}

TEST(Matmul, RejectsInnerMismatch) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), shape_error);
  EXPECT_THROW(matmul(Tensor({2}), Tensor({2, 3})), shape_error);
}

TEST(Matmul, LargeInnerDimensionWithinFloatPrecision) {
  Rng rng(6);
  const Tensor a = Tensor::randn({8, 256}, rng), b = Tensor::randn({256, 8}, rng);
  const auto ref = oracle::matmul(oracle::to_double(a), oracle::to_double(b), 8, 256, 8);
  EXPECT_LT(criteria::max_scaled_diff(ref, matmul(a, b).data()), 1e-5);
}

TEST(Bmm, TransposedRhsMatchesExplicitTranspose) {
  Rng rng(8);
  const Tensor a = Tensor::randn({3, 4, 5}, rng), b = Tensor::randn({3, 6, 5}, rng);
  const Tensor bt = permute(b, {0, 2, 1});
  const Tensor x = bmm(a, b, true), y = bmm(a, bt);
  ASSERT_EQ(x.shape(), (Shape{3, 4, 6}));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(x[i], y[i], 1e-5);
}

TEST(Conv2d, OnesKernelSumsWindow) {
  const Tensor y = conv2d(Tensor::ones({1, 1, 3, 3}), Tensor::ones({1, 1, 3, 3}), Tensor{}, {});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 9.0f);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Rng rng(1);
  const Tensor x = Tensor::randn({2, 1, 4, 5}, rng);
  const Tensor y = conv2d(x, Tensor::ones({1, 1, 1, 1}), Tensor{}, {});
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, StridedPaddedMatchesNaiveOracle) {
  Rng rng(3);
  const oracle::ConvShape s{2, 4, 9, 9, 8, 3, 3, 2, 1, 1};
  const Tensor x = Tensor::randn({2, 4, 9, 9}, rng), w = Tensor::randn({8, 4, 3, 3}, rng);
  const Tensor b = Tensor::randn({8}, rng);
  const Tensor y = conv2d(x, w, b, {2, 1, 1});
  ASSERT_EQ(y.shape(), (Shape{2, 8, 5, 5}));
  const auto ref = oracle::conv2d(oracle::to_double(x), oracle::to_double(w), oracle::to_double(b), s);
  EXPECT_LT(criteria::max_abs_diff(ref, y.data()), 1e-5);
}

TEST(Conv2d, SmallShapeSweepMatchesOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) EXPECT_LT(criteria::conv_oracle_error(seed), 1e-5);
}

TEST(Conv2d, PatchEmbeddingShapeWithinFloatPrecision) {
  Rng rng(4);
  const oracle::ConvShape s{1, 3, 32, 32, 8, 7, 7, 4, 3, 1};
  const Tensor x = Tensor::randn({1, 3, 32, 32}, rng), w = Tensor::randn({8, 3, 7, 7}, rng);
  const Tensor b = Tensor::randn({8}, rng);
  const auto ref = oracle::conv2d(oracle::to_double(x), oracle::to_double(w), oracle::to_double(b), s);
  const Tensor y = conv2d(x, w, b, {4, 3, 1});
  ASSERT_EQ(y.shape(), (Shape{1, 8, 8, 8}));
  EXPECT_LT(criteria::max_scaled_diff(ref, y.data()), 1e-5);
}

TEST(Conv2d, RejectsBadGeometry) {
  EXPECT_THROW(conv2d(Tensor({1, 3, 4, 4}), Tensor({4, 1, 3, 3}), Tensor{}, {1, 1, 2}), shape_error);
  EXPECT_THROW(conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 5, 5}), Tensor{}, {1, 0, 1}), shape_error);
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 1, 3, 3}), Tensor{}, {1, 1, 1}), shape_error);
}

TEST(LayerNorm, ConstantInputMapsToBeta) {
  const Tensor y = layer_norm(tensor({1, 3}, {1, 1, 1}), Tensor::ones({3}), Tensor::zeros({3}), 1e-5);
  expect_values(y, {0, 0, 0});
}

TEST(LayerNorm, StandardizedInputUnchanged) {
  const Tensor y = layer_norm(tensor({1, 2}, {-1, 1}), Tensor::ones({2}), Tensor::zeros({2}), 1e-12);
  expect_values(y, {-1, 1}, 1e-6f);
}

TEST(LayerNorm, RandomRowsStandardized) {
  Rng rng(2);
  const std::size_t rows = 16, d = 32;
  const Tensor x = Tensor::randn({rows, d}, rng, 3.0);
  const Tensor y = layer_norm(x, Tensor::ones({d}), Tensor::zeros({d}), 1e-5);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += y[r * d + j];
    mean /= d;
    for (std::size_t j = 0; j < d; ++j) var += (y[r * d + j] - mean) * (y[r * d + j] - mean);
    var /= d;
    EXPECT_LT(std::abs(mean), 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(LayerNorm, RejectsWidthMismatch) {
  EXPECT_THROW(layer_norm(Tensor({2, 3}), Tensor::ones({4}), Tensor::zeros({4}), 1e-5), shape_error);
}

TEST(Softmax, SymmetricInputs) {
  expect_values(softmax(tensor({2}, {0, 0}), 0), {0.5f, 0.5f});
  expect_values(softmax(tensor({2}, {1000, 1000}), 0), {0.5f, 0.5f});
}

TEST(Softmax, LogThree) {
  expect_values(softmax(tensor({2}, {0, static_cast<float>(std::log(3.0))}), 0), {0.25f, 0.75f}, 1e-7f);
}

TEST(Softmax, ExtremeMagnitudesStayNormalized) {
  Rng rng(7);
  Tensor x = Tensor::randn({20, 9}, rng, 1e4);
  for (std::size_t axis = 0; axis < 2; ++axis) {
    const Tensor y = softmax(x, axis);
    const std::size_t rows = axis == 1 ? 20 : 9, cols = axis == 1 ? 9 : 20;
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const float v = axis == 1 ? y[r * 9 + c] : y[c * 9 + r];
        EXPECT_GE(v, 0.0f);
        EXPECT_TRUE(std::isfinite(v));
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
  EXPECT_THROW(softmax(x, 2), shape_error);
}

TEST(Gelu, FixedPointsAndAsymptote) {
  const Tensor y = gelu(tensor({2}, {0, 10}));
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_NEAR(y[1], 10.0f, 1e-3);
}

TEST(Gelu, MatchesQuadratureOfGaussianCdf) {
  // x·Φ(x) at x = 1, Φ by composite Simpson integration of the normal density
  const double lo = -12.0, hi = 1.0;
  const int steps = 20000;
  const double h = (hi - lo) / steps;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi); };
  double acc = pdf(lo) + pdf(hi);
  for (int i = 1; i < steps; ++i) acc += (i % 2 ? 4.0 : 2.0) * pdf(lo + i * h);
  const double cdf = acc * h / 3.0;
  EXPECT_NEAR(gelu(tensor({1}, {1}))[0], 1.0 * cdf, 1e-3);
}

TEST(MseLoss, Examples) {
  EXPECT_EQ(mse_loss(tensor({2}, {0.3f, -2}), tensor({2}, {0.3f, -2})).item(), 0.0f);
  EXPECT_EQ(mse_loss(tensor({2}, {1, -1}), tensor({2}, {-1, 1})).item(), 4.0f);
  EXPECT_THROW(mse_loss(Tensor({2}), Tensor({3})), shape_error);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor({2, 3}, 0.7f).set_requires_grad();
  Tape tape;
  Tensor loss;
  {
    TapeScope<float> scope(tape);
    loss = sum(x);
  }
  backward(loss, tape);
  ASSERT_TRUE(x.has_grad());
  for (float g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, ScalarLinearRegressionClosedForm) {
  const float w0 = 0.8f, x0 = 1.5f, y0 = -0.25f;
  Tensor w = tensor({1, 1}, {w0}).set_requires_grad();
  const Tensor x = tensor({1, 1}, {x0});
  Tape tape;
  Tensor loss;
  {
    TapeScope<float> scope(tape);
    loss = mse_loss(reshape(matmul(w, x), {1}), tensor({1}, {y0}));
  }
  backward(loss, tape);
  EXPECT_NEAR(w.grad()[0], 2.0f * x0 * (w0 * x0 - y0), 1e-6);
}

TEST(Backward, AccumulatesUntilZeroed) {
  Tensor x = Tensor({3}, 2.0f).set_requires_grad();
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    Tensor loss;
    {
      TapeScope<float> scope(tape);
      loss = sum(scale(x, 3.0f));
    }
    backward(loss, tape);
  }
  for (float g : x.grad()) EXPECT_EQ(g, 6.0f);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, EveryRecordedNodeVisitedOnce) {
  Tensor x = Tensor({2, 2}, 1.0f).set_requires_grad();
  Tape tape;
  Tensor loss;
  {
    TapeScope<float> scope(tape);
    Tensor h = add(x, x);  // x feeds the same node twice
    loss = sum(gelu(h));
  }
  EXPECT_EQ(tape.size(), 3u);
  backward(loss, tape);
  const float expected = 2.0f * detail::GeluTanh<float>::derivative(2.0f);
  for (float g : x.grad()) EXPECT_NEAR(g, expected, 1e-6);
}

TEST(Backward, RejectsNonScalarAndForeignLoss) {
  Tensor x = Tensor({2}, 1.0f).set_requires_grad();
  Tape tape;
  Tensor y;
  {
    TapeScope<float> scope(tape);
    y = scale(x, 2.0f);
  }
  EXPECT_THROW(backward(y, tape), shape_error);
  Tape other;
  Tensor s;
  {
    TapeScope<float> scope(tape);
    s = sum(x);
  }
  EXPECT_THROW(backward(s, other), std::invalid_argument);
}

TEST(Backward, NothingRecordedWithoutTapeOrGradInputs) {
  Tensor x = Tensor({2}, 1.0f).set_requires_grad();
  EXPECT_FALSE(scale(x, 2.0f).requires_grad());
  Tape tape;
  {
    TapeScope<float> scope(tape);
    scale(Tensor({2}, 1.0f), 2.0f);
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(AdamW, ZeroGradientZeroDecayIsFixedPoint) {
  std::vector<Tensor> params{tensor({3}, {1.5f, -2.0f, 0.25f}).set_requires_grad()};
  params[0].zero_grad();
  AdamWOptions opt;
  opt.weight_decay = 0.0;
  auto state = AdamWState<float>::for_parameters(params, opt);
  adamw_step(params, state);
  expect_values(params[0], {1.5f, -2.0f, 0.25f});
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  Tensor p = tensor({2}, {1.0f, -1.0f}).set_requires_grad();
  std::vector<Tensor> params{p};
  Tape tape;
  Tensor loss;
  {
    TapeScope<float> scope(tape);
    loss = sum(scale(p, 0.37f));  // constant gradient 0.37
  }
  backward(loss, tape);
  AdamWOptions opt;
  opt.learning_rate = 1e-2;
  opt.weight_decay = 0.0;
  auto state = AdamWState<float>::for_parameters(params, opt);
  adamw_step(params, state);
  EXPECT_NEAR(p[0], 1.0f - 1e-2f, 1e-6);
  EXPECT_NEAR(p[1], -1.0f - 1e-2f, 1e-6);
}

TEST(AdamW, ConvergesOnShiftedQuadratic) {
  Tensor w = tensor({1}, {0.0f}).set_requires_grad();
  std::vector<Tensor> params{w};
  AdamWOptions opt;
  opt.learning_rate = 0.1;
  opt.weight_decay = 0.0;
  auto state = AdamWState<float>::for_parameters(params, opt);
  for (int i = 0; i < 200; ++i) {
    Tape tape;
    Tensor loss;
    {
      TapeScope<float> scope(tape);
      loss = mse_loss(w, tensor({1}, {3.0f}));
    }
    backward(loss, tape);
    adamw_step(params, state);
    w.zero_grad();
  }
  EXPECT_NEAR(w[0], 3.0f, 1e-2);
  EXPECT_EQ(state.step, 200u);
}

TEST(AdamW, ZeroLearningRateIsIdentity) {
  Rng rng(12);
  Tensor p = Tensor::randn({4, 4}, rng).set_requires_grad();
  const Tensor before = p.clone();
  std::vector<Tensor> params{p};
  Tape tape;
  Tensor loss;
  {
    TapeScope<float> scope(tape);
    loss = sum(gelu(p));
  }
  backward(loss, tape);
  AdamWOptions opt;
  opt.learning_rate = 0.0;
  auto state = AdamWState<float>::for_parameters(params, opt);
  for (int i = 0; i < 3; ++i) adamw_step(params, state);
  for (std::size_t i = 0; i < p.numel(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint32_t>(p[i]), std::bit_cast<std::uint32_t>(before[i]));
}

TEST(AdamW, RejectsMismatchedState) {
  std::vector<Tensor> params{Tensor({2}).set_requires_grad()};
  auto state = AdamWState<float>::for_parameters(params, {});
  std::vector<Tensor> other{Tensor({3}).set_requires_grad()};
  EXPECT_THROW(adamw_step(other, state), shape_error);
  other.push_back(Tensor({2}));
  EXPECT_THROW(adamw_step(other, state), shape_error);
  AdamWOptions bad;
  bad.beta1 = 1.0;
  EXPECT_THROW(AdamWState<float>::for_parameters(params, bad), config_error);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const float special[] = {0.0f, -0.0f, 1e-40f, std::numeric_limits<float>::max(), -3.25f, 1.0f / 3.0f};
  std::vector<NamedTensor> entries{{"a.weight", Tensor({2, 3}, std::vector<float>(std::begin(special), std::end(special)))},
                                   {"b", Tensor({1}, 7.5f)}};
  std::stringstream ss;
  write_checkpoint(ss, entries);
  const auto back = read_checkpoint(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "a.weight");
  EXPECT_EQ(back[0].tensor.shape(), (Shape{2, 3}));
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_EQ(std::bit_cast<std::uint32_t>(back[0].tensor[i]), std::bit_cast<std::uint32_t>(special[i]));
  EXPECT_EQ(back[1].tensor[0], 7.5f);
}

TEST(Checkpoint, ByteLayout) {
  std::stringstream ss;
  write_checkpoint(ss, {{"w", Tensor({1}, 1.0f)}});
  const std::string bytes = ss.str();
  // magic, count, name length, name, rank, extent, payload
  ASSERT_EQ(bytes.size(), 8u + 4 + 4 + 1 + 4 + 4 + 4);
  EXPECT_EQ(bytes.substr(0, 8), "PVTC19D1");
  EXPECT_EQ(bytes.substr(8, 4), std::string("\x01\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(bytes.size() - 4), std::string("\x00\x00\x80\x3f", 4));
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  std::stringstream bad("PVTC19D0\x01\x00\x00\x00");
  EXPECT_THROW(read_checkpoint(bad), format_error);
  std::stringstream full;
  write_checkpoint(full, {{"w", Tensor({4}, 1.0f)}});
  const std::string bytes = full.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(cut), format_error);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), io_error);
}

TEST(Kernels, FlopCounterCountsMultiplyAdds) {
  kernels::FlopCounter counter;
  matmul(Tensor({3, 4}), Tensor({4, 5}));
  EXPECT_EQ(counter.flops(), 2u * 3 * 4 * 5);
}
