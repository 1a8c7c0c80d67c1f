#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "kdda/tensor.hpp"

namespace kdda {
namespace {

TEST(Tensor, ConstructionValidatesShape) {
  EXPECT_THROW(DiffTensor({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(DiffTensor({0}, {}), ShapeError);
  EXPECT_THROW(DiffTensor({}, {1}), ShapeError);
  const DiffTensor m = DiffTensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.at(1, 2), 6.0);
  EXPECT_THROW(DiffTensor::vector({1, 2}).item(), ShapeError);
}

TEST(Tensor, NoBroadcasting) {
  const DiffTensor a = DiffTensor::matrix(2, 2, {1, 2, 3, 4});
  const DiffTensor b = DiffTensor::vector({1, 2});
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(mul(a, b), ShapeError);
  EXPECT_THROW(matmul(a, DiffTensor::matrix(3, 1, {1, 2, 3})), ShapeError);
  const DiffTensor tiled = expand_rows(b, 2);
  const DiffTensor s = add(a, tiled);
  EXPECT_EQ(s.at(1, 1), 6.0);
}

TEST(Tensor, MatmulAndReductions) {
  const DiffTensor a = DiffTensor::matrix(2, 2, {1, 2, 3, 4});
  const DiffTensor b = DiffTensor::matrix(2, 2, {5, 6, 7, 8});
  const DiffTensor c = matmul(a, b);
  EXPECT_EQ(c.at(0, 0), 19.0);
  EXPECT_EQ(c.at(1, 1), 50.0);
  EXPECT_EQ(reduce_sum(a).item(), 10.0);
  EXPECT_EQ(reduce_mean(a).item(), 2.5);
  EXPECT_EQ(squared_l2_norm(a).item(), 30.0);
}

TEST(Tensor, BackwardOfProductSum) {
  const DiffTensor x = DiffTensor::vector({1, 2, 3}, true);
  const DiffTensor y = DiffTensor::vector({4, 5, 6}, true);
  backward(reduce_sum(mul(x, y)));
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad()[0], 4.0);
  EXPECT_EQ(x.grad()[2], 6.0);
  EXPECT_EQ(y.grad()[1], 2.0);
}

TEST(Tensor, GradientsAccumulateUntilZeroed) {
  DiffTensor x = DiffTensor::vector({1, 2}, true);
  backward(reduce_sum(scale(x, 3.0)));
  backward(reduce_sum(scale(x, 3.0)));
  EXPECT_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  backward(reduce_sum(mul(x, x.detach())));
  EXPECT_EQ(x.grad()[1], 2.0);
}

TEST(Tensor, SecondBackwardThrows) {
  const DiffTensor x = DiffTensor::vector({1, 2}, true);
  const DiffTensor loss = reduce_sum(exp(x));
  backward(loss);
  EXPECT_THROW(backward(loss), GraphError);
}

TEST(Tensor, BackwardRequiresScalarWithHistory) {
  const DiffTensor x = DiffTensor::vector({1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), GraphError);
  EXPECT_THROW(backward(DiffTensor::scalar(1.0, true)), GraphError);
  EXPECT_THROW(backward(reduce_sum(DiffTensor::vector({1, 2}))), GraphError);
}

TEST(Tensor, DetachAndNoGradStopRecording) {
  const DiffTensor x = DiffTensor::vector({1, 2}, true);
  EXPECT_FALSE(x.detach().requires_grad());
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(reduce_sum(x).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(reduce_sum(x).requires_grad());
}

TEST(Tensor, NoGradIsThreadLocal) {
  NoGradGuard guard;
  bool other = false;
  std::thread t([&] { other = grad_enabled(); });
  t.join();
  EXPECT_TRUE(other);
  EXPECT_FALSE(grad_enabled());
}

TEST(Tensor, OnlyLeavesAreMutable) {
  DiffTensor x = DiffTensor::vector({1, 2}, true);
  x.mutable_data()[0] = 5.0;
  EXPECT_EQ(x.at(0), 5.0);
  DiffTensor y = scale(x, 2.0);
  EXPECT_THROW(y.mutable_data(), GraphError);
}

TEST(Tensor, GradReverse) {
  const DiffTensor x = DiffTensor::vector({1, 2}, true);
  const DiffTensor r = grad_reverse(x, 1.0);
  EXPECT_EQ(r.at(0), 1.0);
  EXPECT_EQ(r.at(1), 2.0);
  backward(reduce_sum(r));
  EXPECT_EQ(x.grad()[0], -1.0);
  EXPECT_EQ(x.grad()[1], -1.0);

  const DiffTensor z = DiffTensor::vector({3, -4}, true);
  backward(reduce_sum(grad_reverse(z, 0.5)));
  EXPECT_EQ(z.grad()[0], -0.5);
  EXPECT_THROW(grad_reverse(z, -1.0), std::invalid_argument);
}

TEST(Tensor, DoubleGradReverseIsIdentity) {
  const DiffTensor a = DiffTensor::vector({0.3, -1.2, 2.0}, true);
  const DiffTensor b = a.clone();
  backward(reduce_sum(mul(exp(grad_reverse(grad_reverse(a, 1.0), 1.0)), a.detach())));
  backward(reduce_sum(mul(exp(b), b.detach())));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.grad()[i], b.grad()[i], 1e-15);
}

TEST(Tensor, SoftmaxExamples) {
  for (auto conv : {SoftmaxConvention::kStandardDivide, SoftmaxConvention::kMultiply}) {
    const DiffTensor u = softmax_temperature(DiffTensor::vector({2.5, 2.5, 2.5}), 3.0, conv);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(u.at(i), 1.0 / 3.0, 1e-15);
    const DiffTensor p = softmax_temperature(DiffTensor::vector({1, 0}), 1.0, conv);
    EXPECT_NEAR(p.at(0), std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-15);
    EXPECT_NEAR(p.at(0), 0.7311, 1e-4);
  }
  const DiffTensor sharp =
      softmax_temperature(DiffTensor::vector({1, 0}), 2.0, SoftmaxConvention::kMultiply);
  EXPECT_NEAR(sharp.at(0), std::exp(2.0) / (std::exp(2.0) + 1.0), 1e-15);
  EXPECT_NEAR(sharp.at(1), 0.1192, 1e-4);
  const DiffTensor soft =
      softmax_temperature(DiffTensor::vector({1, 0}), 2.0, SoftmaxConvention::kStandardDivide);
  EXPECT_NEAR(soft.at(0), std::exp(0.5) / (std::exp(0.5) + 1.0), 1e-15);
  EXPECT_THROW(softmax_temperature(DiffTensor::vector({1, 0}), 0.0,
                                   SoftmaxConvention::kStandardDivide),
               std::invalid_argument);
}

TEST(Tensor, SoftmaxIsStableForLargeLogits) {
  const DiffTensor z = DiffTensor::matrix(2, 3, {100, -100, 50, -100, -99.5, 100});
  for (auto conv : {SoftmaxConvention::kStandardDivide, SoftmaxConvention::kMultiply}) {
    const DiffTensor p = softmax_temperature(z, 1.0, conv);
    for (std::size_t r = 0; r < 2; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_GT(p.at(r, c), 0.0);
        s += p.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Tensor, LogRejectsNonPositive) {
  EXPECT_THROW(log(DiffTensor::vector({1.0, 0.0})), NumericError);
}

TEST(Tensor, CheckedModeNamesTheOperation) {
  const DiffTensor big = DiffTensor::vector({800.0});
  EXPECT_NO_THROW(exp(big));
  CheckedModeGuard checked;
  try {
    exp(big);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("exp"), std::string::npos);
  }
}

TEST(Tensor, ConcatReshapePairwise) {
  const DiffTensor a = DiffTensor::matrix(1, 2, {0, 0});
  const DiffTensor b = DiffTensor::matrix(2, 2, {3, 4, 1, 0});
  const DiffTensor c = concat({a, b});
  EXPECT_EQ(c.rows(), 3u);
  EXPECT_EQ(c.at(2, 0), 1.0);
  EXPECT_THROW(concat({a, DiffTensor::matrix(1, 3, {1, 2, 3})}), ShapeError);
  const DiffTensor r = reshape(b, {4});
  EXPECT_EQ(r.rank(), 1u);
  EXPECT_THROW(reshape(b, {3}), ShapeError);
  const DiffTensor d = pairwise_sq_dist(a, b);
  EXPECT_EQ(d.at(0, 0), 25.0);
  EXPECT_EQ(d.at(0, 1), 1.0);
}

TEST(Tensor, TapeIsTopological) {
  const DiffTensor x = DiffTensor::vector({1, 2}, true);
  const DiffTensor y = relu(scale(x, 2.0));
  const DiffTensor loss = reduce_sum(add(y, x));
  const Tape tape = Tape::trace(loss);
  ASSERT_EQ(tape.size(), 4u);
  EXPECT_EQ(tape.entries().back().op, "reduce_sum");
  EXPECT_EQ(tape.entries().back().output, loss.id());
  EXPECT_TRUE(Tape::trace(x).empty());
}

TEST(Tensor, CustomOperation) {
  const DiffTensor x = DiffTensor::vector({1, 2, 3}, true);
  std::vector<double> cube(3);
  for (std::size_t i = 0; i < 3; ++i) cube[i] = std::pow(x.at(i), 3);
  const std::vector<double> xv(x.data().begin(), x.data().end());
  const DiffTensor y = make_op("cube", {3}, cube, {x},
                               [xv](std::span<const double> g, std::span<const std::span<double>> in) {
                                 for (std::size_t i = 0; i < 3; ++i) in[0][i] += 3 * xv[i] * xv[i] * g[i];
                               });
  EXPECT_EQ(y.op_name(), "cube");
  backward(reduce_sum(y));
  EXPECT_EQ(x.grad()[2], 27.0);
}

}  // namespace
}  // namespace kdda
