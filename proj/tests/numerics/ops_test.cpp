#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "embattack/numerics/errors.h"
#include "embattack/numerics/gradcheck.h"
#include "embattack/numerics/ops.h"

namespace embattack::numerics {
namespace {

constexpr std::uint64_t kSeed = 20240607;

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = normal(rng);
  return Tensor(std::move(shape), std::move(data));
}

// Checks d(f)/d(x) from the tape against central differences at 10 sampled
// coordinates. `build` maps a leaf to a scalar on the given tape.
double check_gradient(const std::function<Tensor(Tape&, const Tensor&)>& build, const Tensor& x0,
                      double step = 1e-5) {
  Tensor x = x0.clone(true);
  Tape tape;
  tape.backward(build(tape, x));
  const auto coords = sample_coordinates(x.numel(), 10, kSeed);
  std::vector<double> analytic;
  for (std::size_t i : coords) analytic.push_back(x.grad()[i]);
  auto f = [&](const Tensor& probe) {
    Tape scratch;
    return build(scratch, probe).item();
  };
  return relative_error(analytic, finite_difference_gradient(f, x0, step, coords));
}

// A fixed random projection turns any tensor into a scalar with a generic
// gradient, so checks do not collapse onto the all-ones direction of sum().
Tensor project(Tape& tape, const Tensor& y, std::uint64_t seed) {
  return sum(tape, mul(tape, y, random_tensor(y.shape(), seed)));
}

TEST(ElementwiseTest, AddsSameShape) {
  Tape tape;
  Tensor out = add(tape, Tensor({2}, {1.0, 2.0}), Tensor({2}, {3.0, 4.0}));
  EXPECT_EQ(out.data()[0], 4.0);
  EXPECT_EQ(out.data()[1], 6.0);
  EXPECT_TRUE(tape.empty());
}

TEST(ElementwiseTest, ScalarZeroAnnihilates) {
  Tape tape;
  Tensor out = elementwise(tape, Tensor({2}, {1.0, -2.0}), 0.0, Elementwise::kMul);
  EXPECT_EQ(out.data()[0], 0.0);
  EXPECT_EQ(out.data()[1], 0.0);
}

TEST(ElementwiseTest, RejectsIncompatibleShapes) {
  Tape tape;
  EXPECT_THROW(add(tape, Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
}

TEST(ElementwiseTest, BroadcastsTrailingRow) {
  Tape tape;
  Tensor bias({2}, {10.0, 20.0}, true);
  Tensor out = add(tape, Tensor({2, 2}, {1, 2, 3, 4}), bias);
  EXPECT_EQ(out.data()[3], 24.0);
  tape.backward(sum(tape, out));
  EXPECT_EQ(bias.grad()[0], 2.0);
  EXPECT_EQ(bias.grad()[1], 2.0);
}

TEST(ElementwiseTest, DivGradientWrtDenominator) {
  // Oracle: central differences with step 1e-5 give -a/b^2 = -0.125.
  auto f = [](const Tensor& b) { return 2.0 / b.data()[0]; };
  const Tensor fd = finite_difference_gradient(f, Tensor({1}, {4.0}), 1e-5);
  EXPECT_NEAR(fd.data()[0], -0.125, 1e-9);

  Tape tape;
  Tensor b({1}, {4.0}, true);
  tape.backward(div(tape, Tensor({1}, {2.0}), b));
  EXPECT_NEAR(b.grad()[0], -0.125, 1e-12);
}

TEST(ElementwiseTest, GradientsMatchFiniteDifferences) {
  const Tensor other = random_tensor({3, 4}, 7);
  for (Elementwise kind : {Elementwise::kAdd, Elementwise::kSub, Elementwise::kMul,
                           Elementwise::kDiv, Elementwise::kMax}) {
    auto lhs = [&](Tape& t, const Tensor& x) { return project(t, elementwise(t, x, other, kind), 1); };
    auto rhs = [&](Tape& t, const Tensor& x) { return project(t, elementwise(t, other, x, kind), 2); };
    EXPECT_LT(check_gradient(lhs, random_tensor({3, 4}, 11)), 1e-6);
    EXPECT_LT(check_gradient(rhs, random_tensor({3, 4}, 12)), 1e-6);
  }
}

TEST(MatmulTest, IdentityAndDirectProduct) {
  Tape tape;
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {5, 6, 7, 8});
  Tensor out = matmul(tape, eye, b);
  EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()),
            (std::vector<double>{5, 6, 7, 8}));
  EXPECT_EQ(matmul(tape, Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4})).item(), 11.0);
}

TEST(MatmulTest, RejectsInnerMismatch) {
  Tape tape;
  EXPECT_THROW(matmul(tape, Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(MatmulTest, GradientOfSumMatchesFiniteDifferences) {
  const Tensor b = random_tensor({4, 2}, 21);
  auto f = [&](Tape& t, const Tensor& a) { return sum(t, matmul(t, a, b)); };
  EXPECT_LT(check_gradient(f, random_tensor({3, 4}, 22)), 1e-6);
  const Tensor a = random_tensor({3, 4}, 23);
  auto g = [&](Tape& t, const Tensor& x) { return project(t, matmul(t, a, x), 3); };
  EXPECT_LT(check_gradient(g, random_tensor({4, 2}, 24)), 1e-6);
}

TEST(LinearTest, MatchesMatmulPlusBias) {
  Tape tape;
  const Tensor x = random_tensor({3, 4}, 25);
  const Tensor w = random_tensor({4, 2}, 26);
  const Tensor b = random_tensor({2}, 27);
  const Tensor fused = linear(tape, x, w, b);
  const Tensor reference = add(tape, matmul(tape, x, w), b);
  for (std::size_t i = 0; i < fused.numel(); ++i) {
    EXPECT_NEAR(fused.data()[i], reference.data()[i], 1e-12);
  }
  EXPECT_THROW(linear(tape, x, w, Tensor::zeros({3})), ShapeError);
}

TEST(LinearTest, GradientsMatchFiniteDifferences) {
  const Tensor x = random_tensor({3, 4}, 28);
  const Tensor w = random_tensor({4, 2}, 29);
  const Tensor b = random_tensor({2}, 30);
  auto wrt_x = [&](Tape& t, const Tensor& v) { return project(t, linear(t, v, w, b), 4); };
  auto wrt_w = [&](Tape& t, const Tensor& v) { return project(t, linear(t, x, v, b), 4); };
  auto wrt_b = [&](Tape& t, const Tensor& v) { return project(t, linear(t, x, w, v), 4); };
  EXPECT_LT(check_gradient(wrt_x, x), 1e-6);
  EXPECT_LT(check_gradient(wrt_w, w), 1e-6);
  EXPECT_LT(check_gradient(wrt_b, b), 1e-6);
}

TEST(SoftmaxTest, UniformAndSaturated) {
  Tape tape;
  Tensor u = softmax(tape, Tensor::zeros({3}), 0);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  Tensor s = softmax(tape, Tensor({2}, {1000.0, 0.0}), 0);
  EXPECT_NEAR(s.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(s.data()[1], 0.0, 1e-12);
}

TEST(SoftmaxTest, SumsToOneAlongAxisForLargeInputs) {
  Tape tape;
  for (std::size_t axis : {0u, 1u}) {
    Tensor y = softmax(tape, random_tensor({4, 6}, 31, 1e3), axis);
    const std::size_t rows = axis == 0 ? 6 : 4;
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t i = 0; i < (axis == 0 ? 4u : 6u); ++i) {
        total += axis == 0 ? y.data()[i * 6 + r] : y.data()[r * 6 + i];
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(SoftmaxTest, GradientMatchesFiniteDifferences) {
  auto f = [](Tape& t, const Tensor& x) { return project(t, softmax(t, x, 0), 4); };
  EXPECT_LT(check_gradient(f, random_tensor({5}, 41)), 1e-6);
  auto g = [](Tape& t, const Tensor& x) { return project(t, softmax(t, x, 0), 5); };
  EXPECT_LT(check_gradient(g, random_tensor({3, 4}, 42)), 1e-6);
}

TEST(SoftmaxTest, RejectsBadAxis) {
  Tape tape;
  EXPECT_THROW(softmax(tape, Tensor::zeros({3}), 1), ShapeError);
}

TEST(LayerNormTest, ConstantInputNormalizesToZero) {
  Tape tape;
  Tensor y = layer_norm(tape, Tensor({3}, {1, 1, 1}), Tensor({3}, {1, 1, 1}),
                        Tensor({3}, {0, 0, 0}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNormTest, BiasShiftsMean) {
  Tape tape;
  Tensor y = layer_norm(tape, random_tensor({2, 3}, 51), Tensor({3}, {1, 1, 1}),
                        Tensor({3}, {5, 5, 5}));
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_NEAR((y.data()[r * 3] + y.data()[r * 3 + 1] + y.data()[r * 3 + 2]) / 3.0, 5.0, 1e-12);
  }
}

TEST(LayerNormTest, GradientsMatchFiniteDifferences) {
  const Tensor gain = random_tensor({4}, 61);
  const Tensor bias = random_tensor({4}, 62);
  const Tensor x0 = random_tensor({2, 4}, 63);
  auto wrt_x = [&](Tape& t, const Tensor& x) { return project(t, layer_norm(t, x, gain, bias), 6); };
  auto wrt_gain = [&](Tape& t, const Tensor& g) { return project(t, layer_norm(t, x0, g, bias), 6); };
  auto wrt_bias = [&](Tape& t, const Tensor& b) { return project(t, layer_norm(t, x0, gain, b), 6); };
  EXPECT_LT(check_gradient(wrt_x, x0), 1e-6);
  EXPECT_LT(check_gradient(wrt_gain, gain), 1e-6);
  EXPECT_LT(check_gradient(wrt_bias, bias), 1e-6);
}

TEST(GeluTest, GradientMatchesFiniteDifferences) {
  auto f = [](Tape& t, const Tensor& x) { return project(t, gelu(t, x), 7); };
  EXPECT_LT(check_gradient(f, random_tensor({3, 5}, 71, 2.0)), 1e-6);
}

TEST(EmbeddingRowsTest, LookupAndScatter) {
  Tensor table({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
  Tape tape;
  const std::vector<int> one{0};
  Tensor row = embedding_rows(tape, table, one);
  EXPECT_EQ(row.data()[0], 1.0);
  EXPECT_EQ(row.data()[1], 2.0);

  const std::vector<int> repeated{3, 3};
  Tensor rows = embedding_rows(tape, table, repeated);
  EXPECT_EQ(rows.data()[0], rows.data()[2]);
  Tensor weights({2, 2}, {1.0, 2.0, 10.0, 20.0});
  tape.backward(sum(tape, mul(tape, rows, weights)));
  EXPECT_EQ(table.grad()[6], 11.0);
  EXPECT_EQ(table.grad()[7], 22.0);
  EXPECT_EQ(table.grad()[0], 0.0);
}

TEST(EmbeddingRowsTest, OutOfRangeIdThrows) {
  Tape tape;
  const std::vector<int> ids{4};
  EXPECT_THROW(embedding_rows(tape, Tensor::zeros({4, 2}), ids), IndexError);
}

TEST(EmbeddingRowsTest, GradientMatchesFiniteDifferences) {
  const std::vector<int> ids{1, 0, 1, 3};
  auto f = [&](Tape& t, const Tensor& table) { return project(t, embedding_rows(t, table, ids), 8); };
  EXPECT_LT(check_gradient(f, random_tensor({4, 3}, 81)), 1e-6);
}

TEST(ConcatRowsTest, GradientSplitsAcrossParts) {
  const Tensor fixed = random_tensor({2, 3}, 91);
  auto f = [&](Tape& t, const Tensor& x) {
    const std::vector<Tensor> parts{fixed, x, fixed};
    return project(t, concat_rows(t, parts), 9);
  };
  EXPECT_LT(check_gradient(f, random_tensor({3, 3}, 92)), 1e-6);
}

TEST(CausalAttentionTest, GradientsMatchFiniteDifferences) {
  const Tensor q = random_tensor({5, 4}, 101);
  const Tensor k = random_tensor({5, 4}, 102);
  const Tensor v = random_tensor({5, 4}, 103);
  auto wrt_q = [&](Tape& t, const Tensor& x) { return project(t, causal_attention(t, x, k, v, 2), 10); };
  auto wrt_k = [&](Tape& t, const Tensor& x) { return project(t, causal_attention(t, q, x, v, 2), 10); };
  auto wrt_v = [&](Tape& t, const Tensor& x) { return project(t, causal_attention(t, q, k, x, 2), 10); };
  EXPECT_LT(check_gradient(wrt_q, q), 1e-6);
  EXPECT_LT(check_gradient(wrt_k, k), 1e-6);
  EXPECT_LT(check_gradient(wrt_v, v), 1e-6);
}

TEST(CausalAttentionTest, FirstPositionCopiesItsValue) {
  Tape tape;
  const Tensor v = random_tensor({3, 4}, 104);
  Tensor out = causal_attention(tape, random_tensor({3, 4}, 105), random_tensor({3, 4}, 106), v, 2);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.data()[c], v.data()[c], 1e-15);
}

TEST(CrossEntropyTest, UniformLogitsGiveLogVocab) {
  Tape tape;
  const std::vector<int> targets{3, 15};
  EXPECT_NEAR(cross_entropy(tape, Tensor::zeros({2, 16}), targets).item(), std::log(16.0), 1e-12);
  EXPECT_NEAR(std::log(16.0), 2.7726, 1e-4);
}

TEST(CrossEntropyTest, SaturatedTargetGivesZero) {
  Tape tape;
  std::vector<double> logits(8, 0.0);
  logits[5] = 1000.0;
  const std::vector<int> targets{5};
  EXPECT_NEAR(cross_entropy(tape, Tensor({1, 8}, logits), targets).item(), 0.0, 1e-12);
}

TEST(CrossEntropyTest, MatchesNaiveLogSumExp) {
  const Tensor logits = random_tensor({3, 8}, 111, 3.0);
  const std::vector<int> targets{0, 7, 4};
  double expected = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0.0;
    for (std::size_t i = 0; i < 8; ++i) z += std::exp(logits.at(r, i));
    expected += std::log(z) - logits.at(r, static_cast<std::size_t>(targets[r]));
  }
  expected /= 3.0;
  Tape tape;
  EXPECT_NEAR(cross_entropy(tape, logits, targets).item(), expected, 1e-10);
}

TEST(CrossEntropyTest, EmptyTargetsThrow) {
  Tape tape;
  EXPECT_THROW(cross_entropy(tape, Tensor::zeros({1, 4}), std::span<const int>{}), ArgumentError);
}

TEST(CrossEntropyTest, GradientAgreesWithFiniteDifferences) {
  const std::vector<int> targets{2, 0, 5};
  auto f = [&](Tape& t, const Tensor& x) { return cross_entropy(t, softmax(t, x, 1), targets); };
  EXPECT_LT(check_gradient(f, random_tensor({3, 6}, 121)), 1e-6);
  auto g = [&](Tape& t, const Tensor& x) { return cross_entropy(t, x, targets); };
  EXPECT_LT(check_gradient(g, random_tensor({3, 6}, 122)), 1e-6);
}

}  // namespace
}  // namespace embattack::numerics
