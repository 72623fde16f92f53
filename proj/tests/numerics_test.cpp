#include <gtest/gtest.h>

#include <cmath>

#include "op_check.hpp"
#include "seqorder/numerics.hpp"

namespace seqorder {
namespace {

using testing::check_op;
using testing::random_tensor;

constexpr double kOpTolerance = 1e-6;

TEST(Softmax, SymmetricPair) {
  Tape tape;
  const Var y = ops::softmax_rows(tape.leaf(Tensor({1, 2}, {0.0, 0.0})));
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.5);
}

TEST(Softmax, RowsSumToOneAndSurviveLargeInputs) {
  Tape tape;
  Tensor x = random_tensor({6, 9}, 1, 30.0);
  x.at(0, 0) = 1e4;
  const Var y = ops::softmax_rows(tape.leaf(x));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      ASSERT_TRUE(std::isfinite(y.value().at(r, c)));
      s += y.value().at(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(CrossEntropy, UniformLogitsSmoothedTarget) {
  Tape tape;
  const Var l = ops::cross_entropy_soft(tape.leaf(Tensor({1, 3})), Tensor({1, 3}, {0.8, 0.1, 0.1}));
  EXPECT_NEAR(l.value().item(), std::log(3.0), 1e-12);
}

TEST(CrossEntropy, IndexMatchesOneHotSoft) {
  const Tensor z = random_tensor({4, 5}, 2);
  Tensor onehot({4, 5});
  const std::vector<TokenId> labels{0, 4, 2, 2};
  for (std::size_t r = 0; r < 4; ++r) onehot.at(r, labels[r]) = 1.0;
  Tape tape;
  const double a = ops::cross_entropy_index(tape.leaf(z), labels).value().item();
  const double b = ops::cross_entropy_soft(tape.leaf(z), onehot).value().item();
  EXPECT_NEAR(a, b, 1e-14);
}

TEST(LayerNorm, ConstantRowNormalizesToZero) {
  Tape tape;
  const Var y = ops::layer_norm(tape.leaf(Tensor({2, 4}, 3.25)), tape.leaf(Tensor({4}, 1.0)), tape.leaf(Tensor({4})));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, EpsilonDefault) { EXPECT_EQ(ops::kLayerNormEps, 1e-12); }

TEST(GradCheck, QuadraticIsExact) {
  const Tensor x({2}, {1.0, 2.0});
  Tape tape;
  const Var leaf = tape.leaf(x);
  const Var f = ops::sum(ops::mul(leaf, leaf));
  tape.backward(f);
  EXPECT_EQ(tape.grad(leaf), Tensor({2}, {2.0, 4.0}));
  const double err = grad_check([](Tape&, Var v) { return ops::sum(ops::mul(v, v)); }, x);
  EXPECT_LT(err, 1e-9);
}

TEST(GradCheck, CrossEntropyFiveLogits) {
  const Tensor target({1, 5}, {0.1, 0.2, 0.3, 0.15, 0.25});
  const double err =
      grad_check([&](Tape&, Var v) { return ops::cross_entropy_soft(v, target); }, random_tensor({1, 5}, 3));
  EXPECT_LT(err, 1e-7);
}

TEST(GradCheck, RelativeErrorDefinition) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 3.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2e-9, 0.0), 0.2);
}

TEST(GradCheck, NonFiniteIsFatalWithCoordinate) {
  Tensor x({3}, {1.0, -1.0, 2.0});
  try {
    grad_check([](Tape& t, Var v) { return ops::sum(ops::mul(v, t.constant(Tensor({3}, {1.0, NAN, 1.0})))); }, x);
    FAIL();
  } catch (const FatalError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate"), std::string::npos) << e.what();
  }
}

TEST(OpGrad, Matmul) {
  EXPECT_LT(check_op({random_tensor({3, 4}, 1), random_tensor({4, 5}, 2)},
                     [](Tape&, std::vector<Var>& v) { return ops::matmul(v[0], v[1]); }),
            kOpTolerance);
}

TEST(OpGrad, MatmulTransposed) {
  EXPECT_LT(check_op({random_tensor({3, 4}, 1), random_tensor({6, 4}, 2)},
                     [](Tape&, std::vector<Var>& v) { return ops::matmul_bt(v[0], v[1]); }),
            kOpTolerance);
}

TEST(OpGrad, AddAndBias) {
  EXPECT_LT(check_op({random_tensor({3, 4}, 1), random_tensor({3, 4}, 2)},
                     [](Tape&, std::vector<Var>& v) { return ops::add(v[0], v[1]); }),
            kOpTolerance);
  EXPECT_LT(check_op({random_tensor({5, 4}, 1), random_tensor({4}, 2)},
                     [](Tape&, std::vector<Var>& v) { return ops::add_bias(v[0], v[1]); }),
            kOpTolerance);
}

TEST(OpGrad, MulScaleSum) {
  EXPECT_LT(check_op({random_tensor({3, 4}, 1), random_tensor({3, 4}, 2)},
                     [](Tape&, std::vector<Var>& v) { return ops::mul(v[0], v[1]); }),
            kOpTolerance);
  EXPECT_LT(check_op({random_tensor({7}, 3)}, [](Tape&, std::vector<Var>& v) { return ops::scale(v[0], -2.5); }),
            kOpTolerance);
  EXPECT_LT(check_op({random_tensor({2, 3}, 4)}, [](Tape&, std::vector<Var>& v) { return ops::sum(v[0]); }),
            kOpTolerance);
}

TEST(OpGrad, GeluBothVariants) {
  for (const auto kind : {GeluKind::Tanh, GeluKind::Erf})
    EXPECT_LT(check_op({random_tensor({4, 6}, 5, 2.0)},
                       [kind](Tape&, std::vector<Var>& v) { return ops::gelu(v[0], kind); }),
              kOpTolerance);
}

TEST(OpGrad, Tanh) {
  EXPECT_LT(check_op({random_tensor({4, 6}, 6)}, [](Tape&, std::vector<Var>& v) { return ops::tanh(v[0]); }),
            kOpTolerance);
}

TEST(OpGrad, SoftmaxRows) {
  EXPECT_LT(check_op({random_tensor({4, 6}, 7)}, [](Tape&, std::vector<Var>& v) { return ops::softmax_rows(v[0]); }),
            kOpTolerance);
}

TEST(OpGrad, LayerNorm) {
  EXPECT_LT(check_op({random_tensor({4, 8}, 8), random_tensor({8}, 9), random_tensor({8}, 10)},
                     [](Tape&, std::vector<Var>& v) { return ops::layer_norm(v[0], v[1], v[2]); }),
            kOpTolerance);
}

TEST(OpGrad, DropoutWithFixedMask) {
  EXPECT_LT(check_op({random_tensor({5, 6}, 11)},
                     [](Tape&, std::vector<Var>& v) {
                       Rng rng(3);
                       return ops::dropout(v[0], 0.3, rng, true);
                     }),
            kOpTolerance);
}

TEST(OpGrad, EmbeddingAndGather) {
  const std::vector<TokenId> ids{3, 0, 3, 2};
  EXPECT_LT(check_op({random_tensor({5, 4}, 12)},
                     [&](Tape&, std::vector<Var>& v) { return ops::embedding_lookup(v[0], ids); }),
            kOpTolerance);
  const std::vector<std::size_t> rows{1, 1, 4};
  EXPECT_LT(check_op({random_tensor({5, 4}, 13)},
                     [&](Tape&, std::vector<Var>& v) { return ops::gather_rows(v[0], rows); }),
            kOpTolerance);
}

TEST(OpGrad, AttentionWithMaskAndDropout) {
  const ops::AttentionLayout layout{2, 4, 2};
  const std::vector<std::uint8_t> valid{1, 1, 1, 0, 1, 1, 0, 0};
  for (const bool train : {false, true})
    EXPECT_LT(check_op({random_tensor({8, 6}, 14), random_tensor({8, 6}, 15), random_tensor({8, 6}, 16)},
                       [&](Tape&, std::vector<Var>& v) {
                         Rng rng(4);
                         return ops::attention(v[0], v[1], v[2], layout, valid, 0.2, rng, train);
                       }),
              kOpTolerance)
        << "train=" << train;
}

TEST(OpGrad, CrossEntropies) {
  Tensor target({3, 4}, {0.8, 0.1, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25});
  EXPECT_LT(check_op({random_tensor({3, 4}, 17)},
                     [&](Tape&, std::vector<Var>& v) { return ops::cross_entropy_soft(v[0], target); }),
            kOpTolerance);
  const std::vector<TokenId> labels{3, 0, 1};
  EXPECT_LT(check_op({random_tensor({3, 4}, 18)},
                     [&](Tape&, std::vector<Var>& v) { return ops::cross_entropy_index(v[0], labels); }),
            kOpTolerance);
}

TEST(Attention, MaskedKeysAreIgnored) {
  const ops::AttentionLayout layout{1, 4, 2};
  const std::vector<std::uint8_t> valid{1, 1, 0, 0};
  Tensor q = random_tensor({4, 6}, 1), k = random_tensor({4, 6}, 2), v = random_tensor({4, 6}, 3);
  Rng rng(0);
  Tape t1;
  const Tensor before = ops::attention(t1.leaf(q), t1.leaf(k), t1.leaf(v), layout, valid, 0.0, rng, false).value();
  for (std::size_t c = 0; c < 6; ++c) {
    k.at(3, c) += 5.0;
    v.at(2, c) -= 7.0;
  }
  Tape t2;
  const Tensor after = ops::attention(t2.leaf(q), t2.leaf(k), t2.leaf(v), layout, valid, 0.0, rng, false).value();
  EXPECT_EQ(before, after);
}

TEST(Dropout, IdentityWhenNotTraining) {
  Tape tape;
  Rng rng(1);
  const Tensor x = random_tensor({3, 3}, 1);
  EXPECT_EQ(ops::dropout(tape.leaf(x), 0.5, rng, false).value(), x);
}

TEST(Dropout, KeepRateAndScaling) {
  Tape tape;
  Rng rng(2);
  const Var y = ops::dropout(tape.leaf(Tensor({100000}, 1.0)), 0.1, rng, true);
  std::size_t zeros = 0;
  for (double v : y.value().data()) {
    if (v == 0.0)
      ++zeros;
    else
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.9);
  }
  EXPECT_NEAR(zeros / 100000.0, 0.1, 0.005);
}

TEST(Shapes, MismatchNamesBothShapes) {
  Tape tape;
  try {
    ops::matmul(tape.leaf(Tensor({2, 3})), tape.leaf(Tensor({4, 5})));
    FAIL();
  } catch (const ProgrammingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,5]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::add(tape.leaf(Tensor({2})), tape.leaf(Tensor({3}))), ProgrammingError);
}

TEST(Determinism, MatmulIndependentOfThreadCount) {
  const Tensor a = random_tensor({67, 33}, 1), b = random_tensor({33, 29}, 2);
  const auto product = [&] {
    Tape tape;
    return ops::matmul(tape.leaf(a), tape.leaf(b)).value();
  };
  const std::size_t saved = thread_budget();
  set_thread_budget(1);
  const Tensor one = product();
  set_thread_budget(4);
  const Tensor four = product();
  set_thread_budget(saved);
  EXPECT_EQ(one, four);
}

TEST(Tape, BackwardAccumulatesSharedUses) {
  Tape tape;
  const Var x = tape.leaf(Tensor({1}, {3.0}));
  const Var y = ops::add(ops::mul(x, x), x);  // x^2 + x
  tape.backward(ops::sum(y));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 7.0);
}

}  // namespace
}  // namespace seqorder
