#include <gtest/gtest.h>

#include <cmath>

#include "lwfs/gradcheck.hpp"
#include "lwfs/graph.hpp"
#include "test_util.hpp"

namespace lwfs {
namespace {

using test::coordinate_rel_error;
using test::numeric_grad;
using test::randn;

TEST(Tensor, ShapeMatchesBuffer) {
  Tensor<float> t({3, 4});
  EXPECT_EQ(t.size(), 12u);
  EXPECT_EQ(shape_numel(t.shape()), t.size());
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(Matmul, IdentityAndOrthogonalRows) {
  Graph<double> g;
  const NodeId id2 = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  const NodeId m = g.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  EXPECT_TRUE(g.value(g.matmul(id2, m)).bitwise_equal(g.value(m)));

  const NodeId a = g.constant(Tensor<double>({1, 2}, {1, 0}));
  const NodeId b = g.constant(Tensor<double>({2, 1}, {0, 5}));
  EXPECT_EQ(g.value(g.matmul(a, b)).item(), 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph<double> g;
  const NodeId a = g.constant(Tensor<double>({2, 3}));
  const NodeId b = g.constant(Tensor<double>({2, 3}));
  try {
    g.matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2, 3] x [2, 3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, GradientMatchesCentralDifferences) {
  Tensor<double> a = randn({3, 4}, 1), b = randn({4, 2}, 2);
  const Tensor<double> w = randn({3, 2}, 3);
  auto loss = [&](Graph<double>& g, NodeId& na, NodeId& nb) {
    na = g.parameter(a);
    nb = g.parameter(b);
    return g.sum(g.mul(g.matmul(na, nb), g.constant(w)));
  };
  Graph<double> g;
  NodeId na, nb;
  const auto grads = g.backward(loss(g, na, nb));
  auto f = [&] {
    Graph<double> h;
    NodeId x, y;
    return h.value(loss(h, x, y)).item();
  };
  EXPECT_LE(coordinate_rel_error(grads.at(na), numeric_grad(f, a)), 1e-6);
  EXPECT_LE(coordinate_rel_error(grads.at(nb), numeric_grad(f, b)), 1e-6);
}

TEST(Elementwise, ReluAndAddIdentity) {
  Graph<double> g;
  const NodeId x = g.constant(Tensor<double>({3}, {-1, 0, 2}));
  EXPECT_EQ(g.value(g.relu(x)).vec(), (std::vector<double>{0, 0, 2}));
  const Tensor<double> r = randn({2, 3}, 4);
  const NodeId y = g.constant(r);
  EXPECT_TRUE(g.value(g.add_scalar(y, 0.0)).bitwise_equal(r));
  EXPECT_TRUE(g.value(g.add(y, g.constant(Tensor<double>::zeros({2, 3})))).bitwise_equal(r));
  EXPECT_THROW(g.add(y, g.constant(Tensor<double>({3, 2}))), DimensionError);
}

TEST(Elementwise, GeluGradientMatchesCentralDifferences) {
  Tensor<double> x = randn({1, 16}, 5, 2.0);
  const Tensor<double> w = randn({1, 16}, 6);
  Graph<double> g;
  const NodeId nx = g.parameter(x);
  const auto grads = g.backward(g.sum(g.mul(g.gelu(nx), g.constant(w))));
  auto f = [&] {
    Graph<double> h;
    return h.value(h.sum(h.mul(h.gelu(h.constant(x)), h.constant(w)))).item();
  };
  EXPECT_LE(coordinate_rel_error(grads.at(nx), numeric_grad(f, x)), 1e-5);
}

TEST(L2Normalize, Examples) {
  Graph<double> g;
  const Tensor<double> y = g.value(g.l2_normalize(g.constant(Tensor<double>({1, 2}, {3, 4})), 1e-12));
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
  const Tensor<double> z = g.value(g.l2_normalize(g.constant(Tensor<double>({1, 2}, {0, 0})), 1e-12));
  EXPECT_EQ(z.vec(), (std::vector<double>{0, 0}));
}

TEST(L2Normalize, UnitRowsProperty) {
  Rng rng(7);
  std::uniform_real_distribution<double> mag(-6, 3);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<double> x = randn({3, 5}, rng);
    for (std::size_t r = 0; r < 3; ++r) {
      const double s = std::pow(10.0, mag(rng));
      for (std::size_t c = 0; c < 5; ++c) x.at(r, c) *= s;
    }
    Graph<double> g;
    const Tensor<double> y = g.value(g.l2_normalize(g.constant(x), 1e-12));
    for (std::size_t r = 0; r < 3; ++r) {
      double in = 0, out = 0;
      for (std::size_t c = 0; c < 5; ++c) {
        in += x.at(r, c) * x.at(r, c);
        out += y.at(r, c) * y.at(r, c);
      }
      if (std::sqrt(in) >= 1e-6) EXPECT_LE(std::abs(std::sqrt(out) - 1), 1e-6);
    }
  }
}

TEST(L2Normalize, GradientOfSumMatchesCentralDifferences) {
  Tensor<double> x = randn({4, 8}, 8);
  Graph<double> g;
  const NodeId nx = g.parameter(x);
  const auto grads = g.backward(g.sum(g.l2_normalize(nx, 1e-12)));
  auto f = [&] {
    Graph<double> h;
    return h.value(h.sum(h.l2_normalize(h.constant(x), 1e-12))).item();
  };
  EXPECT_LE(test::max_abs_diff(grads.at(nx), numeric_grad(f, x)), 1e-8);
  EXPECT_LE(gradient_rel_error(grads.at(nx), numeric_grad(f, x)), 1e-5);
}

TEST(BatchNorm, ConstantColumnAndZeroGamma) {
  Tensor<double> x = randn({6, 3}, 9);
  for (std::size_t r = 0; r < 6; ++r) x.at(r, 1) = 2.5;
  Graph<double> g;
  const NodeId y = g.batch_norm_train(g.constant(x), g.constant(Tensor<double>::ones({3})),
                                      g.constant(Tensor<double>::zeros({3})), 1e-5);
  for (std::size_t r = 0; r < 6; ++r) EXPECT_EQ(g.value(y).at(r, 1), 0.0);

  const Tensor<double> beta({3}, {0.5, -1, 2});
  const NodeId z = g.batch_norm_train(g.constant(x), g.constant(Tensor<double>::zeros({3})), g.constant(beta), 1e-5);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(g.value(z).at(r, c), beta[c]);
  }
}

TEST(BatchNorm, BatchOfOneIsRejected) {
  Graph<double> g;
  EXPECT_THROW(g.batch_norm_train(g.constant(Tensor<double>({1, 3})), g.constant(Tensor<double>::ones({3})),
                                  g.constant(Tensor<double>::zeros({3})), 1e-5),
               ContractError);
}

TEST(BatchNorm, GradientsMatchCentralDifferences) {
  Tensor<double> x = randn({8, 4}, 10), gamma = randn({4}, 11), beta = randn({4}, 12);
  const Tensor<double> w = randn({8, 4}, 13);
  auto build = [&](Graph<double>& g, bool params, NodeId* ids) {
    auto leaf = [&](const Tensor<double>& t) { return params ? g.parameter(t) : g.constant(t); };
    ids[0] = leaf(x);
    ids[1] = leaf(gamma);
    ids[2] = leaf(beta);
    return g.sum(g.mul(g.batch_norm_train(ids[0], ids[1], ids[2], 1e-5), g.constant(w)));
  };
  Graph<double> g;
  NodeId ids[3];
  const auto grads = g.backward(build(g, true, ids));
  auto f = [&] {
    Graph<double> h;
    NodeId tmp[3];
    return h.value(build(h, false, tmp)).item();
  };
  Tensor<double>* vals[3] = {&x, &gamma, &beta};
  for (int i = 0; i < 3; ++i) EXPECT_LE(coordinate_rel_error(grads.at(ids[i]), numeric_grad(f, *vals[i])), 1e-4) << i;
}

TEST(Backward, SumAndHalfSquaredNorm) {
  const Tensor<double> x = randn({2, 3}, 14);
  Graph<double> g;
  const NodeId p = g.parameter(x);
  EXPECT_TRUE(g.backward(g.sum(p)).at(p).bitwise_equal(Tensor<double>::ones({2, 3})));
  const auto grads = g.backward(g.scale(g.sum(g.mul(p, p)), 0.5));
  EXPECT_LE(test::max_abs_diff(grads.at(p), x), 0.0);
}

TEST(Backward, UnusedParameterGetsExactZeros) {
  Graph<double> g;
  const NodeId used = g.parameter(randn({2, 2}, 15));
  const NodeId unused = g.parameter(randn({3}, 16));
  const auto grads = g.backward(g.sum(g.mul(used, used)));
  ASSERT_TRUE(grads.contains(unused));
  EXPECT_TRUE(grads.at(unused).bitwise_equal(Tensor<double>::zeros({3})));
}

TEST(Backward, NonScalarLossIsAContractError) {
  Graph<double> g;
  const NodeId p = g.parameter(randn({2, 2}, 17));
  EXPECT_THROW(g.backward(g.relu(p)), ContractError);
}

TEST(Backward, TopologicalOrderInvariant) {
  Graph<double> g;
  const NodeId a = g.parameter(randn({3, 3}, 18));
  const NodeId b = g.gelu(g.matmul(a, g.transpose(a)));
  g.sum(g.l2_normalize(b, 1e-12));
  for (std::uint32_t i = 0; i < g.size(); ++i) {
    for (NodeId in : g.inputs(NodeId{i})) EXPECT_LT(in.index, i);
  }
}

TEST(Determinism, OpsAreBitwiseRepeatable) {
  const Tensor<double> x = randn({5, 4}, 19), w = randn({4, 3}, 20);
  auto run = [&] {
    Graph<double> g;
    const NodeId h = g.batch_norm_train(g.matmul(g.constant(x), g.parameter(w)), g.constant(Tensor<double>::ones({3})),
                                        g.constant(Tensor<double>::zeros({3})), 1e-5);
    const NodeId loss = g.sum(g.gelu(g.l2_normalize(h, 1e-12)));
    return std::pair{g.value(loss), g.backward(loss).begin()->second};
  };
  const auto [l1, g1] = run();
  const auto [l2, g2] = run();
  EXPECT_TRUE(l1.bitwise_equal(l2));
  EXPECT_TRUE(g1.bitwise_equal(g2));
}

TEST(FiniteDiffCheck, SquareAndConstant) {
  Tensor<double> p = Tensor<double>::scalar(3.0);
  std::vector<Tensor<double>*> params{&p};
  std::vector<Tensor<double>> analytic{Tensor<double>::scalar(6.0)};
  const FdResult sq = finite_diff_check([&] { return p[0] * p[0]; }, params, analytic, 1e-5);
  EXPECT_LT(sq.max_rel_error, 1e-9);
  EXPECT_NEAR(sq.numeric[0][0], 6.0, 1e-8);

  std::vector<Tensor<double>> zero{Tensor<double>::scalar(0.0)};
  EXPECT_EQ(finite_diff_check([] { return 1.5; }, params, zero, 1e-5).max_rel_error, 0.0);
}

TEST(FiniteDiffCheck, NonFiniteProbeIsANumericError) {
  Tensor<double> p = Tensor<double>::scalar(0.0);
  std::vector<Tensor<double>*> params{&p};
  std::vector<Tensor<double>> analytic{Tensor<double>::scalar(0.0)};
  EXPECT_THROW(finite_diff_check([&] { return p[0] > 0 ? std::log(-1.0) : 0.0; }, params, analytic, 1e-5),
               NumericError);
}

TEST(GradCheckSuite, EveryOpListedOnceAndAllPass) {
  const GradCheckReport rep = run_gradcheck_suite();
  EXPECT_GE(rep.cases.size(), 100u);
  EXPECT_TRUE(rep.passed()) << rep.worst().name << " " << rep.worst().max_rel_error;
  const auto per_name = rep.worst_per_name();
  std::vector<std::string> names;
  for (const auto& c : per_name) names.push_back(c.name);
  for (OpKind op : differentiable_ops()) {
    EXPECT_EQ(std::count(names.begin(), names.end(), std::string(op_name(op))), 1) << op_name(op);
  }
  EXPECT_EQ(std::count(names.begin(), names.end(), "composite"), 1);
}

TEST(GradCheckSuite, CorruptedRuleIsCaught) {
  for (OpKind op : {OpKind::kGelu, OpKind::kMatmul, OpKind::kBatchNormTrain}) {
    testing::set_corrupted_op(op);
    GradCheckOptions opt;
    opt.cases_per_op = 2;
    opt.composite_cases = 1;
    const GradCheckReport rep = run_gradcheck_suite(opt);
    testing::set_corrupted_op(std::nullopt);
    const auto failing = rep.failing_names();
    EXPECT_NE(std::find(failing.begin(), failing.end(), std::string(op_name(op))), failing.end()) << op_name(op);
  }
}

}  // namespace
}  // namespace lwfs
