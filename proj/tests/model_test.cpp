#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "lwfs/checkpoint.hpp"
#include "lwfs/model.hpp"
#include "lwfs/optim.hpp"
#include "lwfs/resource.hpp"
#include "test_util.hpp"

namespace lwfs {
namespace {

using test::randn;

TEST(BuildModel, DeterministicInSeed) {
  const ModelSpec spec = test::tiny_spec(3);
  EXPECT_TRUE(build_model<float>(spec, 5, 3).bitwise_equal(build_model<float>(spec, 5, 3)));
  EXPECT_FALSE(build_model<float>(spec, 5, 3).bitwise_equal(build_model<float>(spec, 6, 3)));
  EXPECT_EQ(build_model<float>(test::tiny_spec(1), 5, 1).encoder.size(), 1u);
  EXPECT_EQ(build_model<float>(spec, 5, 0).active_depth(), 0u);
}

TEST(BuildModel, XavierBounds) {
  const ModelSpec spec = test::tiny_spec(2);
  const auto m = build_model<double>(spec, 1, 2);
  const double a = std::sqrt(6.0 / (spec.input_dim + spec.block_hidden_dim));
  for (double v : m.encoder[0].get("fc1.weight").value.data()) EXPECT_LE(std::abs(v), a);
  for (double v : m.encoder[0].get("fc1.bias").value.data()) EXPECT_EQ(v, 0.0);
  for (double v : m.proj.get("l1.norm.gamma").value.data()) EXPECT_EQ(v, 1.0);
}

TEST(BuildModel, ParameterCountMatchesHandDerivation) {
  ModelSpec spec;
  spec.input_dim = 64;
  spec.num_layers = 3;
  spec.block_hidden_dim = 32;
  spec.block_out_dim = 32;
  spec.proj_hidden = 64;
  spec.proj_out = 16;
  spec.pred_hidden = 64;
  // Block: pre-norm (gamma, beta, running mean, running var) + fc1 + fc2.
  //   L1: 4*64 + (64*32 + 32) + (32*32 + 32) = 3392
  //   L2 = L3: 4*32 + (32*32 + 32) + (32*32 + 32) = 2240
  // Proj 32 -> 64 -> 64 -> 16, bias-free linears, each followed by a norm:
  //   2048 + 256 + 4096 + 256 + 1024 + 64 = 7744
  // Pred 16 -> 64 -> 16: 1024 + 256 + 1024 + 64 = 2368
  const auto m = build_model<float>(spec, 0, 3);
  EXPECT_EQ(m.encoder[0].scalar_count(), 3392u);
  EXPECT_EQ(m.encoder[1].scalar_count(), 2240u);
  EXPECT_EQ(m.encoder[2].scalar_count(), 2240u);
  EXPECT_EQ(m.proj.scalar_count(), 7744u);
  EXPECT_EQ(m.pred.scalar_count(), 2368u);
  EXPECT_EQ(m.scalar_count(), 17984u);
  // Running statistics are not trainable: 2 per normalized feature.
  EXPECT_EQ(m.trainable_count(), 17984u - 2 * (64 + 32 + 32) - 2 * (64 + 64 + 16) - 2 * (64 + 16));
  for (std::size_t l = 1; l <= 3; ++l) {
    EXPECT_EQ(block_scalar_count(spec, l), m.encoder[l - 1].scalar_count());
    EXPECT_EQ(block_trainable_count(spec, l), m.encoder[l - 1].trainable_count());
  }
  EXPECT_EQ(proj_scalar_count(spec), m.proj.scalar_count());
  EXPECT_EQ(pred_scalar_count(spec), m.pred.scalar_count());
  EXPECT_EQ(proj_trainable_count(spec), m.proj.trainable_count());
  EXPECT_EQ(pred_trainable_count(spec), m.pred.trainable_count());
}

// Straight-line block math: pre-norm, fc1, GELU (tanh form), fc2, residual.
Tensor<double> block_oracle(const ParamGroup<double>& layer, const Tensor<double>& x, bool batch_stats) {
  const std::size_t b = x.rows(), in = x.cols();
  const auto& gamma = layer.get("norm.gamma").value;
  const auto& beta = layer.get("norm.beta").value;
  const auto& rm = layer.get("norm.running_mean").value;
  const auto& rv = layer.get("norm.running_var").value;
  Tensor<double> h({b, in});
  for (std::size_t j = 0; j < in; ++j) {
    double mean = rm[j], var = rv[j];
    if (batch_stats) {
      mean = 0;
      for (std::size_t r = 0; r < b; ++r) mean += x.at(r, j);
      mean /= static_cast<double>(b);
      var = 0;
      for (std::size_t r = 0; r < b; ++r) var += (x.at(r, j) - mean) * (x.at(r, j) - mean);
      var /= static_cast<double>(b);
    }
    for (std::size_t r = 0; r < b; ++r) h.at(r, j) = gamma[j] * (x.at(r, j) - mean) / std::sqrt(var + 1e-5) + beta[j];
  }
  auto linear = [](const Tensor<double>& a, const Tensor<double>& w, const Tensor<double>& bias) {
    Tensor<double> out({a.rows(), w.cols()});
    for (std::size_t r = 0; r < a.rows(); ++r) {
      for (std::size_t c = 0; c < w.cols(); ++c) {
        double s = bias[c];
        for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(r, k) * w.at(k, c);
        out.at(r, c) = s;
      }
    }
    return out;
  };
  Tensor<double> u = linear(h, layer.get("fc1.weight").value, layer.get("fc1.bias").value);
  for (auto& v : u.data()) {
    v = 0.5 * v * (1 + std::tanh(std::sqrt(2 / std::acos(-1.0)) * (v + 0.044715 * v * v * v)));
  }
  Tensor<double> y = linear(u, layer.get("fc2.weight").value, layer.get("fc2.bias").value);
  if (y.shape() == x.shape()) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
  }
  return y;
}

TEST(ForwardEncoder, MatchesStraightLineOracle) {
  const ModelSpec spec = test::tiny_spec(2);
  auto m = build_model<double>(spec, 3, 2);
  for (auto& t : m.encoder[0].tensors) {
    if (t.name.find("bias") != std::string::npos || t.name.find("beta") != std::string::npos) {
      t.value = randn(t.value.shape(), 30);
    }
  }
  const Tensor<double> x = randn({2, spec.input_dim}, 31);
  for (bool train : {false, true}) {
    ModelState<double> copy = m;
    Graph<double> g;
    ParamBinder<double> b(g);
    const PassMode mode = train ? PassMode{true, NormMode::kBatchStats} : PassMode::inference();
    const Tensor<double> got = g.value(forward_encoder(b, copy, g.constant(x), 2, mode));
    const Tensor<double> want = block_oracle(m.encoder[1], block_oracle(m.encoder[0], x, train), train);
    EXPECT_LE(test::max_abs_diff(got, want), 1e-12) << "train=" << train;
  }
}

TEST(ForwardEncoder, DepthOneEqualsBlockOne) {
  const ModelSpec spec = test::tiny_spec(1);
  auto m = build_model<double>(spec, 3, 1);
  const Tensor<double> x = randn({3, spec.input_dim}, 32);
  Graph<double> g;
  ParamBinder<double> b(g);
  const NodeId in = g.constant(x);
  const Tensor<double> enc = g.value(forward_encoder(b, m, in, 1, PassMode::inference()));
  const Tensor<double> blk = g.value(forward_block(b, m.encoder[0], in, false, NormMode::kEval));
  EXPECT_TRUE(enc.bitwise_equal(blk));
}

TEST(ForwardEncoder, FrozenPrefixBindsNoParameters) {
  auto m = build_model<double>(test::tiny_spec(2), 3, 2);
  m.frozen_prefix = 2;
  Graph<double> g;
  ParamBinder<double> b(g);
  const NodeId out = forward_encoder(b, m, g.constant(randn({3, 6}, 33)), 2, PassMode::online());
  EXPECT_TRUE(b.trainable().empty());
  EXPECT_FALSE(g.requires_grad(out));

  m.frozen_prefix = 1;
  Graph<double> g2;
  ParamBinder<double> b2(g2);
  forward_encoder(b2, m, g2.constant(randn({3, 6}, 33)), 2, PassMode::online());
  for (const auto& bind : b2.trainable()) EXPECT_EQ(bind.key.rfind("encoder.2/", 0), 0u) << bind.key;
}

TEST(ForwardEncoder, DepthOutOfRange) {
  auto m = build_model<double>(test::tiny_spec(2), 3, 1);
  Graph<double> g;
  ParamBinder<double> b(g);
  const NodeId x = g.constant(randn({2, 6}, 34));
  EXPECT_THROW(forward_encoder(b, m, x, 0, PassMode::inference()), ContractError);
  EXPECT_THROW(forward_encoder(b, m, x, 2, PassMode::inference()), ContractError);
}

TEST(AdamW, ZeroGradientWithoutDecayIsANoOp) {
  Tensor<double> p = randn({4}, 40);
  const Tensor<double> before = p;
  const Tensor<double> grad = Tensor<double>::zeros({4});
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.0});
  std::vector<ParamUpdate<double>> u{{"p", &p, &grad}};
  opt.step(u, 1e-2);
  EXPECT_TRUE(p.bitwise_equal(before));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  Tensor<double> p = Tensor<double>::zeros({3});
  const Tensor<double> grad({3}, {0.3, -2.0, 1e-3});
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.0});
  std::vector<ParamUpdate<double>> u{{"p", &p, &grad}};
  opt.step(u, 1e-2);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p[i], -1e-2 * (grad[i] > 0 ? 1 : -1), 1e-7);
}

TEST(AdamW, DecayIsDecoupled) {
  Tensor<double> p = Tensor<double>::ones({2});
  const Tensor<double> grad = Tensor<double>::zeros({2});
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.5});
  std::vector<ParamUpdate<double>> u{{"p", &p, &grad}};
  opt.step(u, 0.1);
  EXPECT_DOUBLE_EQ(p[0], 1 - 0.1 * 0.5);
}

TEST(AdamW, QuadraticBowlLossDecreases) {
  Tensor<double> p = randn({5}, 41, 3.0);
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.0});
  auto loss = [&] { return 0.5 * sum_of_squares(p); };
  double prev = loss();
  for (int s = 0; s < 10; ++s) {
    const Tensor<double> grad = p;
    std::vector<ParamUpdate<double>> u{{"p", &p, &grad}};
    opt.step(u, 0.1);
    const double now = loss();
    EXPECT_LT(now, prev) << "step " << s;
    prev = now;
  }
}

TEST(AdamW, NonFiniteGradientAbortsWithoutUpdating) {
  Tensor<double> p = randn({3}, 42), q = randn({3}, 43);
  const Tensor<double> good = randn({3}, 44);
  Tensor<double> bad = randn({3}, 45);
  bad[1] = std::nan("");
  const Tensor<double> p0 = p, q0 = q;
  AdamW<double> opt;
  std::vector<ParamUpdate<double>> u{{"p", &p, &good}, {"q", &q, &bad}};
  EXPECT_THROW(opt.step(u, 0.1), NumericError);
  EXPECT_TRUE(p.bitwise_equal(p0));
  EXPECT_TRUE(q.bitwise_equal(q0));
  EXPECT_TRUE(opt.moments().empty());
}

TEST(AdamW, MomentsOnlyForTrainedParameters) {
  auto m = build_model<double>(test::tiny_spec(2), 3, 2);
  m.frozen_prefix = 1;
  const ParamGroup<double> frozen = m.encoder[0];
  Graph<double> g;
  ParamBinder<double> b(g);
  const NodeId out = forward_encoder(b, m, g.constant(randn({4, 6}, 46)), 2, PassMode::online());
  const auto grads = g.backward(g.sum(g.mul(out, out)));
  std::vector<ParamUpdate<double>> u;
  for (const auto& bind : b.trainable()) u.push_back({bind.key, &bind.tensor->value, &grads.at(bind.node)});
  AdamW<double> opt;
  for (int s = 0; s < 5; ++s) opt.step(u, 0.05);
  for (const auto& [key, mo] : opt.moments()) EXPECT_EQ(key.rfind("encoder.2/", 0), 0u) << key;
  EXPECT_EQ(opt.moments().size(), 6u);  // norm gamma, beta, fc1 w/b, fc2 w/b
  EXPECT_TRUE(m.encoder[0].bitwise_equal(frozen));
}

TEST(LrSchedule, FixedCosineAndLinearScaling) {
  LrSchedule fixed{LrKind::kFixed, 1.5e-4, 256, 10, {}, 0};
  for (std::size_t t = 0; t < 10; ++t) EXPECT_EQ(lr_at(fixed, t), 1.5e-4);
  fixed.batch_size = 512;
  EXPECT_DOUBLE_EQ(lr_at(fixed, 3), 3e-4);

  LrSchedule cos{LrKind::kCosine, 1e-3, 256, 100, {}, 0};
  EXPECT_DOUBLE_EQ(lr_at(cos, 0), 1e-3);
  EXPECT_NEAR(lr_at(cos, 50), 0.5e-3, 1e-18);
  EXPECT_THROW(lr_at(cos, 100), ContractError);
}

TEST(LrSchedule, WarmupIsLinearFromZero) {
  LrSchedule s{LrKind::kCosine, 1e-3, 256, 40, {}, 10};
  for (std::size_t t = 0; t < 10; ++t) EXPECT_DOUBLE_EQ(lr_at(s, t), 1e-3 * static_cast<double>(t + 1) / 10.0);
  EXPECT_DOUBLE_EQ(lr_at(s, 10), 1e-3);
}

TEST(LrSchedule, CyclicRestartsEveryStage) {
  LrSchedule s{LrKind::kCyclic, 1.5e-4, 1024, 12 * 15, std::vector<std::size_t>(12, 15), 0};
  for (std::size_t k = 0; k < 12; ++k) {
    EXPECT_EQ(lr_at(s, k * 15), lr_at(s, 0));
    EXPECT_EQ(lr_at(s, k * 15 + 7), lr_at(s, 7));
  }
  EXPECT_LT(lr_at(s, 14), lr_at(s, 15));
}

TEST(LrSchedule, CyclicWithOneStageEqualsCosine) {
  for (std::size_t total : {1u, 7u, 45u}) {
    const LrSchedule cyc{LrKind::kCyclic, 2e-4, 64, total, {total}, 0};
    const LrSchedule cos{LrKind::kCosine, 2e-4, 64, total, {}, 0};
    for (std::size_t t = 0; t < total; ++t) EXPECT_EQ(lr_at(cyc, t), lr_at(cos, t));
  }
}

TEST(LrSchedule, AlwaysPositive) {
  Rng rng(47);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t stages = 1 + rng() % 6;
    std::vector<std::size_t> steps;
    std::size_t total = 0;
    for (std::size_t i = 0; i < stages; ++i) {
      steps.push_back(1 + rng() % 9);
      total += steps.back();
    }
    const std::size_t warm = rng() % 3;
    for (LrKind kind : {LrKind::kFixed, LrKind::kCosine, LrKind::kCyclic}) {
      const LrSchedule s{kind, 1e-4, 32, total, steps, warm};
      for (std::size_t t = 0; t < total; ++t) EXPECT_GT(lr_at(s, t), 0.0);
    }
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  auto m = build_model<float>(test::tiny_spec(3), 9, 2);
  m.frozen_prefix = 1;
  m.encoder[0].get("norm.running_mean").value = randn<float>({6}, 50);
  EXPECT_TRUE(deserialize_model<float>(serialize_model(m)).bitwise_equal(m));
  auto d = build_model<double>(test::tiny_spec(3), 9, 3);
  EXPECT_TRUE(deserialize_model<double>(serialize_model(d)).bitwise_equal(d));
}

TEST(Checkpoint, SingleScalarPayloadIsFourBytes) {
  ParamGroup<float> g{"w", {{"weight", Tensor<float>::scalar(0.5f), true}}};
  const auto bytes = serialize_group_payload(g);
  ASSERT_EQ(bytes.size(), 4u);
  EXPECT_EQ(bytes, (std::vector<std::uint8_t>{0x00, 0x00, 0x00, 0x3F}));
}

TEST(Checkpoint, SizeIsHeaderPlusFourBytesPerScalar) {
  for (std::size_t depth = 0; depth <= 3; ++depth) {
    const auto m = build_model<float>(ModelSpec{}, 1, depth);
    const auto bytes = serialize_model(m);
    std::uint32_t header = 0;
    for (int i = 0; i < 4; ++i) header |= static_cast<std::uint32_t>(bytes[6 + i]) << (8 * i);
    EXPECT_EQ(bytes.size(), kCheckpointPreambleBytes + header + 4 * m.scalar_count());
    EXPECT_EQ(checkpoint_payload_bytes(m), 4 * m.scalar_count());
  }
}

TEST(Checkpoint, LayerGroupBytesMatchLedger) {
  const ModelSpec spec;
  const auto m = build_model<float>(spec, 1, spec.num_layers);
  for (std::size_t l = 1; l <= spec.num_layers; ++l) {
    const std::size_t bytes = serialize_group_payload(m.encoder[l - 1]).size();
    EXPECT_EQ(bytes, 4 * block_scalar_count(spec, l));
    EXPECT_EQ(bytes, kWireBytesPerScalar * exchange_scalars(spec, LayerRange{l, l}, true));
  }
}

TEST(Checkpoint, DistinctParseErrors) {
  const auto good = serialize_model(build_model<float>(test::tiny_spec(2), 1, 2));
  auto kind_of = [](const std::vector<std::uint8_t>& b) {
    try {
      deserialize_model<float>(b);
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "no error";
    return CheckpointError::Kind::kBadHeader;
  };
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of(bad_magic), CheckpointError::Kind::kBadMagic);
  auto version = good;
  version[4] = 9;
  EXPECT_EQ(kind_of(version), CheckpointError::Kind::kVersionMismatch);
  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_EQ(kind_of(truncated), CheckpointError::Kind::kTruncated);
  std::string text(good.begin(), good.end());
  const auto pos = text.find("\"shape\":[6,5]");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 13, "\"shape\":[5,6]");
  EXPECT_EQ(kind_of(std::vector<std::uint8_t>(text.begin(), text.end())), CheckpointError::Kind::kShapeMismatch);
}

TEST(Checkpoint, PrecisionConversionOnLoad) {
  const auto d = build_model<double>(test::tiny_spec(2), 1, 2);
  const auto f = deserialize_model<float>(serialize_model(d));
  EXPECT_EQ(f.scalar_count(), d.scalar_count());
  EXPECT_LE(test::max_abs_diff(f.encoder[0].get("fc1.weight").value.cast<double>(),
                               d.encoder[0].get("fc1.weight").value),
            1e-7);
}

}  // namespace
}  // namespace lwfs
