#include <gtest/gtest.h>

#include <numeric>

#include "lwfs/data.hpp"
#include "lwfs/eval.hpp"
#include "ssl_oracle.hpp"
#include "test_util.hpp"

namespace lwfs {
namespace {

using test::randn;

TEST(Split, StratifiedCountsAndDisjoint) {
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) labels.push_back(i < 10 ? 0 : 1);  // 10 zeros, 40 ones
  const Split s = stratified_split(labels, 0.2, 1);
  EXPECT_EQ(s.test.size(), 2u + 8u);
  EXPECT_EQ(s.train.size(), 40u);
  EXPECT_TRUE(std::is_sorted(s.train.begin(), s.train.end()));
  EXPECT_TRUE(std::is_sorted(s.test.begin(), s.test.end()));
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> want(50);
  std::iota(want.begin(), want.end(), 0);
  EXPECT_EQ(all, want);
  std::size_t zeros = 0;
  for (auto i : s.test) zeros += labels[i] == 0;
  EXPECT_EQ(zeros, 2u);
  EXPECT_EQ(stratified_split(labels, 0.2, 1).test, s.test);
  EXPECT_NE(stratified_split(labels, 0.2, 2).test, s.test);
}

ProbeConfig quick_probe() {
  ProbeConfig c;
  c.epochs = 30;
  c.batch_size = 32;
  c.base_lr = 0.5;
  c.seed = 2;
  return c;
}

TEST(LinearProbe, OneHotFeaturesAreSolved) {
  const std::size_t n = 400, classes = 4;
  Tensor<float> x({n, classes}, 0.0f);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % classes);
    x.at(i, i % classes) = 1.0f;
  }
  const EvalReport r = linear_probe(x, y, quick_probe());
  EXPECT_GE(r.accuracy, 0.99);
  EXPECT_EQ(r.mode, "linear_probe");
}

TEST(LinearProbe, SeparableBlobs) {
  const auto d = gen_synthetic<float>({.n = 600, .classes = 3, .dim = 8, .cluster_sep = 5.0, .seed = 3});
  EXPECT_GE(linear_probe(d.features, d.labels, quick_probe()).accuracy, 0.95);
}

TEST(LinearProbe, ShuffledLabelsStayNearChance) {
  const auto d = gen_synthetic<float>({.n = 2000, .classes = 2, .dim = 8, .cluster_sep = 5.0, .seed = 4});
  std::vector<int> y = d.labels;
  Rng rng(5);
  std::shuffle(y.begin(), y.end(), rng);
  const double acc = linear_probe(d.features, y, quick_probe()).accuracy;
  EXPECT_GT(acc, 0.4);
  EXPECT_LT(acc, 0.6);
}

TEST(LinearProbe, ReportIsConsistent) {
  const auto d = gen_synthetic<float>({.n = 300, .classes = 3, .dim = 4, .cluster_sep = 2.0, .seed = 6});
  const Split s = stratified_split(d.labels, 0.2, 7);
  const EvalReport r = linear_probe(d.features, d.labels, quick_probe(), s);
  EXPECT_EQ(r.total, s.test.size());
  EXPECT_EQ(r.train_size, s.train.size());
  EXPECT_EQ(r.test_size, s.test.size());
  ASSERT_EQ(r.predictions.size(), r.total);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < r.total; ++i) {
    EXPECT_EQ(r.truth[i], d.labels[s.test[i]]);
    correct += r.predictions[i] == r.truth[i];
  }
  EXPECT_EQ(r.correct, correct);
  EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(correct) / static_cast<double>(r.total));
  EXPECT_EQ(std::accumulate(r.class_total.begin(), r.class_total.end(), std::size_t{0}), r.total);
  EXPECT_EQ(std::accumulate(r.class_correct.begin(), r.class_correct.end(), std::size_t{0}), r.correct);
  EXPECT_EQ(r.per_class_accuracy().size(), 3u);
  EXPECT_NE(r.to_json().find("\"accuracy\""), std::string::npos);
}

TEST(LinearProbe, Deterministic) {
  const auto d = gen_synthetic<float>({.n = 200, .classes = 2, .dim = 4, .cluster_sep = 1.0, .seed = 8});
  const auto a = linear_probe(d.features, d.labels, quick_probe());
  const auto b = linear_probe(d.features, d.labels, quick_probe());
  EXPECT_EQ(a.predictions, b.predictions);
  EXPECT_EQ(a.accuracy, b.accuracy);
}

TEST(LinearProbe, RejectsDegenerateInputs) {
  Tensor<float> x = randn<float>({20, 3}, 1);
  EXPECT_THROW(linear_probe(x, std::vector<int>(20, 1), quick_probe()), ConfigError);
  EXPECT_THROW(linear_probe(x, std::vector<int>(19, 1), quick_probe()), ContractError);
  ProbeConfig bad = quick_probe();
  bad.test_fraction = 1.0;
  std::vector<int> y(20);
  for (std::size_t i = 0; i < 20; ++i) y[i] = static_cast<int>(i % 2);
  EXPECT_THROW(linear_probe(x, y, bad), ConfigError);
}

TEST(ExtractFeatures, MatchesScriptedForward) {
  const ModelSpec spec = test::tiny_spec(2);
  auto m = build_model<double>(spec, 3, 2);
  // Non-trivial running statistics.
  for (auto& g : m.encoder) {
    Rng rng(4);
    for (auto& t : g.tensors) {
      if (t.name.ends_with("running_mean")) {
        for (auto& v : t.value.data()) v = std::normal_distribution<double>(0, 0.3)(rng);
      }
      if (t.name.ends_with("running_var")) {
        for (auto& v : t.value.data()) v = 0.5 + std::uniform_real_distribution<double>(0, 1)(rng);
      }
    }
  }
  Dataset<double> ds;
  ds.features = randn({7, spec.input_dim}, 5);
  const Tensor<double> got = extract_features(m, ds);

  auto copy = m;
  Graph<double> g;
  test::OracleNet net(g);
  const NodeId z = net.encoder(copy, g.constant(ds.features), false, test::OracleNorm::kRunning);
  EXPECT_LE(test::max_abs_diff(got, g.value(z)), 1e-12);
  EXPECT_TRUE(extract_features(m, ds).bitwise_equal(got));
  EXPECT_TRUE(copy.bitwise_equal(m));
}

TEST(ExtractFeatures, Contracts) {
  const ModelSpec spec = test::tiny_spec(2);
  Dataset<double> ds;
  ds.features = randn({3, spec.input_dim}, 6);
  EXPECT_THROW(extract_features(build_model<double>(spec, 1, 0), ds), ContractError);
  ds.features = randn({3, spec.input_dim + 1}, 6);
  EXPECT_THROW(extract_features(build_model<double>(spec, 1, 2), ds), ContractError);
}

TEST(FineTune, TrainsACopyAndLearnsBlobs) {
  ModelSpec spec = test::tiny_spec(2);
  spec.input_dim = 8;
  const auto enc = build_model<float>(spec, 7, 2);
  const auto before = enc;
  const auto d = gen_synthetic<float>({.n = 300, .classes = 2, .dim = 8, .cluster_sep = 5.0, .seed = 9});
  ProbeConfig cfg = default_fine_tune_config();
  EXPECT_EQ(cfg.epochs, 40u);
  EXPECT_EQ(cfg.warmup_epochs, 10u);
  cfg.epochs = 10;
  cfg.warmup_epochs = 2;
  cfg.batch_size = 32;
  cfg.base_lr = 0.05;
  const Split s = stratified_split(d.labels, 0.2, 1);
  const EvalReport r = fine_tune(enc, d, cfg, s);
  EXPECT_EQ(r.mode, "fine_tune");
  EXPECT_GE(r.accuracy, 0.9);
  EXPECT_TRUE(enc.bitwise_equal(before));

  Dataset<float> unlabeled = d;
  unlabeled.labels.clear();
  EXPECT_THROW(fine_tune(enc, unlabeled, cfg, s), ConfigError);
}

}  // namespace
}  // namespace lwfs
