#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"

using namespace gril;
using testing_util::randn;

namespace {

HopClassifier forced(std::size_t hops, std::size_t dim = 6) {
  CamConfig c;
  c.dim = dim;
  c.hidden = 4;
  HopClassifier cam(c);
  auto ps = cam.parameters();
  ps[2]->value = Tensor({c.max_hops, c.hidden});
  ps[3]->value = Tensor({c.max_hops});
  ps[3]->value[hops - 1] = 10.0;
  return cam;
}

}  // namespace

TEST(Cam, ForwardMatchesDenseOracle) {
  CamConfig c;
  c.dim = 5;
  c.hidden = 3;
  c.seed = 9;
  HopClassifier cam(c);
  std::mt19937_64 rng(1);
  auto ps = cam.parameters();
  ps[1]->value = randn(rng, {3});
  ps[3]->value = randn(rng, {4});
  Tensor q = randn(rng, {5});
  const Tensor &W1 = ps[0]->value, &b1 = ps[1]->value, &W2 = ps[2]->value, &b2 = ps[3]->value;
  std::vector<double> h(3), z(4);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = b1[i];
    for (std::size_t k = 0; k < 5; ++k) s += W1.at(i, k) * q[k];
    h[i] = std::tanh(s);
  }
  double zs = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    z[j] = b2[j];
    for (std::size_t i = 0; i < 3; ++i) z[j] += W2.at(j, i) * h[i];
    zs += std::exp(z[j]);
  }
  auto pred = cam.predict(q);
  double sum = 0;
  std::size_t arg = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(pred.probabilities[j], std::exp(z[j]) / zs, 1e-12);
    sum += pred.probabilities[j];
    if (z[j] > z[arg]) arg = j;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_EQ(pred.hops, arg + 1);
}

TEST(Cam, BudgetIsFivePerHop) {
  Tensor q = hash_vector("q", 6);
  EXPECT_EQ(predict_budget(q, forced(1)), 5u);
  EXPECT_EQ(predict_budget(q, forced(2)), 10u);
  EXPECT_EQ(predict_budget(q, forced(4)), 20u);
}

TEST(Cam, RetrievalShapeFollowsClassifier) {
  EngineConfig cfg = testing_util::tiny_config(6);
  cfg.use_cam = true;
  cfg.min_layers = 2;
  KnowledgeGraph g = testing_util::small_graph();
  Resources res = Resources::build(g, cfg);
  Model m(cfg);
  TrainSample ts{"q", {"a"}, {"b"}, {}, 1};
  PreparedSample s = prepare(ts, res);
  HopClassifier one = forced(1), three = forced(3);
  EXPECT_EQ(retrieval_shape(m, s, &one), (std::pair<std::size_t, std::size_t>{5, 2}));
  EXPECT_EQ(retrieval_shape(m, s, &three), (std::pair<std::size_t, std::size_t>{15, 3}));
  EXPECT_THROW(retrieval_shape(m, s, nullptr), ConfigError);

  cfg.use_cam = false;
  cfg.budget = 7;
  Model fixed(cfg);
  EXPECT_EQ(retrieval_shape(fixed, s, &three), (std::pair<std::size_t, std::size_t>{7, cfg.retriever.num_layers}));
}

TEST(Cam, LearnsSeparableHopData) {
  CamConfig c;
  c.dim = 8;
  c.hidden = 8;
  c.max_hops = 2;
  c.epochs = 150;
  HopClassifier cam(c);
  std::mt19937_64 rng(2);
  std::vector<Tensor> qs;
  std::vector<std::size_t> hops;
  for (int i = 0; i < 200; ++i) {
    Tensor q = randn(rng, {8});
    const std::size_t h = i % 2 ? 2 : 1;
    q[0] = h == 2 ? 1.0 + std::abs(q[0]) : -1.0 - std::abs(q[0]);  // margin on one axis
    qs.push_back(q);
    hops.push_back(h);
  }
  auto rep = train_cam(cam, qs, hops);
  EXPECT_GE(rep.train_accuracy, 0.99);
  EXPECT_FALSE(rep.single_class);
  EXPECT_LT(rep.epoch_losses.back(), rep.epoch_losses.front());
}

TEST(Cam, LabelAndShapeErrors) {
  CamConfig c;
  c.dim = 4;
  c.epochs = 2;
  HopClassifier cam(c);
  std::vector<Tensor> qs{Tensor({4})};
  std::vector<std::size_t> zero{0}, five{5}, ok{1}, two{1, 2};
  EXPECT_THROW(train_cam(cam, qs, zero), DataError);
  EXPECT_THROW(train_cam(cam, qs, five), DataError);
  EXPECT_THROW(train_cam(cam, qs, two), DimensionError);
  EXPECT_THROW(train_cam(cam, {}, {}), DataError);
  EXPECT_TRUE(train_cam(cam, qs, ok).single_class);
  EXPECT_THROW(cam.predict(Tensor({3})), DimensionError);
  c.max_hops = 0;
  EXPECT_THROW(HopClassifier{c}, ConfigError);
}

TEST(Cam, CheckpointRoundTrip) {
  CamConfig c;
  c.dim = 6;
  c.hidden = 5;
  c.seed = 3;
  HopClassifier cam(c);
  Checkpoint ck = cam.checkpoint();
  HopClassifier back = HopClassifier::from_checkpoint(ck);
  Tensor q = hash_vector("how far", 6);
  EXPECT_EQ(cam.predict(q).probabilities, back.predict(q).probabilities);
  ck.meta["kind"] = "gril";
  EXPECT_THROW(HopClassifier::from_checkpoint(ck), DataError);
}

TEST(Cam, Gradients) {
  CamConfig c;
  c.dim = 4;
  c.hidden = 3;
  HopClassifier cam(c);
  Tensor q = hash_vector("q", 4);
  for (Parameter* p : cam.parameters()) {
    auto build = [&](Tape& t) { return ops::cross_entropy(cam.logits(t, q, true), 2); };
    EXPECT_LT(grad_check_param(build, *p), 1e-6) << p->name;
  }
}
