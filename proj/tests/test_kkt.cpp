#include <doctest.h>

#include <optional>
#include <vector>

#include "exssnet/data.hpp"
#include "exssnet/errors.hpp"
#include "exssnet/harness.hpp"
#include "exssnet/kkt.hpp"
#include "exssnet/masking.hpp"
#include "exssnet/network.hpp"
#include "exssnet/training.hpp"
#include "test_support.hpp"

using namespace exssnet;
using test_support::random_matrix;
using test_support::random_supermask;

namespace {

Matrix column(std::vector<float> values) {
  Matrix m(static_cast<int>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) {
    m.at(static_cast<int>(i), 0) = values[i];
  }
  return m;
}

}  // namespace

TEST_CASE("transfer configuration bounds are enforced") {
  KktConfig config;
  CHECK_NOTHROW(config.validate());
  config.sample_fraction = 0.0;
  CHECK_THROWS_AS(config.validate(), std::domain_error);
  config = KktConfig{};
  config.sample_fraction = 1.5;
  CHECK_THROWS_AS(config.validate(), std::domain_error);
  config = KktConfig{};
  config.knn_k = 0;
  CHECK_THROWS_AS(config.validate(), std::domain_error);
  config = KktConfig{};
  config.probe_train_ratio = 1.0;
  CHECK_THROWS_AS(config.validate(), std::domain_error);
  config = KktConfig{};
  config.margin = -0.1;
  CHECK_THROWS_AS(config.validate(), std::domain_error);
}

TEST_CASE("feature extraction returns the layer feeding the output head") {
  const ModelState model = init_signed_kaiming(
      {{4, 6, Activation::kRelu}, {6, 5, Activation::kRelu},
       {5, 3, Activation::kIdentity}},
      21);
  Rng rng(22);
  const Supermask mask = random_supermask(model.weight_shapes(), rng);
  const Matrix samples = random_matrix(3, 4, rng);

  const Matrix features = extract_features(model, mask, samples);
  CHECK(features.rows() == 3);
  CHECK(features.cols() == 5);

  ActivationCache cache;
  forward_masked(model, mask, samples, &cache);
  CHECK(features.values() == cache.out[1].values());
}

TEST_CASE("feature extraction rejects models without a hidden layer") {
  const ModelState model =
      init_signed_kaiming({{4, 3, Activation::kIdentity}}, 1);
  Rng rng(2);
  const Supermask mask = random_supermask(model.weight_shapes(), rng);
  CHECK_THROWS_AS(extract_features(model, mask, Matrix(2, 4, 0.0f)),
                  StateError);
}

TEST_CASE("nearest-neighbour voting, hand-checked on one-dimensional points") {
  const Matrix train = column({0.0f, 1.0f, 4.0f});
  const std::vector<int> labels = {0, 1, 1};

  SUBCASE("single neighbour picks the closest point") {
    const auto p = knn_classify(train, labels, column({0.6f}), 1);
    CHECK(p == std::vector<int>{1});
  }
  SUBCASE("three neighbours vote by majority") {
    const auto p = knn_classify(train, labels, column({0.6f}), 3);
    CHECK(p == std::vector<int>{1});  // votes: label 1 twice, label 0 once
  }
  SUBCASE("k beyond the training size is clamped") {
    const auto p = knn_classify(train, labels, column({0.6f}), 10);
    CHECK(p == std::vector<int>{1});
  }
  SUBCASE("query order is preserved") {
    const auto p = knn_classify(train, labels, column({0.6f, -5.0f}), 1);
    CHECK(p == std::vector<int>{1, 0});
  }
}

TEST_CASE("nearest-neighbour tie rules: lower row, then lower label") {
  // Both training points sit at distance 1 from the query.
  const Matrix train = column({0.0f, 2.0f});
  SUBCASE("equidistant neighbours resolve to the earlier training row") {
    const auto p = knn_classify(train, {7, 3}, column({1.0f}), 1);
    CHECK(p == std::vector<int>{7});
  }
  SUBCASE("split votes resolve to the smaller label") {
    const auto p = knn_classify(train, {5, 3}, column({1.0f}), 2);
    CHECK(p == std::vector<int>{3});
  }
}

TEST_CASE("nearest-neighbour input validation") {
  const Matrix train = column({0.0f, 1.0f});
  CHECK_THROWS_AS(knn_classify(train, {0}, column({0.5f}), 1), ShapeError);
  CHECK_THROWS_AS(knn_classify(Matrix(0, 1), {}, column({0.5f}), 1),
                  std::domain_error);
  CHECK_THROWS_AS(knn_classify(train, {0, 1}, Matrix(1, 2, 0.0f), 1),
                  ShapeError);
  CHECK_THROWS_AS(knn_classify(train, {0, 1}, column({0.5f}), 0),
                  std::domain_error);
}

TEST_CASE("score seeding from a mask reproduces that mask at the first threshold") {
  Rng rng(31);
  ScoreTensor base = random_scores({{4, 6}, {6, 2}}, rng);
  ScoreTensor picker = random_scores({{4, 6}, {6, 2}}, rng);
  const double density = 0.25;
  const Supermask mask = threshold_topk(picker, density);

  const ScoreTensor seeded = scores_from_mask(mask, base);
  for (std::size_t l = 0; l < seeded.layers.size(); ++l) {
    for (std::int64_t i = 0; i < seeded.layers[l].size(); ++i) {
      const float b = base.layers[l].values()[static_cast<std::size_t>(i)];
      const float s = seeded.layers[l].values()[static_cast<std::size_t>(i)];
      if (mask.layers[l].test(i)) {
        CHECK(s == b + 1.0f);
      } else {
        CHECK(s == b);
      }
    }
  }
  CHECK(threshold_topk(seeded, density) == mask);
}

TEST_CASE("score seeding rejects mismatched shapes") {
  Rng rng(32);
  const ScoreTensor base = random_scores({{4, 6}}, rng);
  Supermask wrong_count;
  wrong_count.layers.emplace_back(4, 6);
  wrong_count.layers.emplace_back(6, 2);
  CHECK_THROWS_AS(scores_from_mask(wrong_count, base), ShapeError);
  Supermask wrong_shape;
  wrong_shape.layers.emplace_back(4, 5);
  CHECK_THROWS_AS(scores_from_mask(wrong_shape, base), ShapeError);
}

TEST_CASE("transfer selection with no earlier tasks is a clean no-op") {
  const ModelState model = init_signed_kaiming(
      {{5, 8, Activation::kRelu}, {8, 2, Activation::kIdentity}}, 3);
  SynthConfig cfg;
  cfg.n_tasks = 1;
  cfg.classes_per_task = 2;
  cfg.dim = 5;
  cfg.samples_per_class = 24;
  const SynthTasks synth = synth_gaussian_tasks(cfg, 4);
  const TaskData task =
      make_task_data(synth.dataset, synth.tasks[0], HeadRange{0, 2});

  MaskRegistry registry;
  Rng rng(5);
  const TransferDecision decision =
      select_transfer_task(model, registry, task, KktConfig{}, rng);
  CHECK_FALSE(decision.chosen_task.has_value());
  CHECK(decision.probe_accuracies.empty());
  CHECK(decision.random_baseline == 0.5);
}

TEST_CASE("transfer selection finds the task whose data the new task clones") {
  SynthConfig cfg;
  cfg.n_tasks = 3;
  cfg.classes_per_task = 2;
  cfg.dim = 8;
  cfg.samples_per_class = 24;
  cfg.separation = 3.0;
  cfg.clone_task = 3;
  cfg.clone_source = 1;
  const SynthTasks synth = synth_gaussian_tasks(cfg, 11);

  ModelState model = init_signed_kaiming(
      {{8, 16, Activation::kRelu}, {16, 6, Activation::kIdentity}}, 11);
  model.register_head(1, HeadRange{0, 2});
  model.register_head(2, HeadRange{2, 4});
  model.register_head(3, HeadRange{4, 6});

  TrainConfig train_cfg;
  train_cfg.mode = Mode::kMaskAndExclusive;
  train_cfg.mask_density = 0.3;
  train_cfg.mask_epochs = 3;
  train_cfg.weight_epochs = 3;
  train_cfg.batch_size = 8;
  train_cfg.lr = 0.01;
  train_cfg.seed = 5;

  MaskRegistry registry;
  for (int t = 0; t < 2; ++t) {
    const TaskData task = make_task_data(synth.dataset, synth.tasks[t],
                                         model.head(t + 1));
    learn_task(model, registry, task, train_cfg);
  }

  const TaskData probe_task =
      make_task_data(synth.dataset, synth.tasks[2], model.head(3));
  KktConfig kkt;
  kkt.sample_fraction = 0.5;
  kkt.knn_k = 3;

  SUBCASE("the clone source wins the probe") {
    Rng rng(derive_seed(train_cfg.seed, RngStream::kTransferProbe, 3));
    const TransferDecision decision =
        select_transfer_task(model, registry, probe_task, kkt, rng);
    REQUIRE(decision.probe_accuracies.size() == 2);
    CHECK(decision.probe_accuracies[0].first == 1);
    CHECK(decision.probe_accuracies[1].first == 2);
    REQUIRE(decision.chosen_task.has_value());
    CHECK(*decision.chosen_task == 1);
  }
  SUBCASE("an unreachable margin vetoes the choice but keeps the accuracies") {
    kkt.margin = 0.6;  // needs probe accuracy > 1.1, impossible
    Rng rng(derive_seed(train_cfg.seed, RngStream::kTransferProbe, 3));
    const TransferDecision decision =
        select_transfer_task(model, registry, probe_task, kkt, rng);
    CHECK_FALSE(decision.chosen_task.has_value());
    CHECK(decision.probe_accuracies.size() == 2);
  }
}

TEST_CASE("equal probe accuracies resolve to the earlier task") {
  // Two registry entries share the identical mask, so their probe features
  // and accuracies match exactly; the strict comparison keeps task 1.
  ModelState model = init_signed_kaiming(
      {{5, 12, Activation::kRelu}, {12, 6, Activation::kIdentity}}, 13);
  Rng mask_rng(14);
  ScoreTensor picker = random_scores(model.weight_shapes(), mask_rng);
  const Supermask shared = threshold_topk(picker, 0.5);

  MaskRegistry registry;
  registry.add(1, shared, free_mask(shared, {}));
  registry.add(2, shared, free_mask(shared, {&shared}));
  CHECK(registry.free(2).popcount() == 0);

  SynthConfig cfg;
  cfg.n_tasks = 1;
  cfg.classes_per_task = 2;
  cfg.dim = 5;
  cfg.samples_per_class = 40;
  cfg.separation = 8.0;  // trivially separable probing data
  const SynthTasks synth = synth_gaussian_tasks(cfg, 15);
  TaskData task = make_task_data(synth.dataset, synth.tasks[0], HeadRange{4, 6});
  task.task_id = 3;  // probe as if two tasks came before

  KktConfig kkt;
  kkt.sample_fraction = 0.5;
  kkt.knn_k = 3;
  Rng rng(16);
  const TransferDecision decision =
      select_transfer_task(model, registry, task, kkt, rng);
  REQUIRE(decision.probe_accuracies.size() == 2);
  CHECK(decision.probe_accuracies[0].second ==
        decision.probe_accuracies[1].second);
  REQUIRE(decision.chosen_task.has_value());
  CHECK(*decision.chosen_task == 1);
}

TEST_CASE("a probe pool below two samples is rejected") {
  ModelState model = init_signed_kaiming(
      {{3, 4, Activation::kRelu}, {4, 2, Activation::kIdentity}}, 17);
  MaskRegistry registry;
  const Supermask all = ones_mask_for(model);
  registry.add(1, all, free_mask(all, {}));

  Matrix inputs(4, 3, 0.0f);
  TaskData task;
  task.task_id = 2;
  task.inputs = &inputs;
  task.head = HeadRange{0, 2};
  task.train_indices = {0};
  task.train_slots = {0};

  Rng rng(18);
  CHECK_THROWS_AS(select_transfer_task(model, registry, task, KktConfig{}, rng),
                  std::domain_error);
}
