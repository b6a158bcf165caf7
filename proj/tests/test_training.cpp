#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "exssnet/data.hpp"
#include "exssnet/harness.hpp"
#include "exssnet/masking.hpp"
#include "exssnet/network.hpp"
#include "exssnet/training.hpp"
#include "test_support.hpp"

using namespace exssnet;
using test_support::random_matrix;
using test_support::random_supermask;
using test_support::same_float_bits;
using test_support::weight_bits;

namespace {

// One small real task (two Gaussian blobs) plus a matching model, for tests
// that need an end-to-end trainable setup. Members are filled in place so the
// TaskData's dataset pointer stays valid.
struct TinyFixture {
  SynthTasks synth;
  ModelState model;
  TaskData task;
};

void init_tiny(TinyFixture& fx, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_tasks = 1;
  cfg.classes_per_task = 2;
  cfg.dim = 6;
  cfg.samples_per_class = 24;
  cfg.separation = 3.0;
  fx.synth = synth_gaussian_tasks(cfg, seed);
  fx.model = init_signed_kaiming(
      {{6, 8, Activation::kRelu}, {8, 2, Activation::kIdentity}}, seed);
  fx.model.register_head(1, HeadRange{0, 2});
  fx.task = make_task_data(fx.synth.dataset, fx.synth.tasks[0], HeadRange{0, 2});
}

TrainConfig tiny_config() {
  TrainConfig config;
  config.mask_density = 0.4;
  config.mask_epochs = 2;
  config.weight_epochs = 2;
  config.lr = 0.01;
  config.score_lr = 0.1;
  config.batch_size = 8;
  config.seed = 7;
  return config;
}

// Double-precision softmax cross entropy over the head slice, the oracle the
// library's float/double mix is checked against.
double reference_ce(const Matrix& logits, HeadRange head,
                    const std::vector<int>& labels) {
  double total = 0.0;
  for (int r = 0; r < logits.rows(); ++r) {
    double max_logit = logits.at(r, head.begin);
    for (int c = head.begin + 1; c < head.end; ++c) {
      max_logit = std::max(max_logit, static_cast<double>(logits.at(r, c)));
    }
    double denom = 0.0;
    for (int c = head.begin; c < head.end; ++c) {
      denom += std::exp(static_cast<double>(logits.at(r, c)) - max_logit);
    }
    const int target = head.begin + labels[static_cast<std::size_t>(r)];
    total += std::log(denom) -
             (static_cast<double>(logits.at(r, target)) - max_logit);
  }
  return total / static_cast<double>(logits.rows());
}

}  // namespace

TEST_CASE("cross entropy on equal two-way logits: loss ln 2, gradient ±1/2") {
  Matrix logits(1, 2, 0.0f);
  const LossGrad lg = cross_entropy_grad(logits, HeadRange{0, 2}, {0});
  CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(lg.grad.at(0, 0) == -0.5f);
  CHECK(lg.grad.at(0, 1) == 0.5f);
}

TEST_CASE("cross entropy matches the double reference and zeroes off-slice") {
  Rng rng(61);
  Matrix logits = random_matrix(3, 6, rng, 2.0f);
  const HeadRange head{2, 5};
  const std::vector<int> labels = {0, 2, 1};
  const LossGrad lg = cross_entropy_grad(logits, head, labels);

  CHECK(lg.loss == doctest::Approx(reference_ce(logits, head, labels))
                       .epsilon(1e-6));

  for (int r = 0; r < logits.rows(); ++r) {
    for (int c = 0; c < logits.cols(); ++c) {
      if (c < head.begin || c >= head.end) {
        CHECK(same_float_bits(lg.grad.at(r, c), 0.0f));
      }
    }
    // Gradient rows sum to zero inside the slice (softmax minus one-hot).
    double row_sum = 0.0;
    for (int c = head.begin; c < head.end; ++c) row_sum += lg.grad.at(r, c);
    CHECK(std::abs(row_sum) < 1e-7);
  }

  // Central finite differences on the double reference, dividing by the
  // perturbation the float logits actually received.
  const double h = 1e-4;
  for (int r = 0; r < logits.rows(); ++r) {
    for (int c = head.begin; c < head.end; ++c) {
      const float saved = logits.at(r, c);
      const auto up_v = static_cast<float>(saved + h);
      const auto down_v = static_cast<float>(saved - h);
      logits.at(r, c) = up_v;
      const double up = reference_ce(logits, head, labels);
      logits.at(r, c) = down_v;
      const double down = reference_ce(logits, head, labels);
      logits.at(r, c) = saved;
      const double numeric = (up - down) / (static_cast<double>(up_v) -
                                            static_cast<double>(down_v));
      CHECK(std::abs(static_cast<double>(lg.grad.at(r, c)) - numeric) < 1e-5);
    }
  }
}

TEST_CASE("cross entropy rejects malformed inputs") {
  Matrix logits(2, 4, 0.0f);
  CHECK_THROWS_AS(cross_entropy_grad(logits, HeadRange{0, 2}, {0}), ShapeError);
  CHECK_THROWS_AS(cross_entropy_grad(logits, HeadRange{0, 9}, {0, 1}),
                  ShapeError);
  CHECK_THROWS_AS(cross_entropy_grad(logits, HeadRange{0, 2}, {0, 2}),
                  std::out_of_range);
  CHECK_THROWS_AS(cross_entropy_grad(Matrix(0, 4), HeadRange{0, 2}, {}),
                  std::domain_error);
  logits.at(0, 1) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(cross_entropy_grad(logits, HeadRange{0, 2}, {0, 1}),
                  NumericError);
}

TEST_CASE("cosine decay: full value at step 0, half way at the midpoint, zero at the end") {
  CHECK(cosine_lr(2.0, 0, 10) == 2.0);
  CHECK(cosine_lr(2.0, 5, 10) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_lr(2.0, 10, 10) == 0.0);
  CHECK_THROWS_AS(cosine_lr(1.0, 0, 0), std::domain_error);
  CHECK_THROWS_AS(cosine_lr(1.0, -1, 10), std::domain_error);
  CHECK_THROWS_AS(cosine_lr(1.0, 11, 10), std::domain_error);
}

TEST_CASE("bias-corrected moment steps move by ~lr on a constant gradient") {
  OptimizerState state = OptimizerState::for_shapes({{1, 1}});
  std::vector<Matrix> params;
  params.emplace_back(1, 1, 1.0f);
  std::vector<Matrix> grads;
  grads.emplace_back(1, 1, 1.0f);

  adam_update(state, params, grads, 0.1);
  CHECK(state.step == 1);
  // First step with bias correction: mhat = vhat = 1, so the move is exactly
  // lr / (1 + eps) up to float rounding.
  CHECK(params[0].at(0, 0) == doctest::Approx(0.9).epsilon(1e-4));

  adam_update(state, params, grads, 0.1);
  CHECK(state.step == 2);
  CHECK(params[0].at(0, 0) == doctest::Approx(0.8).epsilon(1e-3));

  std::vector<Matrix> wrong;
  wrong.emplace_back(2, 1, 0.0f);
  CHECK_THROWS_AS(adam_update(state, params, wrong, 0.1), ShapeError);
}

TEST_CASE("optimizer state resets to zero moments") {
  OptimizerState state = OptimizerState::for_shapes({{2, 2}});
  std::vector<Matrix> params;
  params.emplace_back(2, 2, 1.0f);
  std::vector<Matrix> grads;
  grads.emplace_back(2, 2, 0.5f);
  adam_update(state, params, grads, 0.1);
  CHECK(state.step == 1);
  state.reset();
  CHECK(state.step == 0);
  for (float v : state.first_moment[0].values()) CHECK(v == 0.0f);
  for (float v : state.second_moment[0].values()) CHECK(v == 0.0f);
}

TEST_CASE("training configuration bounds are enforced") {
  TrainConfig config = tiny_config();
  CHECK_NOTHROW(config.validate());
  config.mask_density = 0.0;
  CHECK_THROWS_AS(config.validate(), std::domain_error);
  config = tiny_config();
  config.mask_epochs = -1;
  CHECK_THROWS_AS(config.validate(), std::domain_error);
  config = tiny_config();
  config.lr = 0.0;
  CHECK_THROWS_AS(config.validate(), std::domain_error);
  config = tiny_config();
  config.batch_size = 0;
  CHECK_THROWS_AS(config.validate(), std::domain_error);
  config = tiny_config();
  config.forced_overlap = 1.5;
  CHECK_THROWS_AS(config.validate(), std::domain_error);
}

TEST_CASE("mask learning is deterministic and respects a zero-epoch budget") {
  TinyFixture fx;
  init_tiny(fx, 3);
  TrainConfig config = tiny_config();

  Rng score_rng(derive_seed(config.seed, RngStream::kScoreInit, 1));
  const ScoreTensor init = random_scores(fx.model.weight_shapes(), score_rng);

  ScoreTensor copy_a = init;
  ScoreTensor copy_b = init;
  const Supermask mask_a = learn_supermask(fx.model, fx.task, config, std::move(copy_a));
  const Supermask mask_b = learn_supermask(fx.model, fx.task, config, std::move(copy_b));
  CHECK(mask_a == mask_b);

  // Zero epochs: the result is exactly the threshold of the initial scores.
  config.mask_epochs = 0;
  ScoreTensor copy_c = init;
  const Supermask mask_c = learn_supermask(fx.model, fx.task, config, std::move(copy_c));
  CHECK(mask_c == threshold_topk(init, config.mask_density));
}

TEST_CASE("mask learning never modifies the weights") {
  TinyFixture fx;
  init_tiny(fx, 4);
  const auto before = weight_bits(fx.model);
  ScoreTensor init;
  Rng score_rng(11);
  init = random_scores(fx.model.weight_shapes(), score_rng);
  learn_supermask(fx.model, fx.task, tiny_config(), std::move(init));
  CHECK(weight_bits(fx.model) == before);
}

TEST_CASE("exclusive training touches only the trainable subset, bit for bit") {
  TinyFixture fx;
  init_tiny(fx, 5);
  Rng rng(71);
  const Supermask previous = random_supermask(fx.model.weight_shapes(), rng);
  const Supermask task_mask = random_supermask(fx.model.weight_shapes(), rng);
  const Supermask trainable = free_mask(task_mask, {&previous});
  REQUIRE(trainable.popcount() > 0);

  const auto before = weight_bits(fx.model);
  train_exclusive_weights(fx.model, task_mask, trainable, fx.task,
                          tiny_config());
  const auto after = weight_bits(fx.model);

  std::size_t flat = 0;
  std::int64_t changed = 0;
  for (std::size_t l = 0; l < fx.model.weights.size(); ++l) {
    for (std::int64_t i = 0; i < fx.model.weights[l].size(); ++i, ++flat) {
      if (!trainable.layers[l].test(i)) {
        CHECK(before[flat] == after[flat]);
      } else if (before[flat] != after[flat]) {
        ++changed;
      }
    }
  }
  CHECK(changed > 0);  // the phase actually trained something
}

TEST_CASE("exclusive training demands the trainable set lie inside the mask") {
  TinyFixture fx;
  init_tiny(fx, 6);
  Supermask task_mask = ones_mask_for(fx.model);
  task_mask.layers[0].set(0, false);
  const Supermask trainable = ones_mask_for(fx.model);
  CHECK_THROWS_AS(train_exclusive_weights(fx.model, task_mask, trainable,
                                          fx.task, tiny_config()),
                  StateError);
}

TEST_CASE("an empty trainable set makes the weight phase a strict no-op") {
  TinyFixture fx;
  init_tiny(fx, 7);
  const Supermask task_mask = ones_mask_for(fx.model);
  const Supermask none = zeros_mask_for(fx.model);
  const auto before = weight_bits(fx.model);
  double final_loss = -123.0;
  std::vector<double> curve;
  train_exclusive_weights(fx.model, task_mask, none, fx.task, tiny_config(),
                          &curve, &final_loss);
  CHECK(weight_bits(fx.model) == before);
  CHECK(final_loss == -123.0);  // untouched sentinel
  CHECK(curve.empty());
}

TEST_CASE("overlapping training updates exactly the task mask positions") {
  TinyFixture fx;
  init_tiny(fx, 8);
  Rng rng(73);
  const Supermask task_mask = random_supermask(fx.model.weight_shapes(), rng);
  const auto before = weight_bits(fx.model);
  train_overlapping_weights(fx.model, task_mask, fx.task, tiny_config());
  const auto after = weight_bits(fx.model);

  std::size_t flat = 0;
  std::int64_t changed = 0;
  for (std::size_t l = 0; l < fx.model.weights.size(); ++l) {
    for (std::int64_t i = 0; i < fx.model.weights[l].size(); ++i, ++flat) {
      if (!task_mask.layers[l].test(i)) {
        CHECK(before[flat] == after[flat]);
      } else if (before[flat] != after[flat]) {
        ++changed;
      }
    }
  }
  CHECK(changed > 0);
}

TEST_CASE("score pinning steers exactly the requested overlap, hand cases") {
  const double density = 0.4;  // keep 4 of 10
  Supermask used;
  used.layers.emplace_back(1, 10);
  for (std::int64_t i = 0; i < 5; ++i) used.layers[0].set(i, true);

  const auto pinned_mask = [&](double fraction, std::uint64_t seed) {
    Rng score_rng(seed);
    ScoreTensor scores = random_scores({{1, 10}}, score_rng);
    Rng pin_rng(seed + 100);
    pin_scores_for_overlap(scores, used, density, fraction, pin_rng);
    return threshold_topk(scores, density);
  };

  SUBCASE("half the keep budget lands on used territory") {
    const Supermask mask = pinned_mask(0.5, 1);
    CHECK(mask.popcount() == 4);
    CHECK(mask_and(mask, used).popcount() == 2);
    CHECK(mask_and_not(mask, used).popcount() == 2);
  }
  SUBCASE("full overlap puts the whole budget on used territory") {
    const Supermask mask = pinned_mask(1.0, 2);
    CHECK(mask_and(mask, used).popcount() == 4);
  }
  SUBCASE("zero overlap avoids used territory entirely") {
    const Supermask mask = pinned_mask(0.0, 3);
    CHECK(mask_and(mask, used).popcount() == 0);
  }
  SUBCASE("requests beyond the used capacity are clamped") {
    Supermask small_used;
    small_used.layers.emplace_back(1, 10);
    small_used.layers[0].set(0, true);  // only one used position exists
    Rng score_rng(4);
    ScoreTensor scores = random_scores({{1, 10}}, score_rng);
    Rng pin_rng(5);
    pin_scores_for_overlap(scores, small_used, density, 1.0, pin_rng);
    const Supermask mask = threshold_topk(scores, density);
    CHECK(mask.popcount() == 4);
    CHECK(mask_and(mask, small_used).popcount() == 1);
  }
  SUBCASE("fractions outside [0, 1] are rejected") {
    Rng score_rng(6);
    ScoreTensor scores = random_scores({{1, 10}}, score_rng);
    Rng pin_rng(7);
    CHECK_THROWS_AS(
        pin_scores_for_overlap(scores, used, density, -0.1, pin_rng),
        std::domain_error);
    CHECK_THROWS_AS(
        pin_scores_for_overlap(scores, used, density, 1.1, pin_rng),
        std::domain_error);
  }
}

TEST_CASE("a full task pass registers the mask and true exclusive part") {
  TinyFixture fx;
  init_tiny(fx, 9);
  MaskRegistry registry;
  TrainConfig config = tiny_config();
  config.mode = Mode::kMaskAndExclusive;

  const TaskOutcome outcome = learn_task(fx.model, registry, fx.task, config);
  CHECK(outcome.task_id == 1);
  CHECK(registry.task_count() == 1);
  CHECK(registry.task_mask(1) == outcome.task_mask);
  CHECK(registry.free(1) == outcome.task_mask);  // first task: all exclusive
  CHECK(outcome.overlap.overlap_fraction == 0.0);
  CHECK(outcome.mask_seconds >= 0.0);

  CHECK_THROWS_AS(learn_task(fx.model, registry, fx.task, config), StateError);
}

TEST_CASE("mask-only mode never touches weights across a whole task") {
  TinyFixture fx;
  init_tiny(fx, 10);
  MaskRegistry registry;
  TrainConfig config = tiny_config();
  config.mode = Mode::kMaskOnly;
  const auto before = weight_bits(fx.model);
  learn_task(fx.model, registry, fx.task, config);
  CHECK(weight_bits(fx.model) == before);
}

TEST_CASE("forcing the exclusive set empty skips weight updates but stores the real mask") {
  TinyFixture fx;
  init_tiny(fx, 11);
  MaskRegistry registry;
  TrainConfig config = tiny_config();
  config.mode = Mode::kMaskAndExclusive;
  config.force_empty_free = true;
  const auto before = weight_bits(fx.model);
  const TaskOutcome outcome = learn_task(fx.model, registry, fx.task, config);
  CHECK(weight_bits(fx.model) == before);
  // The registry still records the genuine exclusive part, not the empty gate.
  CHECK(registry.free(1) == outcome.task_mask);
  CHECK(registry.free(1).popcount() > 0);
}
