#include "exssnet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "exssnet/errors.hpp"

namespace exssnet {

AccuracyMatrix::AccuracyMatrix(int task_count) : n_(task_count) {
  if (task_count < 1) throw std::domain_error("need at least one task");
  const auto cells = static_cast<std::size_t>(task_count) * task_count;
  cells_.assign(cells, 0.0);
  filled_.assign(cells, 0);
}

std::size_t AccuracyMatrix::index(int learned, int evaluated) const {
  if (learned < 1 || learned > n_ || evaluated < 1 || evaluated > learned) {
    throw std::out_of_range("accuracy cell (" + std::to_string(learned) + ", " +
                            std::to_string(evaluated) +
                            ") outside the lower triangle");
  }
  return static_cast<std::size_t>(learned - 1) * n_ + (evaluated - 1);
}

void AccuracyMatrix::set(int learned, int evaluated, double accuracy) {
  if (!(accuracy >= 0.0) || accuracy > 1.0) {
    throw std::domain_error("accuracy must be in [0, 1]");
  }
  const auto i = index(learned, evaluated);
  cells_[i] = accuracy;
  filled_[i] = 1;
}

double AccuracyMatrix::at(int learned, int evaluated) const {
  const auto i = index(learned, evaluated);
  if (!filled_[i]) {
    throw StateError("accuracy cell (" + std::to_string(learned) + ", " +
                     std::to_string(evaluated) + ") was never measured");
  }
  return cells_[i];
}

bool AccuracyMatrix::is_set(int learned, int evaluated) const {
  return filled_[index(learned, evaluated)] != 0;
}

bool AccuracyMatrix::row_complete(int learned) const {
  for (int t = 1; t <= learned; ++t) {
    if (!is_set(learned, t)) return false;
  }
  return true;
}

double average_accuracy(const AccuracyMatrix& matrix) {
  const int n = matrix.task_count();
  double sum = 0.0;
  for (int t = 1; t <= n; ++t) sum += matrix.at(n, t);
  return sum / static_cast<double>(n);
}

double forgetting_metric(const AccuracyMatrix& matrix) {
  const int n = matrix.task_count();
  if (n < 2) {
    throw std::domain_error("forgetting needs at least two tasks");
  }
  double sum = 0.0;
  for (int t = 1; t <= n - 1; ++t) {
    double best = matrix.at(t, t);
    for (int learned = t; learned <= n - 1; ++learned) {
      best = std::max(best, matrix.at(learned, t));
    }
    sum += best - matrix.at(n, t);
  }
  return sum / static_cast<double>(n - 1);
}

std::vector<TaskSpec> split_into_tasks(const Dataset& data, int n_tasks,
                                       std::uint64_t seed,
                                       const SplitOptions& options) {
  data.validate();
  if (n_tasks < 1) throw std::domain_error("need at least one task");
  if (data.class_count % n_tasks != 0) {
    throw std::domain_error("class count " + std::to_string(data.class_count) +
                            " does not divide into " + std::to_string(n_tasks) +
                            " tasks");
  }
  if (!(options.val_fraction >= 0.0) || !(options.test_fraction > 0.0) ||
      options.val_fraction + options.test_fraction >= 1.0) {
    throw std::domain_error("val/test fractions must leave training data");
  }
  const int per_task = data.class_count / n_tasks;
  if (per_task < 2) {
    throw std::domain_error("each task needs at least two classes");
  }

  // Rows of each class, in dataset order.
  std::vector<std::vector<int>> class_rows(static_cast<std::size_t>(data.class_count));
  for (int r = 0; r < data.inputs.rows(); ++r) {
    class_rows[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(r)])]
        .push_back(r);
  }

  Rng rng(derive_seed(seed, RngStream::kTaskSplit));
  std::vector<TaskSpec> tasks(static_cast<std::size_t>(n_tasks));
  for (int t = 0; t < n_tasks; ++t) {
    TaskSpec& spec = tasks[static_cast<std::size_t>(t)];
    spec.task_id = t + 1;
    for (int c = 0; c < per_task; ++c) {
      const int cls = t * per_task + c;
      spec.classes.push_back(cls);
      auto rows = class_rows[static_cast<std::size_t>(cls)];
      if (rows.empty()) {
        throw std::domain_error("class " + std::to_string(cls) + " has no rows");
      }
      rng.shuffle(rows);
      const auto n = static_cast<std::int64_t>(rows.size());
      const auto test_n = std::max<std::int64_t>(
          1, std::llround(options.test_fraction * static_cast<double>(n)));
      const auto val_n =
          std::llround(options.val_fraction * static_cast<double>(n));
      if (test_n + val_n >= n) {
        throw std::domain_error("class " + std::to_string(cls) +
                                " too small for the requested split");
      }
      for (std::int64_t i = 0; i < n; ++i) {
        const int row = rows[static_cast<std::size_t>(i)];
        if (i < test_n) {
          spec.test_indices.push_back(row);
        } else if (i < test_n + val_n) {
          spec.val_indices.push_back(row);
        } else {
          spec.train_indices.push_back(row);
        }
      }
    }
    std::sort(spec.test_indices.begin(), spec.test_indices.end());
    std::sort(spec.val_indices.begin(), spec.val_indices.end());
    std::sort(spec.train_indices.begin(), spec.train_indices.end());
  }
  return tasks;
}

TaskData make_task_data(const Dataset& data, const TaskSpec& spec,
                        HeadRange head) {
  if (static_cast<int>(spec.classes.size()) != head.width()) {
    throw ShapeError("head width does not match the task's class count");
  }
  TaskData task;
  task.task_id = spec.task_id;
  task.head = head;
  task.inputs = &data.inputs;

  const auto slot_of = [&](int row) {
    const int label = data.labels[static_cast<std::size_t>(row)];
    const auto it =
        std::find(spec.classes.begin(), spec.classes.end(), label);
    if (it == spec.classes.end()) {
      throw StateError("row " + std::to_string(row) +
                       " does not belong to task " + std::to_string(spec.task_id));
    }
    return static_cast<int>(it - spec.classes.begin());
  };
  for (int row : spec.train_indices) {
    task.train_indices.push_back(row);
    task.train_slots.push_back(slot_of(row));
  }
  for (int row : spec.val_indices) {
    task.val_indices.push_back(row);
    task.val_slots.push_back(slot_of(row));
  }
  task.validate();
  return task;
}

double evaluate_task(const ModelState& model, const Supermask& mask,
                     const Dataset& data, const TaskSpec& spec) {
  const HeadRange head = model.head(spec.task_id);
  std::vector<int> slots;
  slots.reserve(spec.test_indices.size());
  for (int row : spec.test_indices) {
    const int label = data.labels[static_cast<std::size_t>(row)];
    const auto it = std::find(spec.classes.begin(), spec.classes.end(), label);
    if (it == spec.classes.end()) {
      throw StateError("test row outside the task's classes");
    }
    slots.push_back(static_cast<int>(it - spec.classes.begin()));
  }
  return slot_accuracy(model, mask, data.inputs, spec.test_indices, slots,
                       head);
}

void evaluate_row(const ModelState& model, const MaskRegistry& registry,
                  const Dataset& data, const std::vector<TaskSpec>& tasks,
                  int learned, AccuracyMatrix& matrix) {
  for (const TaskSpec& spec : tasks) {
    if (spec.task_id > learned) continue;
    matrix.set(learned, spec.task_id,
               evaluate_task(model, registry.task_mask(spec.task_id), data,
                             spec));
  }
}

double RunReport::mean_sparse_overlap() const {
  if (overlaps.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& o : overlaps) sum += o.overlap_fraction;
  return sum / static_cast<double>(overlaps.size());
}

bool RunReport::same_results(const RunReport& other) const {
  if (!(accuracy == other.accuracy)) return false;
  if (avg_accuracy != other.avg_accuracy) return false;
  if (forgetting != other.forgetting) return false;
  if (overlaps.size() != other.overlaps.size()) return false;
  for (std::size_t i = 0; i < overlaps.size(); ++i) {
    if (overlaps[i].task_id != other.overlaps[i].task_id ||
        overlaps[i].mask_bits != other.overlaps[i].mask_bits ||
        overlaps[i].free_bits != other.overlaps[i].free_bits ||
        overlaps[i].overlap_fraction != other.overlaps[i].overlap_fraction) {
      return false;
    }
  }
  if (mask_val_curves != other.mask_val_curves) return false;
  if (weight_val_curves != other.weight_val_curves) return false;
  if (transfers.size() != other.transfers.size()) return false;
  for (std::size_t i = 0; i < transfers.size(); ++i) {
    const auto& a = transfers[i];
    const auto& b = other.transfers[i];
    if (a.has_value() != b.has_value()) return false;
    if (a && (a->chosen_task != b->chosen_task ||
              a->probe_accuracies != b->probe_accuracies ||
              a->random_baseline != b->random_baseline)) {
      return false;
    }
  }
  return true;
}

RunReport run_continual(const Dataset& data, const std::vector<TaskSpec>& tasks,
                        const ModelTopology& topology, const TrainConfig& config,
                        const KktConfig* kkt, ModelState* final_model,
                        MaskRegistry* final_registry) {
  config.validate();
  data.validate();
  if (tasks.empty()) throw std::domain_error("no tasks to run");
  if (kkt) kkt->validate();

  // Output layer holds every task's classes, in task order.
  int total_classes = 0;
  for (const auto& t : tasks) total_classes += static_cast<int>(t.classes.size());

  std::vector<LayerSpec> specs;
  int fan_in = data.inputs.cols();
  for (int width : topology.hidden) {
    specs.push_back({fan_in, width, topology.hidden_activation});
    fan_in = width;
  }
  specs.push_back({fan_in, total_classes, Activation::kIdentity});

  ModelState model = init_signed_kaiming(specs, config.seed);
  int next_slot = 0;
  for (const auto& t : tasks) {
    const int width = static_cast<int>(t.classes.size());
    model.register_head(t.task_id, HeadRange{next_slot, next_slot + width});
    next_slot += width;
  }

  RunReport report;
  report.accuracy = AccuracyMatrix(static_cast<int>(tasks.size()));
  MaskRegistry registry;

  using Clock = std::chrono::steady_clock;
  const auto seconds_since = [](Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
  };

  for (const TaskSpec& spec : tasks) {
    TaskData task = make_task_data(data, spec, model.head(spec.task_id));

    TaskPhaseSeconds times;
    times.task_id = spec.task_id;

    TaskOutcome outcome = learn_task(model, registry, task, config, kkt);
    times.mask_phase = outcome.mask_seconds;
    times.weight_phase = outcome.weight_seconds;

    const auto eval_start = Clock::now();
    evaluate_row(model, registry, data, tasks, spec.task_id, report.accuracy);
    times.eval = seconds_since(eval_start);

    report.overlaps.push_back(outcome.overlap);
    report.transfers.push_back(outcome.transfer);
    report.mask_val_curves.push_back(std::move(outcome.mask_val_curve));
    report.weight_val_curves.push_back(std::move(outcome.weight_val_curve));
    report.phase_seconds.push_back(times);
  }

  report.avg_accuracy = average_accuracy(report.accuracy);
  report.forgetting = tasks.size() >= 2 ? forgetting_metric(report.accuracy) : 0.0;
  if (final_model) *final_model = std::move(model);
  if (final_registry) *final_registry = std::move(registry);
  return report;
}

}  // namespace exssnet
