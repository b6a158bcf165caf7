#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "exssnet/data.hpp"
#include "exssnet/kkt.hpp"
#include "exssnet/masking.hpp"
#include "exssnet/network.hpp"
#include "exssnet/training.hpp"

namespace exssnet {

// Lower-triangular accuracy record: cell (learned, evaluated) holds the
// accuracy on task `evaluated` measured right after task `learned` finished,
// for evaluated <= learned. Indices are 1-based task ids.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(int task_count);

  int task_count() const { return n_; }
  void set(int learned, int evaluated, double accuracy);
  double at(int learned, int evaluated) const;  // StateError when unset
  bool is_set(int learned, int evaluated) const;
  bool row_complete(int learned) const;

  friend bool operator==(const AccuracyMatrix& a, const AccuracyMatrix& b) {
    return a.n_ == b.n_ && a.cells_ == b.cells_ && a.filled_ == b.filled_;
  }

 private:
  int n_ = 0;
  std::vector<double> cells_;
  std::vector<std::uint8_t> filled_;
  std::size_t index(int learned, int evaluated) const;
};

// Mean final-row accuracy: (1/N) * sum_t acc(N, t).
double average_accuracy(const AccuracyMatrix& matrix);

// Mean over t < N of (best accuracy task t ever had) - (its final accuracy).
// Needs at least two tasks; the final task has no room to be forgotten yet.
double forgetting_metric(const AccuracyMatrix& matrix);

// Partition a flat dataset into tasks with disjoint label sets: classes are
// assigned to tasks in ascending order, class_count must divide evenly. Each
// class's rows are shuffled once (seeded) and carved into train/val/test.
struct SplitOptions {
  double val_fraction = 0.1;
  double test_fraction = 0.2;
};

std::vector<TaskSpec> split_into_tasks(const Dataset& data, int n_tasks,
                                       std::uint64_t seed,
                                       const SplitOptions& options = {});

// Builds the training-facing view of one task: dataset rows plus the mapping
// from its global classes onto its head slice.
TaskData make_task_data(const Dataset& data, const TaskSpec& spec,
                        HeadRange head);

// Accuracy of task `spec` on its test split under `mask`.
double evaluate_task(const ModelState& model, const Supermask& mask,
                     const Dataset& data, const TaskSpec& spec);

// Fills row `learned` of the matrix: evaluates every task <= learned using
// that task's own stored mask (task identity is known at test time).
void evaluate_row(const ModelState& model, const MaskRegistry& registry,
                  const Dataset& data, const std::vector<TaskSpec>& tasks,
                  int learned, AccuracyMatrix& matrix);

struct TaskPhaseSeconds {
  int task_id = 0;
  double mask_phase = 0.0;
  double weight_phase = 0.0;
  double eval = 0.0;
};

struct ModelTopology {
  std::vector<int> hidden = {300, 100};
  Activation hidden_activation = Activation::kRelu;
};

// Everything a full continual run produces. Metric fields are pure functions
// of the accuracy matrix and overlaps; wall-clock lives only in phase_seconds
// so reports can be compared across runs without timing noise.
struct RunReport {
  AccuracyMatrix accuracy;
  double avg_accuracy = 0.0;
  double forgetting = 0.0;
  std::vector<OverlapReport> overlaps;
  std::vector<std::optional<TransferDecision>> transfers;  // one per task
  std::vector<std::vector<double>> mask_val_curves;
  std::vector<std::vector<double>> weight_val_curves;
  std::vector<TaskPhaseSeconds> phase_seconds;

  double mean_sparse_overlap() const;

  // Bit-for-bit equality of everything except wall-clock timings.
  bool same_results(const RunReport& other) const;
};

// Runs the full pipeline: init model from config.seed, register heads for all
// tasks (classes in task order), learn tasks sequentially, evaluate the
// matrix row after each task. The final model/registry are copied out when
// the caller wants to checkpoint or inspect them.
RunReport run_continual(const Dataset& data, const std::vector<TaskSpec>& tasks,
                        const ModelTopology& topology, const TrainConfig& config,
                        const KktConfig* kkt = nullptr,
                        ModelState* final_model = nullptr,
                        MaskRegistry* final_registry = nullptr);

}  // namespace exssnet
