#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "exssnet/matrix.hpp"
#include "exssnet/rng.hpp"

namespace exssnet {

// Flat supervised dataset: one row per sample, one integer label per row.
// Labels are class ids in [0, class_count).
struct Dataset {
  Matrix inputs;
  std::vector<int> labels;
  int class_count = 0;

  std::int64_t size() const { return inputs.rows(); }
  void validate() const;
};

// IDX is the classic big-endian binary format for image/label arrays:
// magic 0x00000803 + dims (count, rows, cols) with uint8 pixels for images,
// magic 0x00000801 + dim (count) with uint8 labels. Pixels are scaled to
// [0, 1] on load by dividing by 255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Inverse of load_idx up to uint8 quantization: pixels are written as
// round(value * 255) clamped to [0, 255].
void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& data);

// (x - mean) / stddev applied to every input value.
Dataset normalize(const Dataset& data, double mean, double stddev);

// Row-wise concatenation; class_count becomes the max of the two.
Dataset concat(const Dataset& a, const Dataset& b);

// Which dataset rows belong to one task and which global classes it owns.
// Tasks are 1-based; `classes` is sorted ascending and maps onto the task's
// head slice in order (classes[i] -> slot i).
struct TaskSpec {
  int task_id = 0;
  std::vector<int> classes;
  std::vector<int> train_indices;
  std::vector<int> val_indices;
  std::vector<int> test_indices;
};

// Synthetic benchmark: each class is an isotropic unit-variance Gaussian blob
// around its own mean; class means are drawn uniformly from a hypercube whose
// half-width is `separation`, so larger separation makes tasks easier. One
// task can optionally be an exact relabeled copy of an earlier task's rows
// (same inputs, fresh class ids), which gives a known-transferable pair.
struct SynthConfig {
  int n_tasks = 5;
  int classes_per_task = 2;
  int dim = 16;
  int samples_per_class = 120;
  double separation = 3.0;
  int clone_task = 0;  // if > 0, this task's rows copy clone_source's rows
  int clone_source = 0;
  double val_fraction = 0.1;
  double test_fraction = 0.25;

  void validate() const;
};

struct SynthTasks {
  Dataset dataset;
  std::vector<TaskSpec> tasks;
};

SynthTasks synth_gaussian_tasks(const SynthConfig& config, std::uint64_t seed);

}  // namespace exssnet
