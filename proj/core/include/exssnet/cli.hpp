#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "exssnet/data.hpp"
#include "exssnet/harness.hpp"
#include "exssnet/kkt.hpp"
#include "exssnet/training.hpp"

namespace exssnet::cli {

// Flat key=value experiment configuration. Every key has a default except
// `dataset`, which must name a source ("mnist" or "synth"). Unknown keys are
// rejected so typos fail loudly instead of silently running defaults.
struct CliConfig {
  // Dataset.
  std::string dataset;                    // required: "mnist" | "synth"
  std::string mnist_dir = "data/mnist";   // holds mnist-images/-labels files
  bool normalize = false;
  double norm_mean = 0.1307;
  double norm_std = 0.3081;
  int n_tasks = 5;
  double val_fraction = 0.1;
  double test_fraction = 0.2;

  // Synthetic-dataset shape (used when dataset == "synth").
  int synth_classes_per_task = 2;
  int synth_dim = 16;
  int synth_samples_per_class = 120;
  double synth_separation = 3.0;
  int synth_clone_task = 0;
  int synth_clone_source = 0;

  // Model and training.
  std::vector<int> hidden = {300, 100};
  TrainConfig train;

  // Transfer module.
  bool kkt_enabled = false;
  KktConfig kkt;

  // Output plumbing.
  std::string out_dir = "out";
  std::string run_id = "run";

  // Sweep settings.
  std::vector<std::uint64_t> seeds = {1};
  std::string sweep_axis = "density";     // density | overlap | tasks
  std::vector<double> sweep_values;

  void validate() const;  // throws FormatError/domain errors on bad combos
};

// Reads `key = value` lines ('#' comments, blank lines ignored). Throws
// FormatError for unknown keys or unparsable values.
CliConfig parse_config_file(const std::string& path);

// Applies one `--set key=value` override (same key names as the file).
void apply_override(CliConfig& config, const std::string& assignment);

// Builds the dataset + task split the config describes.
struct PreparedData {
  Dataset dataset;
  std::vector<TaskSpec> tasks;
};
PreparedData prepare_data(const CliConfig& config);

std::string mode_name(Mode mode);

// Subcommands; each returns the process exit code: 0 success, 1 runtime
// failure, 2 invalid configuration/input.
int cmd_run(const CliConfig& config);
int cmd_sweep(const CliConfig& config);
int cmd_report(const std::string& checkpoint_path, const std::string& out_dir);
int cmd_eval(const CliConfig& config, const std::string& checkpoint_path);

// Worker cap for sweeps: EXSS_THREADS when set (min 1), else the hardware
// concurrency.
int worker_count();

// One metrics.csv data row; schema: run_id,mode,seed,task_learned,task_eval,accuracy
struct MetricsRow {
  std::string run_id;
  std::string mode;
  std::uint64_t seed = 0;
  int task_learned = 0;
  int task_eval = 0;
  double accuracy = 0.0;
};

// One summary.csv row; schema: run_id,mode,seed,avg_accuracy,forgetting,mean_sparse_overlap
struct SummaryRow {
  std::string run_id;
  std::string mode;
  std::uint64_t seed = 0;
  double avg_accuracy = 0.0;
  double forgetting = 0.0;
  double mean_sparse_overlap = 0.0;
};

std::vector<MetricsRow> metrics_rows(const std::string& run_id,
                                     const std::string& mode,
                                     std::uint64_t seed,
                                     const RunReport& report);
SummaryRow summary_row(const std::string& run_id, const std::string& mode,
                       std::uint64_t seed, const RunReport& report);

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows);
void write_summary_csv(const std::string& path,
                       const std::vector<SummaryRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);
std::vector<SummaryRow> read_summary_csv(const std::string& path);

// A named polyline for the sweep chart: one (x, y) point per axis value.
struct ChartSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

// Dependency-free SVG line chart (y is clamped to [0, 1] accuracy space).
std::string render_sweep_svg(const std::string& x_label,
                             const std::vector<ChartSeries>& series);

}  // namespace exssnet::cli
