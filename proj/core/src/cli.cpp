#include "exssnet/cli.hpp"

#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "exssnet/errors.hpp"
#include "exssnet/persistence.hpp"

namespace exssnet::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = 0;
  std::size_t end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "1") return true;
  if (value == "false" || value == "off" || value == "0") return false;
  throw FormatError("key '" + key + "': cannot parse '" + value + "' as bool");
}

double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0') {
    throw FormatError("key '" + key + "': cannot parse '" + value +
                      "' as number");
  }
  return v;
}

long long parse_int(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0') {
    throw FormatError("key '" + key + "': cannot parse '" + value +
                      "' as integer");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0') {
    throw FormatError("key '" + key + "': cannot parse '" + value +
                      "' as unsigned integer");
  }
  return v;
}

std::vector<std::string> split_csv(const std::string& value) {
  std::vector<std::string> parts;
  std::string item;
  std::stringstream stream(value);
  while (std::getline(stream, item, ',')) parts.push_back(trim(item));
  return parts;
}

Mode parse_mode(const std::string& value) {
  if (value == "supsup") return Mode::kMaskOnly;
  if (value == "ssnet") return Mode::kMaskAndAll;
  if (value == "exssnet") return Mode::kMaskAndExclusive;
  throw FormatError("mode must be supsup, ssnet, or exssnet, got '" + value +
                    "'");
}

std::string fmt_double(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.17g", v);
  return buffer;
}

std::string fmt_value(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%g", v);
  return buffer;
}

std::string timestamp_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  char buffer[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buffer, sizeof buffer, "%Y-%m-%d %H:%M:%S UTC", &tm_utc);
  return buffer;
}

void apply_key(CliConfig& c, const std::string& key, const std::string& value) {
  if (key == "dataset") {
    c.dataset = value;
  } else if (key == "mnist_dir") {
    c.mnist_dir = value;
  } else if (key == "normalize") {
    c.normalize = parse_bool(key, value);
  } else if (key == "norm_mean") {
    c.norm_mean = parse_double(key, value);
  } else if (key == "norm_std") {
    c.norm_std = parse_double(key, value);
  } else if (key == "n_tasks") {
    c.n_tasks = static_cast<int>(parse_int(key, value));
  } else if (key == "val_fraction") {
    c.val_fraction = parse_double(key, value);
  } else if (key == "test_fraction") {
    c.test_fraction = parse_double(key, value);
  } else if (key == "synth_classes_per_task") {
    c.synth_classes_per_task = static_cast<int>(parse_int(key, value));
  } else if (key == "synth_dim") {
    c.synth_dim = static_cast<int>(parse_int(key, value));
  } else if (key == "synth_samples_per_class") {
    c.synth_samples_per_class = static_cast<int>(parse_int(key, value));
  } else if (key == "synth_separation") {
    c.synth_separation = parse_double(key, value);
  } else if (key == "synth_clone_task") {
    c.synth_clone_task = static_cast<int>(parse_int(key, value));
  } else if (key == "synth_clone_source") {
    c.synth_clone_source = static_cast<int>(parse_int(key, value));
  } else if (key == "hidden") {
    c.hidden.clear();
    for (const auto& part : split_csv(value)) {
      c.hidden.push_back(static_cast<int>(parse_int(key, part)));
    }
  } else if (key == "mode") {
    c.train.mode = parse_mode(value);
  } else if (key == "mask_density") {
    c.train.mask_density = parse_double(key, value);
  } else if (key == "mask_epochs") {
    c.train.mask_epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "weight_epochs") {
    c.train.weight_epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "lr") {
    c.train.lr = parse_double(key, value);
  } else if (key == "score_lr") {
    c.train.score_lr = parse_double(key, value);
  } else if (key == "batch_size") {
    c.train.batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "optimizer") {
    if (value == "adam") {
      c.train.optimizer = OptimizerKind::kAdam;
    } else if (value == "sgd") {
      c.train.optimizer = OptimizerKind::kSgd;
    } else {
      throw FormatError("optimizer must be adam or sgd, got '" + value + "'");
    }
  } else if (key == "adam_on_scores") {
    c.train.adam_on_scores = parse_bool(key, value);
  } else if (key == "lr_schedule") {
    if (value == "cosine") {
      c.train.lr_schedule = LrSchedule::kCosine;
    } else if (value == "constant") {
      c.train.lr_schedule = LrSchedule::kConstant;
    } else {
      throw FormatError("lr_schedule must be cosine or constant, got '" +
                        value + "'");
    }
  } else if (key == "train_forward_mask") {
    if (value == "free") {
      c.train.train_forward_mask = TrainForwardMask::kFree;
    } else if (value == "task") {
      c.train.train_forward_mask = TrainForwardMask::kTask;
    } else {
      throw FormatError("train_forward_mask must be free or task, got '" +
                        value + "'");
    }
  } else if (key == "seed") {
    c.train.seed = parse_u64(key, value);
  } else if (key == "forced_overlap") {
    c.train.forced_overlap = parse_double(key, value);
  } else if (key == "force_empty_free") {
    c.train.force_empty_free = parse_bool(key, value);
  } else if (key == "record_val_curves") {
    c.train.record_val_curves = parse_bool(key, value);
  } else if (key == "kkt") {
    c.kkt_enabled = parse_bool(key, value);
  } else if (key == "kkt_sample_fraction") {
    c.kkt.sample_fraction = parse_double(key, value);
  } else if (key == "kkt_k") {
    c.kkt.knn_k = static_cast<int>(parse_int(key, value));
  } else if (key == "kkt_probe_train_ratio") {
    c.kkt.probe_train_ratio = parse_double(key, value);
  } else if (key == "kkt_margin") {
    c.kkt.margin = parse_double(key, value);
  } else if (key == "out") {
    c.out_dir = value;
  } else if (key == "run_id") {
    c.run_id = value;
  } else if (key == "seeds") {
    c.seeds.clear();
    for (const auto& part : split_csv(value)) {
      c.seeds.push_back(parse_u64(key, part));
    }
  } else if (key == "sweep_axis") {
    c.sweep_axis = value;
  } else if (key == "sweep_values") {
    c.sweep_values.clear();
    for (const auto& part : split_csv(value)) {
      c.sweep_values.push_back(parse_double(key, part));
    }
  } else {
    throw FormatError("unknown config key '" + key + "'");
  }
}

}  // namespace

void CliConfig::validate() const {
  if (dataset != "mnist" && dataset != "synth") {
    throw FormatError("config needs dataset = mnist or synth");
  }
  if (n_tasks < 1) throw std::domain_error("n_tasks must be positive");
  if (hidden.empty()) {
    throw std::domain_error("the model needs at least one hidden layer");
  }
  for (int width : hidden) {
    if (width < 1) throw std::domain_error("hidden widths must be positive");
  }
  if (run_id.find(',') != std::string::npos ||
      run_id.find('\n') != std::string::npos) {
    throw FormatError("run_id must not contain commas or newlines");
  }
  if (seeds.empty()) throw std::domain_error("need at least one seed");
  if (sweep_axis != "density" && sweep_axis != "overlap" &&
      sweep_axis != "tasks") {
    throw FormatError("sweep_axis must be density, overlap, or tasks");
  }
  train.validate();
  kkt.validate();
}

CliConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  CliConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw FormatError(path + ":" + std::to_string(line_no) +
                        ": expected key = value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": empty key");
    }
    apply_key(config, key, value);
  }
  return config;
}

void apply_override(CliConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw FormatError("--set expects key=value, got '" + assignment + "'");
  }
  apply_key(config, trim(assignment.substr(0, eq)),
            trim(assignment.substr(eq + 1)));
}

PreparedData prepare_data(const CliConfig& config) {
  PreparedData prepared;
  if (config.dataset == "mnist") {
    const fs::path dir(config.mnist_dir);
    const auto images = (dir / "mnist-images-idx3-ubyte").string();
    const auto labels = (dir / "mnist-labels-idx1-ubyte").string();
    if (!fs::exists(images) || !fs::exists(labels)) {
      throw IoError("mnist files not found under " + config.mnist_dir +
                    " (run tools/make_mnist_idx.py first)");
    }
    prepared.dataset = load_idx(images, labels);
    if (config.normalize) {
      prepared.dataset =
          normalize(prepared.dataset, config.norm_mean, config.norm_std);
    }
    SplitOptions split;
    split.val_fraction = config.val_fraction;
    split.test_fraction = config.test_fraction;
    prepared.tasks = split_into_tasks(prepared.dataset, config.n_tasks,
                                      config.train.seed, split);
  } else if (config.dataset == "synth") {
    SynthConfig synth;
    synth.n_tasks = config.n_tasks;
    synth.classes_per_task = config.synth_classes_per_task;
    synth.dim = config.synth_dim;
    synth.samples_per_class = config.synth_samples_per_class;
    synth.separation = config.synth_separation;
    synth.clone_task = config.synth_clone_task;
    synth.clone_source = config.synth_clone_source;
    synth.val_fraction = config.val_fraction;
    synth.test_fraction = config.test_fraction;
    SynthTasks tasks = synth_gaussian_tasks(synth, config.train.seed);
    prepared.dataset = std::move(tasks.dataset);
    prepared.tasks = std::move(tasks.tasks);
  } else {
    throw FormatError("config needs dataset = mnist or synth");
  }
  return prepared;
}

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::kMaskOnly: return "supsup";
    case Mode::kMaskAndAll: return "ssnet";
    case Mode::kMaskAndExclusive: return "exssnet";
  }
  return "unknown";
}

int worker_count() {
  if (const char* env = std::getenv("EXSS_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::vector<MetricsRow> metrics_rows(const std::string& run_id,
                                     const std::string& mode,
                                     std::uint64_t seed,
                                     const RunReport& report) {
  std::vector<MetricsRow> rows;
  const int n = report.accuracy.task_count();
  for (int learned = 1; learned <= n; ++learned) {
    for (int evaluated = 1; evaluated <= learned; ++evaluated) {
      rows.push_back(MetricsRow{run_id, mode, seed, learned, evaluated,
                                report.accuracy.at(learned, evaluated)});
    }
  }
  return rows;
}

SummaryRow summary_row(const std::string& run_id, const std::string& mode,
                       std::uint64_t seed, const RunReport& report) {
  return SummaryRow{run_id,           mode,
                    seed,             report.avg_accuracy,
                    report.forgetting, report.mean_sparse_overlap()};
}

namespace {

constexpr const char* kMetricsHeader =
    "run_id,mode,seed,task_learned,task_eval,accuracy";
constexpr const char* kSummaryHeader =
    "run_id,mode,seed,avg_accuracy,forgetting,mean_sparse_overlap";

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_fields(const std::string& line, int expected,
                                      const std::string& path) {
  const auto fields = split_csv(line);
  if (static_cast<int>(fields.size()) != expected) {
    throw FormatError(path + ": expected " + std::to_string(expected) +
                      " fields, got " + std::to_string(fields.size()));
  }
  return fields;
}

}  // namespace

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  out << kMetricsHeader << "\n";
  for (const auto& r : rows) {
    out << r.run_id << ',' << r.mode << ',' << r.seed << ',' << r.task_learned
        << ',' << r.task_eval << ',' << fmt_double(r.accuracy) << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

void write_summary_csv(const std::string& path,
                       const std::vector<SummaryRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  out << kSummaryHeader << "\n";
  for (const auto& r : rows) {
    out << r.run_id << ',' << r.mode << ',' << r.seed << ','
        << fmt_double(r.avg_accuracy) << ',' << fmt_double(r.forgetting) << ','
        << fmt_double(r.mean_sparse_overlap) << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines.front() != kMetricsHeader) {
    throw FormatError(path + ": bad metrics header");
  }
  std::vector<MetricsRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = split_fields(lines[i], 6, path);
    rows.push_back(MetricsRow{
        f[0], f[1], parse_u64("seed", f[2]),
        static_cast<int>(parse_int("task_learned", f[3])),
        static_cast<int>(parse_int("task_eval", f[4])),
        parse_double("accuracy", f[5])});
  }
  return rows;
}

std::vector<SummaryRow> read_summary_csv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines.front() != kSummaryHeader) {
    throw FormatError(path + ": bad summary header");
  }
  std::vector<SummaryRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = split_fields(lines[i], 6, path);
    rows.push_back(SummaryRow{f[0], f[1], parse_u64("seed", f[2]),
                              parse_double("avg_accuracy", f[3]),
                              parse_double("forgetting", f[4]),
                              parse_double("mean_sparse_overlap", f[5])});
  }
  return rows;
}

std::string render_sweep_svg(const std::string& x_label,
                             const std::vector<ChartSeries>& series) {
  constexpr double kWidth = 640, kHeight = 400;
  constexpr double kLeft = 70, kRight = 610, kTop = 30, kBottom = 350;

  double x_min = 0.0, x_max = 1.0;
  bool have_x = false;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!have_x) {
        x_min = x_max = x;
        have_x = true;
      } else {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
      }
    }
  }
  if (!have_x) x_min = 0.0, x_max = 1.0;
  if (x_max == x_min) {
    x_min -= 0.5;
    x_max += 0.5;
  }

  const auto sx = [&](double x) {
    return kLeft + (x - x_min) / (x_max - x_min) * (kRight - kLeft);
  };
  const auto sy = [&](double y) {
    const double clamped = std::min(1.0, std::max(0.0, y));
    return kBottom - clamped * (kBottom - kTop);
  };
  const auto coord = [](double v) {
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "%.2f", v);
    return std::string(buffer);
  };

  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                            "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " "
      << kHeight << "\">\n"
      << "  <rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" fill=\"white\"/>\n";

  // Axes.
  svg << "  <line x1=\"" << kLeft << "\" y1=\"" << kBottom << "\" x2=\""
      << kRight << "\" y2=\"" << kBottom
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n"
      << "  <line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft
      << "\" y2=\"" << kBottom << "\" stroke=\"black\" stroke-width=\"1\"/>\n";

  // Y ticks every 0.25 of accuracy.
  for (int i = 0; i <= 4; ++i) {
    const double y = 0.25 * i;
    const std::string py = coord(sy(y));
    svg << "  <line x1=\"" << kLeft - 4 << "\" y1=\"" << py << "\" x2=\""
        << kLeft << "\" y2=\"" << py << "\" stroke=\"black\"/>\n"
        << "  <text x=\"" << kLeft - 8 << "\" y=\"" << py
        << "\" font-size=\"12\" text-anchor=\"end\" dominant-baseline=\"middle\">"
        << fmt_value(y) << "</text>\n";
  }

  // X ticks at every distinct data x.
  std::vector<double> xs;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) xs.push_back(x);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  for (double x : xs) {
    const std::string px = coord(sx(x));
    svg << "  <line x1=\"" << px << "\" y1=\"" << kBottom << "\" x2=\"" << px
        << "\" y2=\"" << kBottom + 4 << "\" stroke=\"black\"/>\n"
        << "  <text x=\"" << px << "\" y=\"" << kBottom + 18
        << "\" font-size=\"12\" text-anchor=\"middle\">" << fmt_value(x)
        << "</text>\n";
  }

  // Axis labels.
  svg << "  <text x=\"" << (kLeft + kRight) / 2 << "\" y=\"" << kBottom + 38
      << "\" font-size=\"13\" text-anchor=\"middle\">" << x_label
      << "</text>\n"
      << "  <text x=\"18\" y=\"" << (kTop + kBottom) / 2
      << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << (kTop + kBottom) / 2 << ")\">average accuracy</text>\n";

  // Series polylines plus legend entries.
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % (sizeof kColors / sizeof kColors[0])];
    std::ostringstream points;
    for (const auto& [x, y] : series[i].points) {
      points << coord(sx(x)) << ',' << coord(sy(y)) << ' ';
    }
    svg << "  <polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"" << points.str() << "\"/>\n";
    const double ly = kTop + 16.0 * static_cast<double>(i);
    svg << "  <line x1=\"" << kRight - 120 << "\" y1=\"" << ly << "\" x2=\""
        << kRight - 100 << "\" y2=\"" << ly << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n"
        << "  <text x=\"" << kRight - 94 << "\" y=\"" << ly
        << "\" font-size=\"12\" dominant-baseline=\"middle\">"
        << series[i].label << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

namespace {

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  out << content;
  if (!out) throw IoError("failed writing " + path);
}

void append_phase_log(std::ostream& log, const RunReport& report) {
  for (const auto& t : report.phase_seconds) {
    log << "task " << t.task_id << ": mask " << t.mask_phase << "s, weight "
        << t.weight_phase << "s, eval " << t.eval << "s\n";
  }
}

}  // namespace

int cmd_run(const CliConfig& config) {
  PreparedData data;
  try {
    config.validate();
    data = prepare_data(config);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    fs::create_directories(config.out_dir);
    std::ostringstream log;
    log << "run " << config.run_id << " started " << timestamp_now() << "\n";

    ModelTopology topology;
    topology.hidden = config.hidden;
    ModelState model;
    MaskRegistry registry;
    const RunReport report = run_continual(
        data.dataset, data.tasks, topology, config.train,
        config.kkt_enabled ? &config.kkt : nullptr, &model, &registry);

    const std::string mode = mode_name(config.train.mode);
    const fs::path out(config.out_dir);
    write_metrics_csv(
        (out / "metrics.csv").string(),
        metrics_rows(config.run_id, mode, config.train.seed, report));
    write_summary_csv(
        (out / "summary.csv").string(),
        {summary_row(config.run_id, mode, config.train.seed, report)});
    save_checkpoint((out / "checkpoint.exss").string(), model, registry,
                    config.train.mask_density);
    append_phase_log(log, report);
    log << "avg_accuracy " << fmt_double(report.avg_accuracy) << "\n";
    log << "forgetting " << fmt_double(report.forgetting) << "\n";
    log << "finished " << timestamp_now() << "\n";
    write_text((out / "run.log").string(), log.str());
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

namespace {

struct SweepPoint {
  double value = 0.0;
  std::uint64_t seed = 0;
  CliConfig config;  // fully specialized for this point
  std::string run_id;
};

struct SweepResult {
  RunReport report;
  double seconds = 0.0;
};

}  // namespace

int cmd_sweep(const CliConfig& config) {
  std::vector<SweepPoint> points;
  try {
    config.validate();
    if (config.sweep_values.empty()) {
      throw FormatError("sweep needs a non-empty sweep_values list");
    }
    const Mode modes[] = {Mode::kMaskOnly, Mode::kMaskAndAll,
                          Mode::kMaskAndExclusive};
    for (double value : config.sweep_values) {
      for (Mode mode : modes) {
        for (std::uint64_t seed : config.seeds) {
          SweepPoint point;
          point.value = value;
          point.seed = seed;
          point.config = config;
          point.config.train.mode = mode;
          point.config.train.seed = seed;
          if (config.sweep_axis == "density") {
            point.config.train.mask_density = value;
          } else if (config.sweep_axis == "overlap") {
            point.config.train.forced_overlap = value;
          } else {  // tasks
            if (value < 1.0 || value != std::floor(value)) {
              throw std::domain_error("tasks axis needs positive integers");
            }
            point.config.n_tasks = static_cast<int>(value);
          }
          point.config.train.validate();
          point.run_id = config.sweep_axis + "=" + fmt_value(value);
          points.push_back(std::move(point));
        }
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    fs::create_directories(config.out_dir);
    std::ostringstream log;
    log << "sweep " << config.sweep_axis << " started " << timestamp_now()
        << "\n";

    // Points are independent; run them on a small pool and merge results in
    // the deterministic points order afterwards.
    std::vector<SweepResult> results(points.size());
    std::vector<std::exception_ptr> failures(points.size());
    std::atomic<std::size_t> cursor{0};
    const auto work = [&]() {
      for (;;) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= points.size()) break;
        try {
          const auto start = std::chrono::steady_clock::now();
          const PreparedData data = prepare_data(points[i].config);
          ModelTopology topology;
          topology.hidden = points[i].config.hidden;
          results[i].report = run_continual(
              data.dataset, data.tasks, topology, points[i].config.train,
              points[i].config.kkt_enabled ? &points[i].config.kkt : nullptr);
          results[i].seconds = std::chrono::duration<double>(
                                   std::chrono::steady_clock::now() - start)
                                   .count();
        } catch (...) {
          failures[i] = std::current_exception();
        }
      }
    };
    const int workers =
        std::max(1, std::min<int>(worker_count(),
                                  static_cast<int>(points.size())));
    if (workers == 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(workers));
      for (int w = 0; w < workers; ++w) pool.emplace_back(work);
      for (auto& t : pool) t.join();
    }
    for (const auto& failure : failures) {
      if (failure) std::rethrow_exception(failure);
    }

    std::vector<MetricsRow> metrics;
    std::vector<SummaryRow> summaries;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const std::string mode = mode_name(points[i].config.train.mode);
      const auto rows = metrics_rows(points[i].run_id, mode, points[i].seed,
                                     results[i].report);
      metrics.insert(metrics.end(), rows.begin(), rows.end());
      summaries.push_back(summary_row(points[i].run_id, mode, points[i].seed,
                                      results[i].report));
      log << points[i].run_id << " mode " << mode << " seed "
          << points[i].seed << ": " << results[i].seconds << "s\n";
    }
    const fs::path out(config.out_dir);
    write_metrics_csv((out / "metrics.csv").string(), metrics);
    write_summary_csv((out / "summary.csv").string(), summaries);

    // One polyline per mode: x = axis value, y = avg accuracy averaged over
    // seeds at that value.
    std::vector<ChartSeries> series;
    const Mode modes[] = {Mode::kMaskOnly, Mode::kMaskAndAll,
                          Mode::kMaskAndExclusive};
    for (Mode mode : modes) {
      ChartSeries line;
      line.label = mode_name(mode);
      for (double value : config.sweep_values) {
        double sum = 0.0;
        int count = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
          if (points[i].config.train.mode == mode && points[i].value == value) {
            sum += results[i].report.avg_accuracy;
            ++count;
          }
        }
        if (count > 0) {
          line.points.emplace_back(value, sum / static_cast<double>(count));
        }
      }
      series.push_back(std::move(line));
    }
    write_text((out / "sweep.svg").string(),
               render_sweep_svg(config.sweep_axis, series));

    log << "finished " << timestamp_now() << "\n";
    write_text((out / "run.log").string(), log.str());
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_report(const std::string& checkpoint_path, const std::string& out_dir) {
  LoadedCheckpoint loaded;
  try {
    loaded = load_checkpoint(checkpoint_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    const ModelState& model = loaded.model;
    const MaskRegistry& registry = loaded.registry;
    const std::int64_t params = model.param_count();
    const int tasks = registry.task_count();

    const Supermask used = registry.used_union(zeros_mask_for(model));
    const std::int64_t used_bits = used.popcount();
    const double used_fraction =
        params > 0 ? static_cast<double>(used_bits) / static_cast<double>(params)
                   : 0.0;
    const double free_capacity = 1.0 - used_fraction;

    const std::int64_t theory =
        storage_bits(params, static_cast<double>(loaded.info.density), tasks);
    const auto file_bytes =
        static_cast<std::int64_t>(fs::file_size(checkpoint_path));

    std::ostringstream csv;
    csv << "record,task_i,task_j,value\n";
    std::printf("checkpoint %s\n", checkpoint_path.c_str());
    std::printf("layers:");
    for (const auto& [rows, cols] : loaded.info.shapes) {
      std::printf(" %ux%u", rows, cols);
    }
    std::printf("\ntasks %d, density %s\n", tasks,
                fmt_value(static_cast<double>(loaded.info.density)).c_str());
    std::printf("used weights %lld / %lld (%.1f%%), free capacity %.1f%%\n",
                static_cast<long long>(used_bits),
                static_cast<long long>(params), 100.0 * used_fraction,
                100.0 * free_capacity);
    csv << "used_fraction,,," << fmt_double(used_fraction) << "\n";
    csv << "free_capacity,,," << fmt_double(free_capacity) << "\n";

    if (tasks > 0) {
      std::printf("pairwise mask overlap |Mi&Mj|/|Mi|:\n");
      for (const auto& [i, mask_i] : registry.entries_before(-1)) {
        std::printf("  task %d:", i);
        const auto bits_i = mask_i->popcount();
        for (const auto& [j, mask_j] : registry.entries_before(-1)) {
          const auto shared = mask_and(*mask_i, *mask_j).popcount();
          const double frac =
              bits_i > 0 ? static_cast<double>(shared) /
                               static_cast<double>(bits_i)
                         : 0.0;
          std::printf(" %.4f", frac);
          csv << "pairwise_overlap," << i << ',' << j << ','
              << fmt_double(frac) << "\n";
        }
        std::printf("\n");
      }
    }

    std::printf("storage: formula %lld bits, file %lld bytes (%lld bits)\n",
                static_cast<long long>(theory),
                static_cast<long long>(file_bytes),
                static_cast<long long>(file_bytes * 8));
    csv << "storage_bits,,," << theory << "\n";
    csv << "file_bytes,,," << file_bytes << "\n";
    csv << "density,,," << fmt_double(static_cast<double>(loaded.info.density))
        << "\n";
    csv << "task_count,,," << tasks << "\n";
    csv << "param_count,,," << params << "\n";

    const fs::path out = out_dir.empty()
                             ? fs::path(checkpoint_path).parent_path()
                             : fs::path(out_dir);
    if (!out.empty()) fs::create_directories(out);
    write_text((out / "report.csv").string(), csv.str());
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_eval(const CliConfig& config, const std::string& checkpoint_path) {
  PreparedData data;
  LoadedCheckpoint loaded;
  int task_count = 0;
  try {
    config.validate();
    data = prepare_data(config);
    loaded = load_checkpoint(checkpoint_path);
    // A checkpoint only makes sense against the split it was trained on, so
    // incompatibilities are configuration errors, not runtime failures.
    task_count = loaded.registry.task_count();
    if (task_count > static_cast<int>(data.tasks.size())) {
      throw StateError("checkpoint has more tasks than the configured split");
    }
    if (data.dataset.inputs.cols() != loaded.model.input_width()) {
      throw ShapeError("configured dataset width does not match the "
                       "checkpoint's input layer; use the run's config");
    }
    int total = 0;
    for (const auto& t : data.tasks) total += static_cast<int>(t.classes.size());
    if (total != loaded.model.output_width()) {
      throw ShapeError("configured tasks do not match the checkpoint's output "
                       "layer; use the run's config");
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    ModelState& model = loaded.model;
    int next_slot = 0;
    for (const auto& t : data.tasks) {
      const int width = static_cast<int>(t.classes.size());
      model.register_head(t.task_id, HeadRange{next_slot, next_slot + width});
      next_slot += width;
    }

    std::vector<MetricsRow> rows;
    for (int t = 1; t <= task_count; ++t) {
      const double acc =
          evaluate_task(model, loaded.registry.task_mask(t), data.dataset,
                        data.tasks[static_cast<std::size_t>(t) - 1]);
      std::printf("task %d accuracy %s\n", t, fmt_double(acc).c_str());
      rows.push_back(MetricsRow{config.run_id, "eval", config.train.seed,
                                task_count, t, acc});
    }
    fs::create_directories(config.out_dir);
    write_metrics_csv((fs::path(config.out_dir) / "eval.csv").string(), rows);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace exssnet::cli
