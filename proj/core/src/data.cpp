#include "exssnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "exssnet/errors.hpp"

namespace exssnet {

void Dataset::validate() const {
  if (inputs.rows() != static_cast<int>(labels.size())) {
    throw ShapeError("dataset has " + std::to_string(inputs.rows()) +
                     " rows but " + std::to_string(labels.size()) + " labels");
  }
  for (int label : labels) {
    if (label < 0 || label >= class_count) {
      throw std::out_of_range("label outside [0, class_count)");
    }
  }
}

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("unexpected end of IDX header in " + path);
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
      static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + images_path);
  if (read_u32_be(img, images_path) != kImageMagic) {
    throw FormatError(images_path + " is not an IDX image file");
  }
  const std::uint32_t count = read_u32_be(img, images_path);
  const std::uint32_t rows = read_u32_be(img, images_path);
  const std::uint32_t cols = read_u32_be(img, images_path);
  const std::int64_t width = static_cast<std::int64_t>(rows) * cols;
  if (count > 1u << 24 || width <= 0 || width > 1 << 20) {
    throw FormatError(images_path + " header has implausible dimensions");
  }

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open " + labels_path);
  if (read_u32_be(lab, labels_path) != kLabelMagic) {
    throw FormatError(labels_path + " is not an IDX label file");
  }
  if (read_u32_be(lab, labels_path) != count) {
    throw FormatError("image and label counts disagree");
  }

  Dataset data;
  data.inputs = Matrix(static_cast<int>(count), static_cast<int>(width));
  std::vector<unsigned char> buffer(static_cast<std::size_t>(width));
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!img.read(reinterpret_cast<char*>(buffer.data()),
                  static_cast<std::streamsize>(buffer.size()))) {
      throw FormatError(images_path + " is truncated");
    }
    float* row = data.inputs.row(static_cast<int>(i));
    for (std::int64_t j = 0; j < width; ++j) {
      row[j] = static_cast<float>(buffer[static_cast<std::size_t>(j)]) / 255.0f;
    }
  }

  std::vector<unsigned char> raw_labels(count);
  if (count > 0 && !lab.read(reinterpret_cast<char*>(raw_labels.data()),
                             static_cast<std::streamsize>(count))) {
    throw FormatError(labels_path + " is truncated");
  }
  data.labels.reserve(count);
  int max_label = -1;
  for (unsigned char l : raw_labels) {
    data.labels.push_back(static_cast<int>(l));
    max_label = std::max(max_label, static_cast<int>(l));
  }
  data.class_count = max_label + 1;
  data.validate();
  return data;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& data) {
  data.validate();
  // Emit a square image geometry when the width is a perfect square (the
  // usual case for image data); otherwise fall back to count x width x 1.
  const int width = data.inputs.cols();
  int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(width))));
  int rows = width, cols = 1;
  if (side * side == width) {
    rows = side;
    cols = side;
  }

  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  if (!img) throw IoError("cannot create " + images_path);
  write_u32_be(img, kImageMagic);
  write_u32_be(img, static_cast<std::uint32_t>(data.inputs.rows()));
  write_u32_be(img, static_cast<std::uint32_t>(rows));
  write_u32_be(img, static_cast<std::uint32_t>(cols));
  std::vector<unsigned char> buffer(static_cast<std::size_t>(width));
  for (int r = 0; r < data.inputs.rows(); ++r) {
    const float* row = data.inputs.row(r);
    for (int j = 0; j < width; ++j) {
      const long q = std::lround(static_cast<double>(row[j]) * 255.0);
      buffer[static_cast<std::size_t>(j)] =
          static_cast<unsigned char>(std::clamp(q, 0L, 255L));
    }
    img.write(reinterpret_cast<const char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size()));
  }
  if (!img) throw IoError("failed writing " + images_path);

  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!lab) throw IoError("cannot create " + labels_path);
  write_u32_be(lab, kLabelMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(data.labels.size()));
  for (int l : data.labels) {
    if (l > 255) throw FormatError("IDX labels must fit in a byte");
    const auto byte = static_cast<unsigned char>(l);
    lab.write(reinterpret_cast<const char*>(&byte), 1);
  }
  if (!lab) throw IoError("failed writing " + labels_path);
}

Dataset normalize(const Dataset& data, double mean, double stddev) {
  if (!(stddev > 0.0)) {
    throw std::domain_error("normalization stddev must be positive");
  }
  Dataset out = data;
  const auto m = static_cast<float>(mean);
  const auto inv = static_cast<float>(1.0 / stddev);
  for (float& v : out.inputs.values()) v = (v - m) * inv;
  return out;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.inputs.cols() != b.inputs.cols()) {
    throw ShapeError("datasets have different input widths");
  }
  Dataset out;
  out.inputs = Matrix(a.inputs.rows() + b.inputs.rows(), a.inputs.cols());
  std::copy(a.inputs.values().begin(), a.inputs.values().end(),
            out.inputs.values().begin());
  std::copy(b.inputs.values().begin(), b.inputs.values().end(),
            out.inputs.values().begin() + a.inputs.size());
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.class_count = std::max(a.class_count, b.class_count);
  out.validate();
  return out;
}

void SynthConfig::validate() const {
  if (n_tasks < 1) throw std::domain_error("need at least one task");
  if (classes_per_task < 2) {
    throw std::domain_error("each task needs at least two classes");
  }
  if (dim < 1) throw std::domain_error("sample dimension must be positive");
  if (samples_per_class < 4) {
    throw std::domain_error("need at least four samples per class");
  }
  if (!(separation >= 0.0)) {
    throw std::domain_error("separation must be non-negative");
  }
  if (clone_task != 0) {
    // clone_task == 0 means "off"; otherwise clone_source must name a task
    // learned strictly before the clone.
    if (clone_task < 2 || clone_task > n_tasks || clone_source < 1 ||
        clone_source >= clone_task) {
      throw std::domain_error("clone_source must come before clone_task");
    }
  }
  if (!(val_fraction >= 0.0) || !(test_fraction > 0.0) ||
      val_fraction + test_fraction >= 1.0) {
    throw std::domain_error("val/test fractions must leave training data");
  }
}

SynthTasks synth_gaussian_tasks(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, RngStream::kSynthData));

  const int total_classes = config.n_tasks * config.classes_per_task;
  const int rows_total =
      total_classes * config.samples_per_class;

  SynthTasks result;
  result.dataset.inputs = Matrix(rows_total, config.dim);
  result.dataset.labels.resize(static_cast<std::size_t>(rows_total));
  result.dataset.class_count = total_classes;

  // Per-class means first (in class order), then samples, so the layout is
  // stable: rows are grouped by class, classes grouped by task.
  std::vector<std::vector<float>> means(static_cast<std::size_t>(total_classes));
  for (auto& mean : means) {
    mean.resize(static_cast<std::size_t>(config.dim));
    for (float& v : mean) {
      v = static_cast<float>((rng.next_double01() * 2.0 - 1.0) *
                             config.separation);
    }
  }

  for (int cls = 0; cls < total_classes; ++cls) {
    const int task_id = cls / config.classes_per_task + 1;
    const bool clones = config.clone_task > 0 && task_id == config.clone_task;
    for (int s = 0; s < config.samples_per_class; ++s) {
      const int row = cls * config.samples_per_class + s;
      float* dst = result.dataset.inputs.row(row);
      if (clones) {
        // Copy the corresponding row of the source task verbatim; only the
        // class id changes. Draws are still consumed to keep the stream
        // aligned with the non-cloning layout.
        const int src_cls = (config.clone_source - 1) * config.classes_per_task +
                            (cls % config.classes_per_task);
        const int src_row = src_cls * config.samples_per_class + s;
        for (int d = 0; d < config.dim; ++d) rng.next_gaussian();
        const float* src = result.dataset.inputs.row(src_row);
        for (int d = 0; d < config.dim; ++d) dst[d] = src[d];
      } else {
        const auto& mean = means[static_cast<std::size_t>(cls)];
        for (int d = 0; d < config.dim; ++d) {
          dst[d] = mean[static_cast<std::size_t>(d)] + rng.next_gaussian();
        }
      }
      result.dataset.labels[static_cast<std::size_t>(row)] = cls;
    }
  }

  // Split every class into train/val/test by shuffled position, identically
  // shaped for each class so tasks stay balanced.
  const int per_class = config.samples_per_class;
  const int test_n = std::max(1, static_cast<int>(std::lround(
                                     config.test_fraction * per_class)));
  const int val_n = static_cast<int>(std::lround(config.val_fraction * per_class));
  if (test_n + val_n >= per_class) {
    throw std::domain_error("val/test split leaves no training rows");
  }

  result.tasks.resize(static_cast<std::size_t>(config.n_tasks));
  for (int t = 0; t < config.n_tasks; ++t) {
    TaskSpec& spec = result.tasks[static_cast<std::size_t>(t)];
    spec.task_id = t + 1;
    for (int c = 0; c < config.classes_per_task; ++c) {
      const int cls = t * config.classes_per_task + c;
      spec.classes.push_back(cls);
      std::vector<int> rows(static_cast<std::size_t>(per_class));
      for (int s = 0; s < per_class; ++s) rows[static_cast<std::size_t>(s)] = cls * per_class + s;
      rng.shuffle(rows);
      for (int s = 0; s < per_class; ++s) {
        const int row = rows[static_cast<std::size_t>(s)];
        if (s < test_n) {
          spec.test_indices.push_back(row);
        } else if (s < test_n + val_n) {
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
  return result;
}

}  // namespace exssnet
