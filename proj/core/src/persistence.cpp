#include "exssnet/persistence.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "exssnet/errors.hpp"

namespace exssnet {

namespace {

constexpr char kMagic[4] = {'E', 'X', 'S', 'S'};
constexpr std::uint16_t kVersion = 1;

void write_u16(std::ostream& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  write_u32(out, bits);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2)) {
    throw IoError("checkpoint truncated");
  }
  return static_cast<std::uint16_t>(b[0] | (std::uint16_t{b[1]} << 8));
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("checkpoint truncated");
  }
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) |
         (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

float read_f32(std::istream& in) {
  const std::uint32_t bits = read_u32(in);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

void write_mask_layers(std::ostream& out, const Supermask& mask) {
  for (const BitMask& layer : mask.layers) {
    out.write(reinterpret_cast<const char*>(layer.bytes().data()),
              static_cast<std::streamsize>(layer.bytes().size()));
  }
}

Supermask read_mask_layers(std::istream& in,
                           const std::vector<std::pair<int, int>>& shapes,
                           double density) {
  Supermask mask;
  mask.density = density;
  for (const auto& [rows, cols] : shapes) {
    const auto bytes_needed = static_cast<std::size_t>(
        (static_cast<std::int64_t>(rows) * cols + 7) / 8);
    std::vector<std::uint8_t> bytes(bytes_needed);
    if (!in.read(reinterpret_cast<char*>(bytes.data()),
                 static_cast<std::streamsize>(bytes_needed))) {
      throw IoError("checkpoint truncated inside a mask");
    }
    mask.layers.push_back(BitMask::from_bytes(rows, cols, bytes));
  }
  return mask;
}

}  // namespace

std::int64_t save_checkpoint(const std::string& path, const ModelState& model,
                             const MaskRegistry& registry, double density) {
  model.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);

  out.write(kMagic, 4);
  write_u16(out, kVersion);
  write_u16(out, static_cast<std::uint16_t>(model.layer_count()));
  for (const auto& w : model.weights) {
    write_u32(out, static_cast<std::uint32_t>(w.rows()));
    write_u32(out, static_cast<std::uint32_t>(w.cols()));
  }
  write_u16(out, static_cast<std::uint16_t>(registry.task_count()));
  write_f32(out, static_cast<float>(density));

  for (const auto& w : model.weights) {
    for (float v : w.values()) write_f32(out, v);
  }
  for (const auto& [task_id, mask] : registry.entries_before(-1)) {
    write_mask_layers(out, *mask);
    write_mask_layers(out, registry.free(task_id));
  }
  out.flush();
  if (!out) throw IoError("failed writing " + path);
  const auto size = static_cast<std::int64_t>(out.tellp());
  return size;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  char magic[4];
  if (!in.read(magic, 4)) throw IoError("checkpoint truncated");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path + " is not a checkpoint (bad magic)");
  }
  LoadedCheckpoint loaded;
  loaded.info.version = read_u16(in);
  if (loaded.info.version != kVersion) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(loaded.info.version));
  }
  loaded.info.layer_count = read_u16(in);
  if (loaded.info.layer_count == 0) {
    throw FormatError("checkpoint has no layers");
  }
  std::vector<std::pair<int, int>> shapes;
  for (int l = 0; l < loaded.info.layer_count; ++l) {
    const std::uint32_t rows = read_u32(in);
    const std::uint32_t cols = read_u32(in);
    if (rows == 0 || cols == 0 || rows > 1u << 24 || cols > 1u << 24) {
      throw FormatError("checkpoint layer shape is implausible");
    }
    loaded.info.shapes.emplace_back(rows, cols);
    shapes.emplace_back(static_cast<int>(rows), static_cast<int>(cols));
  }
  loaded.info.task_count = read_u16(in);
  loaded.info.density = read_f32(in);

  // Rebuild the model: shapes fully determine the specs; activations are the
  // fixed convention (ReLU hidden, identity output).
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    LayerSpec spec;
    spec.fan_out = shapes[l].first;
    spec.fan_in = shapes[l].second;
    spec.activation = l + 1 == shapes.size() ? Activation::kIdentity
                                             : Activation::kRelu;
    loaded.model.specs.push_back(spec);
    Matrix w(spec.fan_out, spec.fan_in);
    for (float& v : w.values()) v = read_f32(in);
    loaded.model.weights.push_back(std::move(w));
  }
  loaded.model.validate();

  for (int t = 1; t <= loaded.info.task_count; ++t) {
    Supermask mask = read_mask_layers(in, shapes, loaded.info.density);
    Supermask free = read_mask_layers(in, shapes, loaded.info.density);
    loaded.registry.add(t, std::move(mask), std::move(free));
  }
  // Trailing garbage means the file does not match its own header.
  char probe;
  if (in.read(&probe, 1)) {
    throw FormatError(path + " has trailing bytes after the last mask");
  }
  return loaded;
}

std::int64_t checkpoint_byte_size(
    const std::vector<std::pair<int, int>>& shapes, int task_count) {
  std::int64_t weights = 0;
  std::int64_t mask_bytes = 0;
  for (const auto& [rows, cols] : shapes) {
    const auto n = static_cast<std::int64_t>(rows) * cols;
    weights += n;
    mask_bytes += (n + 7) / 8;
  }
  const std::int64_t header = 4 + 2 + 2 +
                              8 * static_cast<std::int64_t>(shapes.size()) + 2 +
                              4;
  return header + 4 * weights + 2 * mask_bytes * task_count;
}

std::int64_t storage_bits(std::int64_t param_count, double density,
                          int task_count) {
  if (param_count < 1) throw std::domain_error("need at least one parameter");
  if (!(density > 0.0) || density > 1.0) {
    throw std::domain_error("density must be in (0, 1]");
  }
  if (task_count < 0) throw std::domain_error("task count cannot be negative");
  const double trained = static_cast<double>(param_count) * density *
                         static_cast<double>(task_count);
  const double stored = std::max(trained, static_cast<double>(param_count));
  return std::llround(stored * 32.0) + param_count;
}

}  // namespace exssnet
