#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "exssnet/masking.hpp"
#include "exssnet/network.hpp"

namespace exssnet {

// Checkpoint format (version 1), all multi-byte fields little-endian:
//
//   magic        4 bytes    "EXSS"
//   version      u16
//   layer_count  u16
//   per layer:   rows u32, cols u32      (rows = fan_out, cols = fan_in)
//   task_count   u16
//   density      f32                      (mask density the run used)
//   weights      f32[rows*cols] per layer, row-major, layer order
//   per task (ascending id, 1-based):
//     task mask  packed bits per layer    (layout documented on BitMask)
//     free mask  packed bits per layer
//
// Masks are stored per task even though the free mask is derivable, so a
// loaded checkpoint can be evaluated without replaying the whole run.
struct CheckpointInfo {
  std::uint16_t version = 0;
  std::uint16_t layer_count = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  std::uint16_t task_count = 0;
  float density = 0.0f;
};

// Writes the checkpoint; returns the file size in bytes.
std::int64_t save_checkpoint(const std::string& path, const ModelState& model,
                             const MaskRegistry& registry, double density);

struct LoadedCheckpoint {
  ModelState model;  // hidden layers get ReLU, the last layer identity
  MaskRegistry registry;
  CheckpointInfo info;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Exact size in bytes of a version-1 checkpoint with the given weight shapes
// and task count (each mask layer padded to a whole byte).
std::int64_t checkpoint_byte_size(
    const std::vector<std::pair<int, int>>& shapes, int task_count);

// Idealized storage cost in bits of the subnetwork approach: one f32 per
// weight actually trained somewhere — max(|W| * density * tasks, |W|) since
// the union of trained weights cannot exceed the full set — plus one mask
// bit per weight.
std::int64_t storage_bits(std::int64_t param_count, double density,
                          int task_count);

}  // namespace exssnet
