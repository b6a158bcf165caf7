#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "exssnet/errors.hpp"
#include "exssnet/masking.hpp"
#include "exssnet/network.hpp"
#include "exssnet/persistence.hpp"
#include "test_support.hpp"

using namespace exssnet;
using test_support::random_matrix;
using test_support::same_float_bits;
using test_support::TempDir;
using test_support::weight_bits;

namespace {

struct SavedRun {
  ModelState model;
  MaskRegistry registry;
};

SavedRun build_run(std::uint64_t seed) {
  SavedRun run;
  run.model = init_signed_kaiming(
      {{5, 3, Activation::kRelu}, {3, 4, Activation::kIdentity}}, seed);
  Rng rng(seed + 50);
  ScoreTensor s1 = random_scores(run.model.weight_shapes(), rng);
  ScoreTensor s2 = random_scores(run.model.weight_shapes(), rng);
  const Supermask m1 = threshold_topk(s1, 0.4);
  const Supermask m2 = threshold_topk(s2, 0.4);
  run.registry.add(1, m1, free_mask(m1, {}));
  run.registry.add(2, m2, free_mask(m2, {&m1}));
  return run;
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

void write_file(const std::string& path,
                const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("idealized storage cost: trained weights floored at one full copy") {
  // 1000 weights at 10% density: one task trains 100 weights, but a full
  // float copy is the floor, so 1000 * 32 + 1000 mask bits.
  CHECK(storage_bits(1000, 0.1, 1) == 33000);
  // Twenty tasks train 2000 weight slots, now above the floor.
  CHECK(storage_bits(1000, 0.1, 20) == 65000);
  // No tasks yet: still a full copy plus the mask bit per weight.
  CHECK(storage_bits(1000, 0.1, 0) == 33000);
  CHECK(storage_bits(4, 1.0, 2) == 4 * 32 * 2 + 4);

  CHECK_THROWS_AS(storage_bits(0, 0.1, 1), std::domain_error);
  CHECK_THROWS_AS(storage_bits(1000, 0.0, 1), std::domain_error);
  CHECK_THROWS_AS(storage_bits(1000, 1.5, 1), std::domain_error);
  CHECK_THROWS_AS(storage_bits(1000, 0.1, -1), std::domain_error);
}

TEST_CASE("checkpoints round-trip weights and masks bit for bit") {
  const SavedRun run = build_run(77);
  TempDir dir("ckpt");
  const std::string path = dir.str("model.exss");

  const std::int64_t written = save_checkpoint(path, run.model, run.registry, 0.4);
  CHECK(written == checkpoint_byte_size({{3, 5}, {4, 3}}, 2));
  CHECK(written ==
        static_cast<std::int64_t>(std::filesystem::file_size(path)));

  const LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.info.version == 1);
  CHECK(loaded.info.layer_count == 2);
  REQUIRE(loaded.info.shapes.size() == 2);
  CHECK(loaded.info.shapes[0] == std::pair<std::uint32_t, std::uint32_t>{3, 5});
  CHECK(loaded.info.shapes[1] == std::pair<std::uint32_t, std::uint32_t>{4, 3});
  CHECK(loaded.info.task_count == 2);
  CHECK(loaded.info.density == 0.4f);

  CHECK(weight_bits(loaded.model) == weight_bits(run.model));
  CHECK(loaded.model.specs[0].activation == Activation::kRelu);
  CHECK(loaded.model.specs[1].activation == Activation::kIdentity);
  CHECK(loaded.registry.task_count() == 2);
  for (int t = 1; t <= 2; ++t) {
    CHECK(loaded.registry.task_mask(t) == run.registry.task_mask(t));
    CHECK(loaded.registry.free(t) == run.registry.free(t));
  }

  // The reloaded model computes the same logits, bit for bit.
  Rng rng(5);
  const Matrix batch = random_matrix(3, 5, rng);
  const Matrix before = forward_masked(run.model, run.registry.task_mask(2), batch);
  const Matrix after =
      forward_masked(loaded.model, loaded.registry.task_mask(2), batch);
  REQUIRE(before.size() == after.size());
  for (std::int64_t i = 0; i < before.size(); ++i) {
    CHECK(same_float_bits(before.values()[static_cast<std::size_t>(i)],
                          after.values()[static_cast<std::size_t>(i)]));
  }
}

TEST_CASE("a checkpoint with no tasks yet is valid") {
  const ModelState model = init_signed_kaiming(
      {{4, 3, Activation::kRelu}, {3, 2, Activation::kIdentity}}, 9);
  MaskRegistry empty;
  TempDir dir("ckpt0");
  const std::string path = dir.str("fresh.exss");
  const std::int64_t written = save_checkpoint(path, model, empty, 0.1);
  CHECK(written == checkpoint_byte_size({{3, 4}, {2, 3}}, 0));
  const LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.info.task_count == 0);
  CHECK(loaded.registry.task_count() == 0);
  CHECK(weight_bits(loaded.model) == weight_bits(model));
}

TEST_CASE("checkpoint loading rejects corruption precisely") {
  const SavedRun run = build_run(78);
  TempDir dir("ckptbad");
  const std::string path = dir.str("model.exss");
  save_checkpoint(path, run.model, run.registry, 0.4);
  const std::vector<unsigned char> pristine = read_file(path);

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(dir.str("absent.exss")), IoError);
  }
  SUBCASE("bad magic") {
    auto bytes = pristine;
    bytes[0] = 'X';
    write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("unsupported version") {
    auto bytes = pristine;
    bytes[4] = 2;
    write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("zero layer shape") {
    auto bytes = pristine;
    bytes[8] = bytes[9] = bytes[10] = bytes[11] = 0;  // first layer's rows
    write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("truncated header") {
    write_file(path, {pristine.begin(), pristine.begin() + 5});
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
  }
  SUBCASE("truncated weights") {
    write_file(path, {pristine.begin(), pristine.begin() + 30});
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
  }
  SUBCASE("truncated final mask") {
    write_file(path, {pristine.begin(), pristine.end() - 1});
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
  }
  SUBCASE("trailing bytes") {
    auto bytes = pristine;
    bytes.push_back(0);
    write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  SUBCASE("free mask inconsistent with the task masks") {
    // Flip the first bit of task 1's free mask: the loader recomputes what
    // the free mask must be and refuses the mismatch.
    const std::int64_t weights_end =
        4 + 2 + 2 + 8 * 2 + 2 + 4 + 4 * (3 * 5 + 4 * 3);
    const std::int64_t mask_bytes = (3 * 5 + 7) / 8 + (4 * 3 + 7) / 8;
    auto bytes = pristine;
    bytes[static_cast<std::size_t>(weights_end + mask_bytes)] ^= 0x80;
    write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), StateError);
  }
}
