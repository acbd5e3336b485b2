#pragma once

// Instance masks and their run-length-encoded JSON interchange form.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cropsim {

struct Instance {
  std::vector<uint8_t> mask;  // H x W, row-major, 0/1
  double score = 1.0;
  int label = 0;  // species: 0 = spring wheat, 1 = faba bean
  std::array<int, 4> bbox{0, 0, 0, 0};  // x0, y0, x1, y1 (exclusive)

  int64_t area() const;
};

struct InstanceMasks {
  int height = 0;
  int width = 0;
  std::vector<Instance> instances;
};

/// Recomputes bbox from the mask pixels.
void update_bbox(Instance& inst, int width);

/// Row-major runs alternating background/foreground, starting with background.
std::vector<int64_t> rle_encode(const std::vector<uint8_t>& mask);
std::vector<uint8_t> rle_decode(const std::vector<int64_t>& runs, int64_t size);

void write_masks_json(const std::filesystem::path& path, const InstanceMasks& masks);
InstanceMasks read_masks_json(const std::filesystem::path& path);

/// Union of all instance masks.
std::vector<uint8_t> union_mask(const InstanceMasks& masks);

}  // namespace cropsim
