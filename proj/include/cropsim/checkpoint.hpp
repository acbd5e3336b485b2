#pragma once

// Self-describing checkpoint container: a JSON header (metadata plus an
// index of named float32 arrays) followed by the raw array data.
//
//   "CROPSIM-CKPT\n" | uint64 header length | header JSON | array bytes

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "cropsim/tensor.hpp"
#include "json.hpp"

namespace cropsim {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointData {
  nlohmann::json meta;
  std::map<std::string, Tensor<float>> arrays;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

}  // namespace cropsim
