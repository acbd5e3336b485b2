#include "cropsim/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cropsim {

namespace {
constexpr char kMagic[] = "CROPSIM-CKPT\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;
}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  nlohmann::json header;
  header["meta"] = data.meta;
  header["arrays"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : data.arrays) {
    std::vector<int64_t> dims;
    for (int i = 0; i < t.shape().rank(); ++i) dims.push_back(t.dim(i));
    header["arrays"].push_back({{"name", name}, {"dtype", "float32"}, {"shape", dims}, {"offset", offset}});
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw CheckpointError("cannot write " + path.string());
    f.write(kMagic, kMagicLen);
    const uint64_t len = text.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : data.arrays)
      f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) throw CheckpointError("short write to " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[kMagicLen];
  f.read(magic, kMagicLen);
  if (!f || std::memcmp(magic, kMagic, kMagicLen) != 0) throw CheckpointError(path.string() + " is not a checkpoint");
  uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!f || len > (1ULL << 32)) throw CheckpointError("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  f.read(text.data(), static_cast<std::streamsize>(len));
  CheckpointData out;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw CheckpointError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  out.meta = header.at("meta");
  const auto data_start = f.tellg();
  for (const auto& a : header.at("arrays")) {
    if (a.value("dtype", "") != "float32") throw CheckpointError("unsupported dtype in " + path.string());
    auto dims = a.at("shape").get<std::vector<int64_t>>();
    Tensor<float> t{Shape(std::span<const int64_t>(dims))};
    f.seekg(data_start + static_cast<std::streamoff>(a.at("offset").get<uint64_t>()));
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) throw CheckpointError("truncated array " + a.at("name").get<std::string>() + " in " + path.string());
    out.arrays.emplace(a.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

}  // namespace cropsim
