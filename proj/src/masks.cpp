#include "cropsim/masks.hpp"

#include <fstream>
#include "json.hpp"
#include <stdexcept>

namespace cropsim {

int64_t Instance::area() const {
  int64_t n = 0;
  for (uint8_t v : mask) n += v != 0;
  return n;
}

void update_bbox(Instance& inst, int width) {
  int x0 = width, y0 = 1 << 30, x1 = 0, y1 = 0;
  for (size_t i = 0; i < inst.mask.size(); ++i) {
    if (!inst.mask[i]) continue;
    const int x = static_cast<int>(i % static_cast<size_t>(width)), y = static_cast<int>(i / static_cast<size_t>(width));
    x0 = std::min(x0, x);
    y0 = std::min(y0, y);
    x1 = std::max(x1, x + 1);
    y1 = std::max(y1, y + 1);
  }
  inst.bbox = x1 > 0 ? std::array<int, 4>{x0, y0, x1, y1} : std::array<int, 4>{0, 0, 0, 0};
}

std::vector<int64_t> rle_encode(const std::vector<uint8_t>& mask) {
  std::vector<int64_t> runs;
  uint8_t cur = 0;
  int64_t len = 0;
  for (uint8_t v : mask) {
    const uint8_t b = v ? 1 : 0;
    if (b != cur) {
      runs.push_back(len);
      cur = b;
      len = 0;
    }
    ++len;
  }
  runs.push_back(len);
  return runs;
}

std::vector<uint8_t> rle_decode(const std::vector<int64_t>& runs, int64_t size) {
  std::vector<uint8_t> mask;
  mask.reserve(static_cast<size_t>(size));
  uint8_t cur = 0;
  for (int64_t r : runs) {
    if (r < 0) throw std::invalid_argument("negative run length");
    mask.insert(mask.end(), static_cast<size_t>(r), cur);
    cur ^= 1;
  }
  if (static_cast<int64_t>(mask.size()) != size)
    throw std::invalid_argument("RLE covers " + std::to_string(mask.size()) + " pixels, expected " +
                                std::to_string(size));
  return mask;
}

void write_masks_json(const std::filesystem::path& path, const InstanceMasks& masks) {
  nlohmann::json j;
  j["height"] = masks.height;
  j["width"] = masks.width;
  j["instances"] = nlohmann::json::array();
  for (const auto& inst : masks.instances)
    j["instances"].push_back({{"label", inst.label}, {"score", inst.score}, {"bbox", inst.bbox}, {"rle", rle_encode(inst.mask)}});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump() << "\n";
}

InstanceMasks read_masks_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json j = nlohmann::json::parse(f);
  InstanceMasks m;
  m.height = j.at("height").get<int>();
  m.width = j.at("width").get<int>();
  for (const auto& ji : j.at("instances")) {
    Instance inst;
    inst.label = ji.value("label", 0);
    inst.score = ji.value("score", 1.0);
    inst.mask = rle_decode(ji.at("rle").get<std::vector<int64_t>>(), static_cast<int64_t>(m.height) * m.width);
    update_bbox(inst, m.width);
    m.instances.push_back(std::move(inst));
  }
  return m;
}

std::vector<uint8_t> union_mask(const InstanceMasks& masks) {
  std::vector<uint8_t> u(static_cast<size_t>(masks.height) * static_cast<size_t>(masks.width), 0);
  for (const auto& inst : masks.instances)
    for (size_t i = 0; i < u.size(); ++i) u[i] |= inst.mask[i];
  return u;
}

}  // namespace cropsim
