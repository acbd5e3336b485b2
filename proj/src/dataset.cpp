#include "cropsim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

namespace cropsim {

namespace fs = std::filesystem;
using nlohmann::json;

int SequenceRecord::index_of(int time) const {
  auto it = std::lower_bound(times.begin(), times.end(), time);
  return it != times.end() && *it == time ? static_cast<int>(it - times.begin()) : -1;
}

namespace {

std::optional<double> optional_number(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw std::invalid_argument(std::string(key) + " must be a number or null");
  return it->get<double>();
}

ManifestEntry parse_entry(const json& j) {
  ManifestEntry e;
  e.sequence_id = j.at("sequence_id").get<std::string>();
  e.time = j.at("time").get<int>();
  e.image = j.at("image").get<std::string>();
  e.treatment = j.at("treatment").get<int>();
  e.bm_sw = optional_number(j, "bm_sw");
  e.bm_fb = optional_number(j, "bm_fb");
  e.split = j.at("split").get<std::string>();
  if (e.split != "train" && e.split != "val" && e.split != "test")
    throw std::invalid_argument("split must be train, val or test, got '" + e.split + "'");
  if (e.treatment < 0) throw std::invalid_argument("treatment must be non-negative");
  if ((e.bm_sw && *e.bm_sw < 0) || (e.bm_fb && *e.bm_fb < 0)) throw std::invalid_argument("biomass must be >= 0");
  return e;
}

}  // namespace

std::vector<SequenceRecord> load_manifest(const fs::path& path, bool require_biomass) {
  std::ifstream f(path);
  if (!f) throw ManifestError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  std::map<std::string, std::vector<ManifestEntry>> by_seq;
  std::vector<std::string> order;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ManifestEntry e;
    try {
      e = parse_entry(json::parse(line));
    } catch (const std::exception& ex) {
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": malformed record: " + ex.what());
    }
    if (require_biomass && (!e.bm_sw || !e.bm_fb))
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": sequence " + e.sequence_id + " time " +
                          std::to_string(e.time) + " has no biomass");
    auto [it, inserted] = by_seq.try_emplace(e.sequence_id);
    if (inserted) order.push_back(e.sequence_id);
    for (const auto& prev : it->second) {
      if (prev.time == e.time)
        throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": duplicate time " +
                            std::to_string(e.time) + " in sequence " + e.sequence_id);
      if (prev.treatment != e.treatment)
        throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": sequence " + e.sequence_id +
                            " changes treatment");
      if (prev.split != e.split)
        throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": sequence " + e.sequence_id +
                            " spans splits");
    }
    it->second.push_back(std::move(e));
  }
  std::vector<SequenceRecord> out;
  for (const auto& id : order) {
    auto& entries = by_seq[id];
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
    SequenceRecord r;
    r.sequence_id = id;
    r.treatment_id = entries[0].treatment;
    r.split = entries[0].split;
    for (const auto& e : entries) {
      r.times.push_back(e.time);
      r.images.push_back(base / e.image);
      if (e.bm_sw && e.bm_fb)
        r.biomass.push_back(std::array<double, 2>{*e.bm_sw, *e.bm_fb});
      else
        r.biomass.push_back(std::nullopt);
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw ManifestError("cannot write manifest " + path.string());
  for (const auto& e : entries) {
    json j = {{"sequence_id", e.sequence_id}, {"time", e.time},         {"image", e.image},
              {"treatment", e.treatment},     {"bm_sw", nullptr},       {"bm_fb", nullptr},
              {"split", e.split}};
    if (e.bm_sw) j["bm_sw"] = *e.bm_sw;
    if (e.bm_fb) j["bm_fb"] = *e.bm_fb;
    f << j.dump() << "\n";
  }
}

std::vector<SequenceRecord> filter_split(const std::vector<SequenceRecord>& records, const std::string& split) {
  std::vector<SequenceRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

BiomassNormalizer fit_biomass_normalizer(const std::vector<SequenceRecord>& records) {
  BiomassNormalizer norm;
  for (int s = 0; s < 2; ++s) {
    double sum = 0, sq = 0;
    int64_t n = 0;
    for (const auto& r : records)
      for (const auto& b : r.biomass)
        if (b) {
          sum += (*b)[static_cast<size_t>(s)];
          sq += (*b)[static_cast<size_t>(s)] * (*b)[static_cast<size_t>(s)];
          ++n;
        }
    if (n == 0) continue;
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
    norm.mean[static_cast<size_t>(s)] = mean;
    norm.stddev[static_cast<size_t>(s)] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return norm;
}

int treatment_count(const std::vector<SequenceRecord>& records) {
  int n = 0;
  for (const auto& r : records) n = std::max(n, r.treatment_id + 1);
  return n;
}

std::vector<PairIndex> sample_epoch(const std::vector<SequenceRecord>& records, uint64_t seed) {
  std::vector<PairIndex> pairs;
  for (size_t s = 0; s < records.size(); ++s)
    for (size_t i = 0; i < records[s].size(); ++i) pairs.push_back({s, i, i});
  if (pairs.empty()) throw ManifestError("training set is empty");
  std::mt19937_64 rng(seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  for (auto& p : pairs) {
    std::uniform_int_distribution<size_t> pick(0, records[p.seq].size() - 1);
    p.ref = pick(rng);
  }
  return pairs;
}

const Image& ImageStore::get(const fs::path& path) {
  auto key = path.string();
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(key, read_png(path)).first->second;
}

SamplePair make_pair(const std::vector<SequenceRecord>& records, const PairIndex& idx, ImageStore& store) {
  const SequenceRecord& r = records.at(idx.seq);
  SamplePair p;
  p.x_in = store.get(r.images.at(idx.in));
  p.x_ref = store.get(r.images.at(idx.ref));
  if (p.x_in.shape() != p.x_ref.shape()) throw ManifestError("images of sequence " + r.sequence_id + " differ in size");
  p.y_in = r.conditions(idx.in);
  p.y_gen = r.conditions(idx.ref);
  p.sequence_id = r.sequence_id;
  return p;
}

namespace {

template <typename F>
Image remap(const Image& img, int64_t out_h, int64_t out_w, F src) {
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Image out(Shape{c, out_h, out_w});
  for (int64_t y = 0; y < out_h; ++y)
    for (int64_t x = 0; x < out_w; ++x) {
      auto [sy, sx] = src(y, x);
      for (int64_t ch = 0; ch < c; ++ch) out[(ch * out_h + y) * out_w + x] = img[(ch * h + sy) * w + sx];
    }
  return out;
}

}  // namespace

Image hflip(const Image& img) {
  const int64_t w = img.dim(2);
  return remap(img, img.dim(1), w, [w](int64_t y, int64_t x) { return std::pair{y, w - 1 - x}; });
}

Image vflip(const Image& img) {
  const int64_t h = img.dim(1);
  return remap(img, h, img.dim(2), [h](int64_t y, int64_t x) { return std::pair{h - 1 - y, x}; });
}

Image rot90(const Image& img, int k) {
  k = ((k % 4) + 4) % 4;
  const int64_t h = img.dim(1), w = img.dim(2);
  switch (k) {
    case 1:  // out(y, x) = in(x, w-1-y)
      return remap(img, w, h, [w](int64_t y, int64_t x) { return std::pair{x, w - 1 - y}; });
    case 2:
      return remap(img, h, w, [h, w](int64_t y, int64_t x) { return std::pair{h - 1 - y, w - 1 - x}; });
    case 3:
      return remap(img, w, h, [h](int64_t y, int64_t x) { return std::pair{h - 1 - x, y}; });
    default:
      return img;
  }
}

Image translate(const Image& img, int dx, int dy) {
  const int64_t h = img.dim(1), w = img.dim(2);
  return remap(img, h, w, [=](int64_t y, int64_t x) {
    return std::pair{std::clamp<int64_t>(y - dy, 0, h - 1), std::clamp<int64_t>(x - dx, 0, w - 1)};
  });
}

void shadow_out(Image& img, const Rect& r, double alpha, float fill) {
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const float a = static_cast<float>(alpha);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = std::max(0, r.y0); y < std::min<int64_t>(h, r.y1); ++y)
      for (int64_t x = std::max(0, r.x0); x < std::min<int64_t>(w, r.x1); ++x) {
        float& v = img[(ch * h + y) * w + x];
        v = (1.0f - a) * v + a * fill;
      }
}

void augment(SamplePair& pair, const AugmentConfig& cfg, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto both = [&pair](auto&& f) {
    pair.x_in = f(pair.x_in);
    pair.x_ref = f(pair.x_ref);
  };
  const int64_t h = pair.x_in.dim(1), w = pair.x_in.dim(2);
  if (u(rng) < cfg.p_hflip) both([](const Image& im) { return hflip(im); });
  if (u(rng) < cfg.p_vflip) both([](const Image& im) { return vflip(im); });
  if (u(rng) < cfg.p_rot90 && h == w) {
    const int k = 1 + static_cast<int>(u(rng) * 3.0) % 3;
    both([k](const Image& im) { return rot90(im, k); });
  }
  if (u(rng) < cfg.p_translate) {
    const int max_dx = static_cast<int>(std::floor(cfg.max_translate * static_cast<double>(w)));
    const int max_dy = static_cast<int>(std::floor(cfg.max_translate * static_cast<double>(h)));
    const int dx = max_dx > 0 ? static_cast<int>(std::lround((2 * u(rng) - 1) * max_dx)) : 0;
    const int dy = max_dy > 0 ? static_cast<int>(std::lround((2 * u(rng) - 1) * max_dy)) : 0;
    if (dx != 0 || dy != 0) both([dx, dy](const Image& im) { return translate(im, dx, dy); });
  }
  if (u(rng) < cfg.p_shadow) {
    const int count = u(rng) < 0.5 ? 1 : 2;
    for (int i = 0; i < count; ++i) {
      const double area = cfg.shadow_min_area + u(rng) * (cfg.shadow_max_area - cfg.shadow_min_area);
      const double aspect = std::exp((2 * u(rng) - 1) * std::log(2.0));
      const int rw = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect) * w)), 1, static_cast<int>(w));
      const int rh = std::clamp(static_cast<int>(std::lround(area * h * w / rw)), 1, static_cast<int>(h));
      const int x0 = static_cast<int>(u(rng) * static_cast<double>(w - rw + 1));
      const int y0 = static_cast<int>(u(rng) * static_cast<double>(h - rh + 1));
      const double alpha = cfg.shadow_min_alpha + u(rng) * (cfg.shadow_max_alpha - cfg.shadow_min_alpha);
      shadow_out(pair.x_in, Rect{x0, y0, x0 + rw, y0 + rh}, alpha, cfg.shadow_fill);
    }
  }
}

}  // namespace cropsim
