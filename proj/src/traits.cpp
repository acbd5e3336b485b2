#include "cropsim/traits.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "cropsim/checkpoint.hpp"
#include "cropsim/ops.hpp"

namespace cropsim {

namespace fs = std::filesystem;
using VarF = nn::Var<float>;

const char* trait_kind_name(TraitKind k) { return k == TraitKind::kPLA ? "PLA" : "BM"; }

namespace {

TraitEstimate pla_of_pixels(int64_t pixels, int64_t image_pixels, double gsd_mm) {
  if (!(gsd_mm > 0)) throw std::invalid_argument("gsd must be > 0");
  TraitEstimate e;
  e.kind = TraitKind::kPLA;
  e.gsd_mm = gsd_mm;
  e.pixels = pixels;
  e.pla = static_cast<double>(pixels) * gsd_mm * gsd_mm;
  e.pla_percent = image_pixels > 0 ? 100.0 * static_cast<double>(pixels) / static_cast<double>(image_pixels) : 0.0;
  return e;
}

}  // namespace

TraitEstimate pla_from_masks(const InstanceMasks& masks, double gsd_mm) {
  const int64_t hw = static_cast<int64_t>(masks.height) * masks.width;
  if (masks.instances.empty()) {
    TraitEstimate e = pla_of_pixels(0, hw, gsd_mm);
    e.no_plant = true;
    return e;
  }
  const int cy = masks.height / 2, cx = masks.width / 2;
  const size_t centre = static_cast<size_t>(cy) * static_cast<size_t>(masks.width) + static_cast<size_t>(cx);
  const Instance* pick = nullptr;
  for (const auto& inst : masks.instances)
    if (inst.mask.size() > centre && inst.mask[centre]) {
      pick = &inst;
      break;
    }
  if (!pick) {
    double best = INFINITY;
    for (const auto& inst : masks.instances) {
      double sx = 0, sy = 0;
      int64_t n = 0;
      for (int y = 0; y < masks.height; ++y)
        for (int x = 0; x < masks.width; ++x)
          if (inst.mask[static_cast<size_t>(y * masks.width + x)]) {
            sx += x;
            sy += y;
            ++n;
          }
      if (n == 0) continue;
      const double d = std::hypot(sx / static_cast<double>(n) - cx, sy / static_cast<double>(n) - cy);
      if (d < best) {
        best = d;
        pick = &inst;
      }
    }
  }
  if (!pick) {
    TraitEstimate e = pla_of_pixels(0, hw, gsd_mm);
    e.no_plant = true;
    return e;
  }
  return pla_of_pixels(pick->area(), hw, gsd_mm);
}

TraitEstimate total_pla_from_masks(const InstanceMasks& masks, double gsd_mm) {
  const int64_t hw = static_cast<int64_t>(masks.height) * masks.width;
  if (masks.instances.empty()) {
    TraitEstimate e = pla_of_pixels(0, hw, gsd_mm);
    e.no_plant = true;
    return e;
  }
  const auto u = union_mask(masks);
  return pla_of_pixels(std::count(u.begin(), u.end(), uint8_t{1}), hw, gsd_mm);
}

InstanceMasks ColorSegmenter::operator()(const Image& img) const {
  if (img.shape().rank() != 3 || img.dim(0) != 3) throw ShapeError("segmenter expects a 3 x H x W image");
  const int h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
  const size_t hw = static_cast<size_t>(h) * static_cast<size_t>(w);
  std::vector<uint8_t> plant(hw, 0);
  std::vector<float> ratio(hw, 0.0f);
  for (size_t i = 0; i < hw; ++i) {
    const double r = (img[static_cast<int64_t>(i)] + 1.0) / 2.0;
    const double g = (img[static_cast<int64_t>(hw + i)] + 1.0) / 2.0;
    plant[i] = g - r > min_excess;
    ratio[i] = g > 0 ? static_cast<float>(r / g) : 0.0f;
  }
  InstanceMasks out;
  out.height = h;
  out.width = w;
  std::vector<int> comp(hw, -1);
  std::vector<size_t> stack;
  for (size_t seed = 0; seed < hw; ++seed) {
    if (!plant[seed] || comp[seed] >= 0) continue;
    Instance inst;
    inst.mask.assign(hw, 0);
    int64_t n = 0, wheat = 0;
    stack.assign(1, seed);
    comp[seed] = static_cast<int>(out.instances.size());
    while (!stack.empty()) {
      const size_t i = stack.back();
      stack.pop_back();
      inst.mask[i] = 1;
      ++n;
      wheat += ratio[i] > species_ratio;
      const int y = static_cast<int>(i) / w, x = static_cast<int>(i) % w;
      const int ny[4] = {y - 1, y + 1, y, y}, nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
        const size_t j = static_cast<size_t>(ny[k] * w + nx[k]);
        if (plant[j] && comp[j] < 0) {
          comp[j] = comp[seed];
          stack.push_back(j);
        }
      }
    }
    if (n < min_pixels) continue;
    inst.label = 2 * wheat >= n ? 0 : 1;
    inst.score = 1.0;
    update_bbox(inst, w);
    out.instances.push_back(std::move(inst));
  }
  return out;
}

std::vector<uint8_t> boundary_mask(const std::vector<uint8_t>& mask, int height, int width) {
  if (mask.size() != static_cast<size_t>(height) * static_cast<size_t>(width))
    throw std::invalid_argument("mask size does not match height x width");
  std::vector<uint8_t> out(mask.size(), 0);
  auto at = [&](int y, int x) -> uint8_t {
    if (y < 0 || y >= height || x < 0 || x >= width) return 0;
    return mask[static_cast<size_t>(y * width + x)];
  };
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const uint8_t c = at(y, x), n = at(y - 1, x), s = at(y + 1, x), e = at(y, x + 1), wv = at(y, x - 1);
      const bool dil = c || n || s || e || wv;
      // outside pixels count as background, so the image border erodes
      const bool inside = y > 0 && y + 1 < height && x > 0 && x + 1 < width;
      const bool ero = c && n && s && e && wv && inside;
      out[static_cast<size_t>(y * width + x)] = dil && !ero;
    }
  return out;
}

// ---------------------------------------------------------------- regressor

BiomassRegressor::BiomassRegressor(int width, std::mt19937_64& rng) : width_(width) {
  if (width < 1) throw std::invalid_argument("regressor width must be >= 1");
  auto affine = [](int64_t c, VarF& g, VarF& b) {
    Tensor<float> ones(Shape{1, c, 1, 1});
    ones.fill(1.0f);
    g = VarF(ones, true);
    b = VarF(Tensor<float>(Shape{1, c, 1, 1}), true);
  };
  const int64_t w = width;
  stem_ = nn::Conv2d<float>(3, w, 7, 2, 3, rng, false);
  stem_bn_ = nn::BatchNormStats<float>(w);
  affine(w, stem_g_, stem_b_);
  const int64_t widths[4] = {w, 2 * w, 4 * w, 8 * w};
  int64_t cin = w;
  for (int stage = 0; stage < 4; ++stage)
    for (int k = 0; k < 2; ++k) {
      const int64_t cout = widths[stage];
      const int stride = stage > 0 && k == 0 ? 2 : 1;
      Block b;
      b.conv1 = nn::Conv2d<float>(cin, cout, 3, stride, 1, rng, false);
      b.conv2 = nn::Conv2d<float>(cout, cout, 3, 1, 1, rng, false);
      b.bn1 = nn::BatchNormStats<float>(cout);
      b.bn2 = nn::BatchNormStats<float>(cout);
      affine(cout, b.g1, b.b1);
      affine(cout, b.g2, b.b2);
      b.has_proj = stride != 1 || cin != cout;
      if (b.has_proj) {
        b.proj = nn::Conv2d<float>(cin, cout, 1, stride, 0, rng, false);
        b.bn_proj = nn::BatchNormStats<float>(cout);
        affine(cout, b.gp, b.bp);
      }
      blocks_.push_back(std::move(b));
      cin = cout;
    }
  head_ = nn::Linear<float>(8 * w, 2, rng);
}

VarF BiomassRegressor::affine_bn(nn::BatchNormStats<float>& bn, const VarF& g, const VarF& b, const VarF& x,
                                 bool training) {
  return ag::add(ag::mul(bn(x, training), g), b);
}

VarF BiomassRegressor::forward(const VarF& x, bool training) {
  if (width_ == 0) throw std::logic_error("regressor is not initialised");
  VarF h = ag::relu(affine_bn(stem_bn_, stem_g_, stem_b_, stem_(x), training));
  h = ag::max_pool2d(h, 3, 2, 1);
  for (auto& b : blocks_) {
    VarF y = ag::relu(affine_bn(b.bn1, b.g1, b.b1, b.conv1(h), training));
    y = affine_bn(b.bn2, b.g2, b.b2, b.conv2(y), training);
    VarF skip = b.has_proj ? affine_bn(b.bn_proj, b.gp, b.bp, b.proj(h), training) : h;
    h = ag::relu(ag::add(y, skip));
  }
  return ag::relu(head_(ag::spatial_mean(h)));
}

std::vector<std::array<double, 2>> BiomassRegressor::predict(const Tensor<float>& x) {
  ag::NoGradGuard ng;
  const Tensor<float> y = forward(VarF(x), false).value();
  std::vector<std::array<double, 2>> out(static_cast<size_t>(y.dim(0)));
  for (int64_t i = 0; i < y.dim(0); ++i) out[static_cast<size_t>(i)] = {y[2 * i], y[2 * i + 1]};
  return out;
}

TraitEstimate BiomassRegressor::estimate(const Image& img) {
  TraitEstimate e;
  e.kind = TraitKind::kBM;
  e.bm = predict(img.reshaped(Shape{1, img.dim(0), img.dim(1), img.dim(2)}))[0];
  return e;
}

void BiomassRegressor::collect(nn::ParamSet<float>& ps, const std::string& prefix) {
  stem_.collect(ps, prefix + ".stem");
  stem_bn_.collect(ps, prefix + ".stem_bn");
  ps.add(prefix + ".stem_bn.gamma", stem_g_);
  ps.add(prefix + ".stem_bn.beta", stem_b_);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = prefix + ".block" + std::to_string(i);
    b.conv1.collect(ps, p + ".conv1");
    b.conv2.collect(ps, p + ".conv2");
    b.bn1.collect(ps, p + ".bn1");
    b.bn2.collect(ps, p + ".bn2");
    ps.add(p + ".bn1.gamma", b.g1);
    ps.add(p + ".bn1.beta", b.b1);
    ps.add(p + ".bn2.gamma", b.g2);
    ps.add(p + ".bn2.beta", b.b2);
    if (b.has_proj) {
      b.proj.collect(ps, p + ".proj");
      b.bn_proj.collect(ps, p + ".bn_proj");
      ps.add(p + ".bn_proj.gamma", b.gp);
      ps.add(p + ".bn_proj.beta", b.bp);
    }
  }
  head_.collect(ps, prefix + ".head");
}

void BiomassRegressor::set_head_bias(const std::array<double, 2>& b) {
  head_.bias.mutable_value()[0] = static_cast<float>(b[0]);
  head_.bias.mutable_value()[1] = static_cast<float>(b[1]);
}

void BiomassRegressor::save(const fs::path& path, const nlohmann::json& extra_meta) {
  CheckpointData d;
  nn::ParamSet<float> ps;
  collect(ps);
  for (const auto& p : ps.params) d.arrays[p.name] = p.var->value();
  for (const auto& b : ps.buffers) d.arrays[b.name] = *b.tensor;
  d.meta = {{"format", "cropsim-regressor"}, {"version", 1}, {"width", width_}};
  if (extra_meta.is_object())
    for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) d.meta[it.key()] = it.value();
  write_checkpoint(path, d);
}

BiomassRegressor BiomassRegressor::load(const fs::path& path) {
  CheckpointData d = read_checkpoint(path);
  if (d.meta.value("format", "") != "cropsim-regressor")
    throw CheckpointError(path.string() + ": not a biomass regressor checkpoint");
  std::mt19937_64 rng(0);
  BiomassRegressor reg(d.meta.at("width").get<int>(), rng);
  nn::ParamSet<float> ps;
  reg.collect(ps);
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<float>& {
    auto it = d.arrays.find(name);
    if (it == d.arrays.end()) throw CheckpointError(path.string() + ": missing array " + name);
    if (it->second.shape() != shape)
      throw CheckpointError(path.string() + ": array " + name + " has shape " + it->second.shape().str() +
                            ", expected " + shape.str());
    return it->second;
  };
  for (auto& p : ps.params) p.var->mutable_value() = fetch(p.name, p.var->shape());
  for (auto& b : ps.buffers) *b.tensor = fetch(b.name, b.tensor->shape());
  return reg;
}

std::vector<RegressorSample> regressor_samples(const std::vector<SequenceRecord>& records, ImageStore& store) {
  std::vector<RegressorSample> out;
  for (const auto& r : records)
    for (size_t i = 0; i < r.size(); ++i) {
      if (!r.biomass[i])
        throw ManifestError("sequence " + r.sequence_id + " day " + std::to_string(r.times[i]) +
                            ": biomass label required for regression");
      out.push_back({store.get(r.images[i]), *r.biomass[i]});
    }
  return out;
}

namespace {

Tensor<float> stack_samples(const std::vector<RegressorSample>& s, std::span<const size_t> idx, std::mt19937_64* aug) {
  std::vector<Image> imgs;
  for (size_t i : idx) {
    Image img = s[i].image;
    if (aug) {
      std::uniform_int_distribution<int> coin(0, 1), quarter(0, 3);
      if (coin(*aug)) img = hflip(img);
      if (coin(*aug)) img = vflip(img);
      img = rot90(img, quarter(*aug));
    }
    imgs.push_back(std::move(img));
  }
  const Shape one = imgs.front().shape();
  Tensor<float> t(Shape{static_cast<int64_t>(imgs.size()), one[0], one[1], one[2]});
  const int64_t per = one.numel();
  for (size_t i = 0; i < imgs.size(); ++i)
    std::copy(imgs[i].span().begin(), imgs[i].span().end(), t.span().begin() + static_cast<int64_t>(i) * per);
  return t;
}

Tensor<float> labels_of(const std::vector<RegressorSample>& s, std::span<const size_t> idx) {
  Tensor<float> y(Shape{static_cast<int64_t>(idx.size()), 2});
  for (size_t k = 0; k < idx.size(); ++k) {
    y[static_cast<int64_t>(2 * k)] = static_cast<float>(s[idx[k]].bm[0]);
    y[static_cast<int64_t>(2 * k + 1)] = static_cast<float>(s[idx[k]].bm[1]);
  }
  return y;
}

double eval_mse(BiomassRegressor& reg, const std::vector<RegressorSample>& s, size_t bs) {
  std::vector<size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  double total = 0;
  for (size_t i = 0; i < idx.size(); i += bs) {
    std::span<const size_t> chunk(idx.data() + i, std::min(bs, idx.size() - i));
    auto pred = reg.predict(stack_samples(s, chunk, nullptr));
    for (size_t k = 0; k < chunk.size(); ++k)
      for (int j = 0; j < 2; ++j) total += std::pow(pred[k][static_cast<size_t>(j)] - s[chunk[k]].bm[static_cast<size_t>(j)], 2);
  }
  return total / static_cast<double>(2 * s.size());
}

}  // namespace

RegressorFit train_biomass_regressor(BiomassRegressor& reg, const std::vector<RegressorSample>& train,
                                     const std::vector<RegressorSample>& val, const RegressorConfig& cfg,
                                     const std::function<void(int, double, double)>& on_epoch) {
  if (train.empty() || val.empty()) throw std::invalid_argument("regressor needs non-empty train and val sets");
  if (cfg.batch_size < 2) throw std::invalid_argument("regressor batch_size must be >= 2");
  std::array<double, 2> mean{0, 0};
  for (const auto& s : train)
    for (int j = 0; j < 2; ++j) mean[static_cast<size_t>(j)] += s.bm[static_cast<size_t>(j)] / static_cast<double>(train.size());
  reg.set_head_bias(mean);

  nn::ParamSet<float> ps;
  reg.collect(ps);
  nn::Adam<float> opt(nn::param_pointers(ps), nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(cfg.seed);
  const size_t bs = static_cast<size_t>(cfg.batch_size);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  RegressorFit fit;
  std::map<std::string, Tensor<float>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : ps.params) best[p.name] = p.var->value();
    for (const auto& b : ps.buffers) best[b.name] = *b.tensor;
  };
  double best_val = INFINITY;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int steps = 0;
    for (size_t i = 0; i + 2 <= order.size(); i += bs) {
      std::span<const size_t> chunk(order.data() + i, std::min(bs, order.size() - i));
      VarF x(stack_samples(train, chunk, cfg.augment ? &rng : nullptr));
      VarF y(labels_of(train, chunk));
      VarF d = ag::sub(reg.forward(x, true), y);
      VarF loss = ag::mean(ag::mul(d, d));
      std::vector<VarF> params;
      for (const auto& p : ps.params) params.push_back(*p.var);
      auto grads = ag::grad<float>(std::vector<VarF>{loss}, {}, params, false);
      for (size_t k = 0; k < params.size(); ++k) ps.params[k].var->grad() = grads[k].value();
      opt.step();
      total += loss.item();
      ++steps;
    }
    const double train_mse = total / std::max(steps, 1);
    const double val_mse = eval_mse(reg, val, bs);
    fit.train_mse.push_back(train_mse);
    fit.val_mse.push_back(val_mse);
    if (on_epoch) on_epoch(epoch, train_mse, val_mse);
    if (val_mse < best_val) {
      best_val = val_mse;
      fit.best_epoch = epoch;
      since_best = 0;
      snapshot();
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (auto& p : ps.params) p.var->mutable_value() = best.at(p.name);
  for (auto& b : ps.buffers) *b.tensor = best.at(b.name);
  return fit;
}

MaeMe trait_mae_me(const std::vector<double>& gen, const std::vector<double>& ref) {
  if (gen.size() != ref.size())
    throw std::invalid_argument("trait lists differ in length (" + std::to_string(gen.size()) + " vs " +
                                std::to_string(ref.size()) + ")");
  if (gen.empty()) return {};
  MaeMe r;
  for (size_t i = 0; i < gen.size(); ++i) {
    r.mae += std::abs(gen[i] - ref[i]);
    r.me += gen[i] - ref[i];
  }
  r.mae /= static_cast<double>(gen.size());
  r.me /= static_cast<double>(gen.size());
  return r;
}

// ---------------------------------------------------------------- AP / AR

double mask_iou(const Instance& a, const Instance& b) {
  if (a.mask.size() != b.mask.size()) throw std::invalid_argument("mask sizes differ");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.mask.size(); ++i) {
    inter += a.mask[i] && b.mask[i];
    uni += a.mask[i] || b.mask[i];
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double box_iou(const Instance& a, const Instance& b) {
  auto area = [](const std::array<int, 4>& r) {
    return static_cast<double>(std::max(0, r[2] - r[0])) * static_cast<double>(std::max(0, r[3] - r[1]));
  };
  const std::array<int, 4> i{std::max(a.bbox[0], b.bbox[0]), std::max(a.bbox[1], b.bbox[1]),
                             std::min(a.bbox[2], b.bbox[2]), std::min(a.bbox[3], b.bbox[3])};
  const double inter = area(i), uni = area(a.bbox) + area(b.bbox) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

ApAr ap_ar(const std::vector<InstanceMasks>& pred, const std::vector<InstanceMasks>& truth, IouType type) {
  if (pred.size() != truth.size()) throw std::invalid_argument("prediction and truth image counts differ");
  constexpr int kThresholds = 10, kRecallPoints = 101, kMaxDets = 100;
  std::vector<int> labels;
  for (const auto& t : truth)
    for (const auto& inst : t.instances) labels.push_back(inst.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  if (labels.empty()) return {};

  auto iou = [type](const Instance& a, const Instance& b) { return type == IouType::kMask ? mask_iou(a, b) : box_iou(a, b); };
  ApAr out;
  for (int label : labels) {
    struct Det {
      double score;
      size_t image;
      size_t index;
    };
    std::vector<Det> dets;
    int64_t npos = 0;
    std::vector<std::vector<const Instance*>> gts(truth.size()), dts(truth.size());
    for (size_t im = 0; im < truth.size(); ++im) {
      for (const auto& g : truth[im].instances)
        if (g.label == label) gts[im].push_back(&g);
      npos += static_cast<int64_t>(gts[im].size());
      for (const auto& d : pred[im].instances)
        if (d.label == label) dts[im].push_back(&d);
      std::stable_sort(dts[im].begin(), dts[im].end(), [](const Instance* a, const Instance* b) { return a->score > b->score; });
      if (dts[im].size() > kMaxDets) dts[im].resize(kMaxDets);
    }
    for (size_t im = 0; im < truth.size(); ++im)
      for (size_t k = 0; k < dts[im].size(); ++k) dets.push_back({dts[im][k]->score, im, k});
    std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });

    std::vector<std::vector<std::vector<double>>> ious(truth.size());
    for (size_t im = 0; im < truth.size(); ++im) {
      ious[im].assign(dts[im].size(), std::vector<double>(gts[im].size()));
      for (size_t d = 0; d < dts[im].size(); ++d)
        for (size_t g = 0; g < gts[im].size(); ++g) ious[im][d][g] = iou(*dts[im][d], *gts[im][g]);
    }

    for (int ti = 0; ti < kThresholds; ++ti) {
      const double thr = 0.5 + 0.05 * ti;
      // greedy matching within each image, detections in score order
      std::vector<std::vector<uint8_t>> tp(truth.size());
      for (size_t im = 0; im < truth.size(); ++im) {
        tp[im].assign(dts[im].size(), 0);
        std::vector<uint8_t> taken(gts[im].size(), 0);
        for (size_t d = 0; d < dts[im].size(); ++d) {
          double best = std::min(thr, 1 - 1e-10);
          int m = -1;
          for (size_t g = 0; g < gts[im].size(); ++g) {
            if (taken[g] || ious[im][d][g] < best) continue;
            best = ious[im][d][g];
            m = static_cast<int>(g);
          }
          if (m >= 0) {
            taken[static_cast<size_t>(m)] = 1;
            tp[im][d] = 1;
          }
        }
      }
      std::vector<double> recall, precision;
      int64_t ctp = 0, cfp = 0;
      for (const auto& d : dets) {
        (tp[d.image][d.index] ? ctp : cfp) += 1;
        recall.push_back(static_cast<double>(ctp) / static_cast<double>(npos));
        precision.push_back(static_cast<double>(ctp) / static_cast<double>(ctp + cfp));
      }
      for (size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
      double ap = 0;
      for (int r = 0; r < kRecallPoints; ++r) {
        const double level = r / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), level);
        if (it != recall.end()) ap += precision[static_cast<size_t>(it - recall.begin())];
      }
      ap /= kRecallPoints;
      const double ar = recall.empty() ? 0.0 : recall.back();
      out.ap += ap;
      out.ar += ar;
      if (ti == 0) out.ap50 += ap;
      if (ti == 5) out.ap75 += ap;
    }
  }
  const double nl = static_cast<double>(labels.size());
  out.ap /= nl * kThresholds;
  out.ar /= nl * kThresholds;
  out.ap50 /= nl;
  out.ap75 /= nl;
  return out;
}

void write_traits_csv(const fs::path& path, const std::vector<TraitRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "image_id,kind,pla_mm2,pla_percent,gsd_mm,pixels,bm_sw,bm_fb,flags\n";
  f.precision(10);
  for (const auto& r : rows) {
    const auto& e = r.est;
    f << r.image_id << ',' << trait_kind_name(e.kind) << ',';
    if (e.kind == TraitKind::kPLA)
      f << e.pla << ',' << e.pla_percent << ',' << e.gsd_mm << ',' << e.pixels << ",,";
    else
      f << ",,,," << e.bm[0] << ',' << e.bm[1];
    f << ',' << (e.no_plant ? "no-plant" : "") << '\n';
  }
}

}  // namespace cropsim
