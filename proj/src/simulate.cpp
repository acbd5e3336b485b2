#include "cropsim/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "cropsim/synth.hpp"
#include "cropsim/training.hpp"

namespace cropsim {

namespace fs = std::filesystem;

uint64_t mix_seed(uint64_t a, uint64_t b) {
  // splitmix64 finaliser over the combined words
  uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Tensor<float> predict_images(Generator<float>& gen, const std::vector<Image>& x_in, const std::vector<ConditionSet>& y_in,
                             const std::vector<ConditionSet>& y_gen, const std::vector<uint64_t>& noise_seeds,
                             size_t batch) {
  const size_t n = x_in.size();
  if (y_in.size() != n || y_gen.size() != n || noise_seeds.size() != n)
    throw std::invalid_argument("predict_images: inputs, conditions and seeds differ in count");
  if (n == 0) throw std::invalid_argument("predict_images: empty batch");
  const Shape s = x_in[0].shape();
  Tensor<float> out(Shape{static_cast<int64_t>(n), s[0], s[1], s[2]});
  const int64_t per = s.numel();
  const int64_t nd = gen.config().noise_dim;
  batch = std::max<size_t>(batch, 1);
  for (size_t i = 0; i < n; i += batch) {
    const size_t m = std::min(batch, n - i);
    std::vector<Image> xs(x_in.begin() + static_cast<std::ptrdiff_t>(i), x_in.begin() + static_cast<std::ptrdiff_t>(i + m));
    Tensor<float> z(Shape{static_cast<int64_t>(m), nd});
    for (size_t k = 0; k < m; ++k) {
      std::mt19937_64 rng(noise_seeds[i + k]);
      const Tensor<float> zk = gen.sample_noise(1, rng);
      std::copy(zk.data(), zk.data() + nd, z.data() + static_cast<int64_t>(k) * nd);
    }
    const Tensor<float> g =
        generate_images(gen, stack_images(xs), std::span<const ConditionSet>(y_in.data() + i, m),
                        std::span<const ConditionSet>(y_gen.data() + i, m), z);
    std::copy(g.data(), g.data() + static_cast<int64_t>(m) * per, out.data() + static_cast<int64_t>(i) * per);
  }
  return out;
}

std::optional<std::array<double, 2>> biomass_at(const SequenceRecord& r, int t) {
  std::vector<std::pair<int, std::array<double, 2>>> known;
  for (size_t i = 0; i < r.size(); ++i)
    if (r.biomass[i]) known.push_back({r.times[i], *r.biomass[i]});
  if (known.empty()) return std::nullopt;
  if (t <= known.front().first) return known.front().second;
  if (t >= known.back().first) return known.back().second;
  for (size_t k = 1; k < known.size(); ++k)
    if (t <= known[k].first) {
      const auto& [t0, b0] = known[k - 1];
      const auto& [t1, b1] = known[k];
      const double a = static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
      return std::array<double, 2>{b0[0] + a * (b1[0] - b0[0]), b0[1] + a * (b1[1] - b0[1])};
    }
  return known.back().second;
}

ConditionSet conditions_at(const SequenceRecord& r, int t) {
  const int i = r.index_of(t);
  if (i >= 0) return r.conditions(static_cast<size_t>(i));
  return {t, r.treatment_id, biomass_at(r, t)};
}

// ---------------------------------------------------------------- eval

namespace {

struct TraitAccumulator {
  std::vector<double> gen_sw, ref_sw, gen_fb, ref_fb;
  std::vector<uint8_t> mixture;

  void add(const std::array<double, 2>& est, const std::array<double, 2>& ref, bool mix) {
    gen_sw.push_back(est[0]);
    gen_fb.push_back(est[1]);
    ref_sw.push_back(ref[0]);
    ref_fb.push_back(ref[1]);
    mixture.push_back(mix);
  }

  TraitSummary summary() const {
    TraitSummary s;
    auto fill = [&](TraitErrorSet& e, bool only_mix) {
      std::vector<double> gs, rs, gf, rf;
      for (size_t i = 0; i < gen_sw.size(); ++i) {
        if (only_mix && !mixture[i]) continue;
        gs.push_back(gen_sw[i]);
        rs.push_back(ref_sw[i]);
        gf.push_back(gen_fb[i]);
        rf.push_back(ref_fb[i]);
      }
      e.n = static_cast<int64_t>(gs.size());
      e.sw = trait_mae_me(gs, rs);
      e.fb = trait_mae_me(gf, rf);
    };
    fill(s.all, false);
    fill(s.mixture, true);
    return s;
  }
};

std::vector<std::array<double, 2>> estimate_batch(BiomassRegressor& reg, const Tensor<float>& images) {
  std::vector<std::array<double, 2>> out;
  const int64_t n = images.dim(0), per = images.numel() / n;
  for (int64_t i = 0; i < n; i += 32) {
    const int64_t m = std::min<int64_t>(32, n - i);
    Tensor<float> chunk(Shape{m, images.dim(1), images.dim(2), images.dim(3)});
    std::copy(images.data() + i * per, images.data() + (i + m) * per, chunk.data());
    for (const auto& p : reg.predict(chunk)) out.push_back(p);
  }
  return out;
}

Tensor<double> concat_rows(const std::vector<Tensor<double>>& parts) {
  int64_t n = 0;
  for (const auto& p : parts) n += p.dim(0);
  const int64_t d = parts.front().dim(1);
  Tensor<double> out(Shape{n, d});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + off);
    off += p.numel();
  }
  return out;
}

}  // namespace

EvalResult evaluate(Generator<float>& gen, const std::vector<SequenceRecord>& records, ImageStore& store,
                    const FeatureExtractor& fx, BiomassRegressor* regressor, const EvalConfig& cfg) {
  if (records.empty()) throw std::invalid_argument("evaluate: no sequences");
  bool labelled = regressor != nullptr;
  for (const auto& r : records)
    for (const auto& b : r.biomass) labelled = labelled && b.has_value();

  std::vector<PairMetrics> pairs;
  std::vector<Tensor<double>> feat_gen, feat_ref;
  TraitAccumulator gen_traits, real_traits;
  uint64_t pair_index = 0;
  for (const auto& r : records) {
    std::vector<Image> xs, refs;
    std::vector<ConditionSet> yi, yg;
    std::vector<uint64_t> seeds;
    std::vector<std::pair<size_t, size_t>> ij;
    for (size_t i = 0; i < r.size(); ++i)
      for (size_t j = 0; j < r.size(); ++j) {
        xs.push_back(store.get(r.images[i]));
        refs.push_back(store.get(r.images[j]));
        yi.push_back(r.conditions(i));
        yg.push_back(r.conditions(j));
        seeds.push_back(mix_seed(cfg.seed, pair_index++));
        ij.push_back({i, j});
      }
    const Tensor<float> g = predict_images(gen, xs, yi, yg, seeds, cfg.batch);
    const Tensor<float> ref = stack_images(refs);
    const std::vector<double> perc = perceptual_distance_batch(g, ref, fx);
    for (size_t k = 0; k < ij.size(); ++k) {
      PairMetrics p;
      p.sequence_id = r.sequence_id;
      p.t_in = r.times[ij[k].first];
      p.t_gen = r.times[ij[k].second];
      p.ms_ssim = ms_ssim(unstack_image(g, static_cast<int64_t>(k)), refs[k]);
      p.perceptual = perc[k];
      pairs.push_back(p);
    }
    if (cfg.fid) {
      feat_gen.push_back(fx.pooled_features(g));
      feat_ref.push_back(fx.pooled_features(ref));
    }
    if (labelled) {
      const bool mix = cfg.is_mixture && cfg.is_mixture(r.treatment_id);
      const auto est = estimate_batch(*regressor, g);
      for (size_t k = 0; k < ij.size(); ++k) gen_traits.add(est[k], *r.biomass[ij[k].second], mix);
      std::vector<Image> own(r.images.size());
      for (size_t j = 0; j < r.size(); ++j) own[j] = store.get(r.images[j]);
      const auto real_est = estimate_batch(*regressor, stack_images(own));
      for (size_t j = 0; j < r.size(); ++j) real_traits.add(real_est[j], *r.biomass[j], mix);
    }
  }
  std::optional<double> fid_value;
  if (cfg.fid) fid_value = fid(concat_rows(feat_ref), concat_rows(feat_gen));
  EvalResult out;
  out.report = bucket_report(std::move(pairs), fid_value, fx.provenance());
  if (labelled) {
    out.generated = gen_traits.summary();
    out.real = real_traits.summary();
  }
  return out;
}

void write_eval_json(const fs::path& path, const EvalResult& r, const nlohmann::json& extra) {
  nlohmann::json j;
  j["extractor"] = r.report.extractor;
  j["fid"] = r.report.fid ? nlohmann::json(*r.report.fid) : nlohmann::json(nullptr);
  auto stats = [](const BucketStats& b) {
    return nlohmann::json{{"count", b.count}, {"ms_ssim", b.ms_ssim}, {"perceptual", b.perceptual}};
  };
  for (const char* name : {"T0", "ST", "LT"}) {
    auto it = r.report.buckets.find(name);
    if (it != r.report.buckets.end()) j["buckets"][name] = stats(it->second);
  }
  j["mean"] = stats(r.report.overall);
  auto errors = [](const TraitErrorSet& e) {
    return nlohmann::json{{"n", e.n},          {"mae_sw", e.sw.mae}, {"me_sw", e.sw.me},
                          {"mae_fb", e.fb.mae}, {"me_fb", e.fb.me},   {"mae_mean", e.mean_mae()}};
  };
  if (r.generated) j["traits"]["generated"] = {{"all", errors(r.generated->all)}, {"mixture", errors(r.generated->mixture)}};
  if (r.real) j["traits"]["real"] = {{"all", errors(r.real->all)}, {"mixture", errors(r.real->mixture)}};
  if (extra.is_object())
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------- variability

namespace {

Variability variability_of(const Tensor<float>& draws) {
  const int64_t n = draws.dim(0), c = draws.dim(1), h = draws.dim(2), w = draws.dim(3), hw = h * w;
  Variability v;
  v.draws = n;
  v.stddev = Tensor<double>(Shape{h, w});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t p = 0; p < hw; ++p) {
      double mean = 0, sq = 0;
      for (int64_t k = 0; k < n; ++k) mean += 0.5 * draws[(k * c + ch) * hw + p];
      mean /= static_cast<double>(n);
      for (int64_t k = 0; k < n; ++k) sq += std::pow(0.5 * draws[(k * c + ch) * hw + p] - mean, 2);
      v.stddev[p] += std::sqrt(sq / static_cast<double>(n)) / static_cast<double>(c);
    }
  v.visual = Image(Shape{3, h, w});
  for (int64_t p = 0; p < hw; ++p) {
    const double s = v.stddev[p];
    v.mean += s / static_cast<double>(hw);
    if (s > v.max) {
      v.max = s;
      v.argmax = p;
    }
    const float g = static_cast<float>(std::min(1.0, 4.0 * s) * 2.0 - 1.0);
    for (int ch = 0; ch < 3; ++ch) v.visual[ch * hw + p] = g;
  }
  return v;
}

Tensor<float> draw_many(Generator<float>& gen, const Image& x_in, const ConditionSet& y_in, const ConditionSet& y_gen,
                        int draws, uint64_t seed) {
  if (draws < 1) throw std::invalid_argument("variability needs at least one draw");
  std::vector<Image> xs(static_cast<size_t>(draws), x_in);
  std::vector<ConditionSet> yi(static_cast<size_t>(draws), y_in), yg(static_cast<size_t>(draws), y_gen);
  std::vector<uint64_t> seeds;
  for (int k = 0; k < draws; ++k) seeds.push_back(mix_seed(seed, static_cast<uint64_t>(k)));
  return predict_images(gen, xs, yi, yg, seeds);
}

}  // namespace

Variability variability(Generator<float>& gen, const Image& x_in, const ConditionSet& y_in, const ConditionSet& y_gen,
                        int draws, uint64_t seed) {
  return variability_of(draw_many(gen, x_in, y_in, y_gen, draws, seed));
}

void write_stddev_csv(const fs::path& path, const Tensor<double>& stddev) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.precision(8);
  for (int64_t y = 0; y < stddev.dim(0); ++y) {
    for (int64_t x = 0; x < stddev.dim(1); ++x) f << (x ? "," : "") << stddev[y * stddev.dim(1) + x];
    f << '\n';
  }
}

// ---------------------------------------------------------------- time sweep

TimeSweep sweep_time(Generator<float>& gen, const SequenceRecord& r, size_t input, ImageStore& store,
                     const FeatureExtractor& fx, BiomassRegressor* regressor, const TimeSweepConfig& cfg) {
  if (cfg.times.empty()) throw std::invalid_argument("time sweep needs at least one day");
  if (input >= r.size()) throw std::out_of_range("input index outside sequence " + r.sequence_id);
  const Image x = store.get(r.images[input]);
  const ConditionSet y_in = r.conditions(input);
  const ColorSegmenter seg;
  TimeSweep out;
  std::vector<Image> ref_row, gen_row, var_row;
  const Image blank(x.shape(), 1.0f);
  for (int t : cfg.times) {
    const ConditionSet y_gen = conditions_at(r, t);
    const Tensor<float> draws = draw_many(gen, x, y_in, y_gen, std::max(cfg.draws, 1), mix_seed(cfg.seed, static_cast<uint64_t>(t + 100000)));
    const Variability v = variability_of(draws);
    Image g = unstack_image(draws, 0);
    TimeSweepRow row;
    row.sequence_id = r.sequence_id;
    row.t_in = r.times[input];
    row.t_gen = t;
    row.ood = t < r.times.front() || t > r.times.back();
    row.std_mean = v.mean;
    row.pla_gen = static_cast<double>(total_pla_from_masks(seg(g), cfg.gsd_mm).pla);
    if (regressor) row.bm_gen = regressor->estimate(g).bm;
    const int j = r.index_of(t);
    if (j >= 0 && !row.ood) {
      const Image& ref = store.get(r.images[static_cast<size_t>(j)]);
      row.has_reference = true;
      row.ms_ssim = ms_ssim(g, ref);
      row.perceptual = perceptual_distance(g, ref, fx);
      row.pla_ref = total_pla_from_masks(seg(ref), cfg.gsd_mm).pla;
      if (regressor) row.bm_ref = regressor->estimate(ref).bm;
      ref_row.push_back(ref);
    } else {
      ref_row.push_back(blank);
    }
    if (row.ood) draw_border(g, 1.0f, 0.3f, -1.0f, 2);
    gen_row.push_back(g);
    var_row.push_back(v.visual);
    out.rows.push_back(row);
  }
  std::vector<Image> cells = ref_row;
  cells.insert(cells.end(), gen_row.begin(), gen_row.end());
  cells.insert(cells.end(), var_row.begin(), var_row.end());
  out.grid = tile_grid(cells, 3, static_cast<int>(cfg.times.size()));
  return out;
}

void write_time_sweep_csv(const fs::path& path, const std::vector<TimeSweepRow>& rows, bool append) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const bool header = !append || !fs::exists(path);
  std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  if (header)
    f << "sequence_id,t_in,t_gen,delta_t,bucket,ood,ms_ssim,perceptual,pla_gen_mm2,pla_ref_mm2,delta_pla,bm_sw_gen,"
         "bm_fb_gen,bm_sw_ref,bm_fb_ref,delta_bm_sw,delta_bm_fb,std_mean\n";
  f.precision(8);
  for (const auto& r : rows) {
    const int dt = r.t_gen - r.t_in;
    f << r.sequence_id << ',' << r.t_in << ',' << r.t_gen << ',' << dt << ',' << bucket_name(bucket_of(dt)) << ','
      << (r.ood ? 1 : 0) << ',';
    if (r.has_reference)
      f << r.ms_ssim << ',' << r.perceptual << ',' << r.pla_gen << ',' << r.pla_ref << ',' << r.pla_gen - r.pla_ref;
    else
      f << ",," << r.pla_gen << ",,";
    f << ',';
    if (r.bm_gen) f << (*r.bm_gen)[0] << ',' << (*r.bm_gen)[1];
    else f << ',';
    f << ',';
    if (r.bm_ref) f << (*r.bm_ref)[0] << ',' << (*r.bm_ref)[1];
    else f << ',';
    f << ',';
    if (r.bm_gen && r.bm_ref) f << (*r.bm_gen)[0] - (*r.bm_ref)[0] << ',' << (*r.bm_gen)[1] - (*r.bm_ref)[1];
    else f << ',';
    f << ',' << r.std_mean << '\n';
  }
}

// ---------------------------------------------------------------- treatment change

TreatmentSweep sweep_treatment(Generator<float>& gen, BiomassRegressor& regressor,
                               const std::vector<SequenceRecord>& records, ImageStore& store,
                               const TreatmentSweepConfig& cfg) {
  const int n_treatments = gen.config().cond.n_treatments;
  std::map<int, int> change = cfg.change;
  if (change.empty())
    for (int c = 0; c < n_treatments; ++c)
      if (!treatment_info(c).high_density && density_partner(c) < n_treatments) change[c] = density_partner(c);
  for (const auto& [from, to] : change)
    if (from < 0 || from >= n_treatments || to < 0 || to >= n_treatments)
      throw ConditionError("treatment change " + std::to_string(from) + " -> " + std::to_string(to) +
                           " is outside the model's " + std::to_string(n_treatments) + " treatments");

  std::vector<Image> xs;
  std::vector<ConditionSet> yi, y_orig, y_chg;
  std::vector<uint64_t> seeds;
  TreatmentSweep out;
  for (const auto& r : records) {
    auto it = change.find(r.treatment_id);
    if (it == change.end()) continue;
    const int c_in = it->first, c_gen = it->second;
    const int t_gen = cfg.t_gen > 0 ? cfg.t_gen : r.times.back();
    auto b_orig = biomass_at(r, t_gen);
    if (!b_orig) b_orig = expected_biomass(c_in, t_gen, cfg.image_size);
    const auto e_in = expected_biomass(c_in, t_gen, cfg.image_size), e_gen = expected_biomass(c_gen, t_gen, cfg.image_size);
    std::array<double, 2> b_chg{};
    for (size_t s = 0; s < 2; ++s) b_chg[s] = e_in[s] > 1e-12 ? (*b_orig)[s] * e_gen[s] / e_in[s] : e_gen[s];
    if (c_gen == c_in) b_chg = *b_orig;
    for (size_t i = 0; i < r.size(); ++i) {
      if (r.times[i] >= t_gen) continue;
      xs.push_back(store.get(r.images[i]));
      yi.push_back(r.conditions(i));
      y_orig.push_back({t_gen, c_in, b_orig});
      y_chg.push_back({t_gen, c_gen, b_chg});
      seeds.push_back(mix_seed(cfg.seed, seeds.size()));
      TreatmentReplicate rep;
      rep.sequence_id = r.sequence_id;
      rep.t_in = r.times[i];
      rep.t_gen = t_gen;
      rep.c_in = c_in;
      rep.c_gen = c_gen;
      out.replicates.push_back(rep);
    }
  }
  if (xs.empty()) return out;
  const Tensor<float> g_orig = predict_images(gen, xs, yi, y_orig, seeds);
  const Tensor<float> g_chg = predict_images(gen, xs, yi, y_chg, seeds);
  const auto e_orig = estimate_batch(regressor, g_orig), e_chg = estimate_batch(regressor, g_chg);
  for (size_t k = 0; k < out.replicates.size(); ++k) {
    out.replicates[k].original = e_orig[k];
    out.replicates[k].changed = e_chg[k];
  }

  std::set<int> seen;
  std::vector<Image> cells;
  for (size_t k = 0; k < out.replicates.size(); ++k) {
    const int c = out.replicates[k].c_in;
    if (!seen.insert(c).second) continue;
    cells.push_back(xs[k]);
    cells.push_back(unstack_image(g_orig, static_cast<int64_t>(k)));
    cells.push_back(unstack_image(g_chg, static_cast<int64_t>(k)));
  }
  out.grid = tile_grid(cells, static_cast<int>(seen.size()), 3);

  for (int c : seen)
    for (int variant = 0; variant < 2; ++variant) {
      TreatmentRow row;
      row.treatment = c;
      row.variant = variant ? "changed" : "original";
      std::vector<std::array<double, 2>> vals;
      std::array<double, 2> target{0, 0};
      for (size_t k = 0; k < out.replicates.size(); ++k) {
        if (out.replicates[k].c_in != c) continue;
        row.c_gen = variant ? out.replicates[k].c_gen : c;
        vals.push_back(variant ? out.replicates[k].changed : out.replicates[k].original);
        const auto& cond = variant ? y_chg[k] : y_orig[k];
        for (size_t s = 0; s < 2; ++s) target[s] += (*cond.b)[s];
      }
      row.n = static_cast<int64_t>(vals.size());
      const double n = static_cast<double>(vals.size());
      std::vector<double> totals;
      for (const auto& v : vals) totals.push_back(v[0] + v[1]);
      for (size_t s = 0; s < 2; ++s) {
        double m = 0, sq = 0;
        for (const auto& v : vals) m += v[s] / n;
        for (const auto& v : vals) sq += (v[s] - m) * (v[s] - m);
        row.mean[s] = m;
        row.sd[s] = vals.size() > 1 ? std::sqrt(sq / (n - 1)) : 0.0;
        row.target[s] = target[s] / n;
      }
      double m = 0, sq = 0;
      for (double t : totals) m += t / n;
      for (double t : totals) sq += (t - m) * (t - m);
      row.total_mean = m;
      row.total_sd = vals.size() > 1 ? std::sqrt(sq / (n - 1)) : 0.0;
      out.rows.push_back(row);
    }
  return out;
}

void write_treatment_csv(const fs::path& path, const std::vector<TreatmentRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "treatment,variant,c_gen,n,mean_sw,sd_sw,mean_fb,sd_fb,mean_total,sd_total,target_sw,target_fb\n";
  f.precision(8);
  for (const auto& r : rows)
    f << r.treatment << ',' << r.variant << ',' << r.c_gen << ',' << r.n << ',' << r.mean[0] << ',' << r.sd[0] << ','
      << r.mean[1] << ',' << r.sd[1] << ',' << r.total_mean << ',' << r.total_sd << ',' << r.target[0] << ','
      << r.target[1] << '\n';
}

void write_replicates_csv(const fs::path& path, const std::vector<TreatmentReplicate>& reps) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "sequence_id,t_in,t_gen,c_in,c_gen,orig_sw,orig_fb,changed_sw,changed_fb,diff_total\n";
  f.precision(8);
  for (const auto& r : reps)
    f << r.sequence_id << ',' << r.t_in << ',' << r.t_gen << ',' << r.c_in << ',' << r.c_gen << ',' << r.original[0]
      << ',' << r.original[1] << ',' << r.changed[0] << ',' << r.changed[1] << ',' << r.diff() << '\n';
}

double sign_test_p(const std::vector<double>& diffs) {
  int n = 0, k = 0;
  for (double d : diffs) {
    if (d == 0) continue;
    ++n;
    k += d > 0;
  }
  if (n == 0) return 1.0;
  double p = 0;
  for (int x = k; x <= n; ++x)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(x + 1.0) - std::lgamma(n - x + 1.0) - n * std::log(2.0));
  return std::min(1.0, p);
}

// ---------------------------------------------------------------- biomass ratios

BiomassSweep sweep_biomass(Generator<float>& gen, BiomassRegressor& regressor, const std::vector<SequenceRecord>& records,
                           ImageStore& store, const BiomassSweepConfig& cfg) {
  std::vector<int> scales = cfg.scales;
  for (int s : scales)
    if (s < 0) throw std::invalid_argument("biomass scales must be >= 0");
  if (std::find(scales.begin(), scales.end(), 100) == scales.end()) scales.push_back(100);
  std::sort(scales.begin(), scales.end());
  scales.erase(std::unique(scales.begin(), scales.end()), scales.end());

  struct Pair {
    const SequenceRecord* r;
    size_t i, j;
  };
  std::vector<Pair> pairs;
  std::array<double, 2> max_seen{0, 0};
  for (const auto& r : records)
    for (size_t i = 0; i < r.size(); ++i) {
      if (r.biomass[i])
        for (size_t s = 0; s < 2; ++s) max_seen[s] = std::max(max_seen[s], (*r.biomass[i])[s]);
      for (size_t j = i + 1; j < r.size(); ++j)
        if (r.biomass[j]) pairs.push_back({&r, i, j});
    }
  if (pairs.empty()) throw std::invalid_argument("biomass sweep needs labelled reference images");
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  if (cfg.max_pairs > 0 && pairs.size() > cfg.max_pairs) pairs.resize(cfg.max_pairs);

  std::vector<Image> xs;
  std::vector<ConditionSet> yi;
  std::vector<std::array<double, 2>> ref;
  std::vector<uint64_t> seeds;
  for (size_t k = 0; k < pairs.size(); ++k) {
    xs.push_back(store.get(pairs[k].r->images[pairs[k].i]));
    yi.push_back(pairs[k].r->conditions(pairs[k].i));
    ref.push_back(*pairs[k].r->biomass[pairs[k].j]);
    seeds.push_back(mix_seed(cfg.seed, k));
  }

  BiomassSweep out;
  for (int s_sw : scales)
    for (int s_fb : scales) {
      std::vector<ConditionSet> yg;
      bool beyond = false;
      for (size_t k = 0; k < pairs.size(); ++k) {
        ConditionSet y = pairs[k].r->conditions(pairs[k].j);
        const std::array<double, 2> b{ref[k][0] * s_sw / 100.0, ref[k][1] * s_fb / 100.0};
        beyond = beyond || b[0] > max_seen[0] || b[1] > max_seen[1];
        y.b = b;
        yg.push_back(y);
      }
      if (beyond)
        out.warnings.push_back("scale " + std::to_string(s_sw) + ":" + std::to_string(s_fb) +
                               " conditions some pairs beyond the largest observed biomass");
      const auto est = estimate_batch(regressor, predict_images(gen, xs, yi, yg, seeds));
      std::vector<double> gs, rs, gf, rf;
      for (size_t k = 0; k < pairs.size(); ++k) {
        gs.push_back(est[k][0]);
        gf.push_back(est[k][1]);
        rs.push_back(ref[k][0]);
        rf.push_back(ref[k][1]);
      }
      BiomassSweepRow row;
      row.scale_sw = s_sw;
      row.scale_fb = s_fb;
      row.n = static_cast<int64_t>(pairs.size());
      row.sw = trait_mae_me(gs, rs);
      row.fb = trait_mae_me(gf, rf);
      out.rows.push_back(row);
    }
  return out;
}

void write_biomass_csv(const fs::path& path, const std::vector<BiomassSweepRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "scale_sw,scale_fb,n,mae_sw,me_sw,mae_fb,me_fb,anchor\n";
  f.precision(8);
  for (const auto& r : rows)
    f << r.scale_sw << ',' << r.scale_fb << ',' << r.n << ',' << r.sw.mae << ',' << r.sw.me << ',' << r.fb.mae << ','
      << r.fb.me << ',' << (r.scale_sw == 100 && r.scale_fb == 100 ? 1 : 0) << '\n';
}

double me_monotone_fraction(const std::vector<BiomassSweepRow>& rows, int species) {
  std::map<int, std::vector<std::pair<int, double>>> lines;  // other scale -> (own scale, ME)
  for (const auto& r : rows) {
    const int own = species == 0 ? r.scale_sw : r.scale_fb, other = species == 0 ? r.scale_fb : r.scale_sw;
    lines[other].push_back({own, species == 0 ? r.sw.me : r.fb.me});
  }
  int good = 0, total = 0;
  for (auto& [other, pts] : lines) {
    std::sort(pts.begin(), pts.end());
    for (size_t k = 1; k < pts.size(); ++k) {
      ++total;
      good += pts[k].second >= pts[k - 1].second;
    }
  }
  return total ? static_cast<double>(good) / total : 0.0;
}

}  // namespace cropsim
