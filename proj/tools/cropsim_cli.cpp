#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "cropsim/checkpoint.hpp"
#include "cropsim/simulate.hpp"
#include "cropsim/synth.hpp"
#include "cropsim/training.hpp"

using namespace cropsim;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config, checkpoint, manifest, split = "test", out = ".";
  uint64_t seed = 0;
  bool seed_given() const { return seed_opt && seed_opt->count() > 0; }
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key = value file")->check(CLI::ExistingFile);
  sub->add_option("--checkpoint", c.checkpoint, "generator checkpoint");
  sub->add_option("--manifest", c.manifest, "manifest JSONL");
  sub->add_option("--split", c.split, "train | val | test");
  c.seed_opt = sub->add_option("--seed", c.seed, "random seed");
  sub->add_option("--out", c.out, "output directory");
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

std::vector<std::pair<std::string, std::string>> read_kv(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> kv;
  if (path.empty()) return kv;
  std::ifstream f(path);
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(path + ":" + std::to_string(n) + ": expected key = value");
    kv.push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1))});
  }
  return kv;
}

// Config keys name the subcommand's long options; flags given on the command line win.
void apply_config_defaults(CLI::App* sub, const std::string& path) {
  for (const auto& [k, v] : read_kv(path)) {
    std::string name = "--" + k;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = nullptr;
    try {
      opt = sub->get_option(name);
    } catch (const CLI::OptionNotFound&) {
      throw std::invalid_argument("config key '" + k + "' is not an option of " + sub->get_name());
    }
    if (opt->count() > 0 || name == "--config") continue;
    std::stringstream ss(v);
    std::string item;
    if (opt->get_items_expected_max() > 1)
      while (std::getline(ss, item, ',')) opt->add_result(trim(item));
    else
      opt->add_result(v);
    opt->run_callback();
  }
}

std::vector<SequenceRecord> records_for(const Common& c, bool require_biomass = false) {
  if (c.manifest.empty()) throw std::invalid_argument("--manifest is required");
  auto all = load_manifest(c.manifest, require_biomass);
  if (c.split == "all") return all;
  auto r = filter_split(all, c.split);
  if (r.empty()) throw std::invalid_argument("no sequences in split '" + c.split + "'");
  return r;
}

LoadedModel generator_for(const Common& c) {
  if (c.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required");
  if (!fs::exists(c.checkpoint)) throw std::invalid_argument("checkpoint not found: " + c.checkpoint);
  return load_generator(c.checkpoint);
}

std::vector<SequenceRecord> select(const std::vector<SequenceRecord>& recs, const std::vector<std::string>& ids) {
  if (ids.empty()) return recs;
  std::vector<SequenceRecord> out;
  for (const auto& id : ids) {
    auto it = std::find_if(recs.begin(), recs.end(), [&](const SequenceRecord& r) { return r.sequence_id == id; });
    if (it == recs.end()) throw std::invalid_argument("sequence " + id + " not in the selected split");
    out.push_back(*it);
  }
  return out;
}

bool is_mixture(int c) { return treatment_info(c).composition == Composition::kMixture; }

// ---------------------------------------------------------------- synth

int cmd_synth(const Common& c) {
  SynthConfig s;
  for (const auto& [k, v] : read_kv(c.config)) {
    if (k == "n_sequences") s.n_sequences = std::stoi(v);
    else if (k == "n_times") s.n_times = std::stoi(v);
    else if (k == "first_day") s.first_day = std::stoi(v);
    else if (k == "day_step") s.day_step = std::stoi(v);
    else if (k == "image_size") s.image_size = std::stoi(v);
    else if (k == "n_treatments") s.n_treatments = std::stoi(v);
    else if (k == "val_fraction") s.val_fraction = std::stod(v);
    else if (k == "test_fraction") s.test_fraction = std::stod(v);
    else if (k == "seed") s.seed = std::stoull(v);
    else throw std::invalid_argument("unknown synth config key '" + k + "'");
  }
  if (c.seed_given()) s.seed = c.seed;
  const fs::path m = synth_generate(s, c.out);
  std::cout << m.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainFlags {
  std::string model = "gan";
  double time_budget = 0;
  std::string val_split = "val";
};

int cmd_train(const Common& c, const TrainFlags& f) {
  std::string gan_text;
  RegressorConfig rc;
  for (const auto& [k, v] : read_kv(c.config)) {
    if (k == "reg_width") rc.width = std::stoi(v);
    else if (k == "reg_batch_size") rc.batch_size = std::stoi(v);
    else if (k == "reg_max_epochs") rc.max_epochs = std::stoi(v);
    else if (k == "reg_patience") rc.patience = std::stoi(v);
    else if (k == "reg_lr") rc.lr = std::stod(v);
    else if (k == "reg_augment") rc.augment = v == "true" || v == "1";
    else gan_text += k + " = " + v + "\n";
  }
  TrainConfig tc = parse_train_config(gan_text);
  if (c.seed_given()) tc.seed = rc.seed = c.seed;

  Common tr = c, va = c;
  tr.split = c.split == "test" ? "train" : c.split;  // --split defaults to test for inference commands
  va.split = f.val_split;
  const bool need_bm = f.model != "gan" || tc.conditions.find('b') != std::string::npos;
  auto train = records_for(tr, need_bm), val = records_for(va, need_bm);
  ImageStore store;
  fs::create_directories(c.out);

  if (f.model == "gan" || f.model == "both") {
    const auto all = load_manifest(c.manifest);
    BiomassNormalizer norm;
    if (tc.conditions.find('b') != std::string::npos) norm = fit_biomass_normalizer(train);
    Trainer t(tc, tc.model_config(treatment_count(all), norm));
    FitOptions opt;
    opt.log_csv = fs::path(c.out) / "train_log.csv";
    opt.checkpoint = fs::path(c.out) / "checkpoint.ckpt";
    opt.time_budget_s = f.time_budget;
    opt.on_epoch = [](const EpochLog& e) {
      std::fprintf(stderr, "epoch %d  loss_D %.4f  loss_G %.4f  GP %.4f  val %.4f\n", e.epoch, e.loss_d, e.loss_g, e.gp,
                   e.val_perceptual);
    };
    t.fit(train, val, store, opt);
    t.save(opt.checkpoint);
    std::ofstream(fs::path(c.out) / "train_config.txt") << format_train_config(tc);
    std::fprintf(stderr, "best epoch %d -> %s\n", t.best_epoch(), opt.checkpoint.string().c_str());
  }
  if (f.model == "regressor" || f.model == "both") {
    std::mt19937_64 rng(rc.seed);
    BiomassRegressor reg(rc.width, rng);
    std::ofstream log(fs::path(c.out) / "regressor_log.csv");
    log << "epoch,train_mse,val_mse\n";
    const RegressorFit fit = train_biomass_regressor(
        reg, regressor_samples(train, store), regressor_samples(val, store), rc, [&](int e, double tm, double vm) {
          log << e << ',' << tm << ',' << vm << '\n';
          std::fprintf(stderr, "regressor epoch %d  train %.5f  val %.5f\n", e, tm, vm);
        });
    reg.save(fs::path(c.out) / "regressor.ckpt", {{"best_epoch", fit.best_epoch}});
  }
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalFlags {
  std::string regressor;
  bool no_fid = false;
  double gsd_mm = 0.23;
};

int cmd_eval(const Common& c, const EvalFlags& f) {
  auto model = generator_for(c);
  std::optional<BiomassRegressor> reg;
  if (!f.regressor.empty()) reg = BiomassRegressor::load(f.regressor);
  auto recs = records_for(c, reg.has_value());
  ImageStore store;
  FeatureExtractor fx;
  EvalConfig cfg;
  cfg.seed = c.seed;
  cfg.fid = !f.no_fid;
  cfg.is_mixture = is_mixture;
  const EvalResult r = evaluate(model.gen, recs, store, fx, reg ? &*reg : nullptr, cfg);
  fs::create_directories(c.out);
  write_pairs_csv(fs::path(c.out) / "pairs.csv", r.report.pairs);
  write_eval_json(fs::path(c.out) / "metrics.json", r,
                  {{"checkpoint", c.checkpoint}, {"split", c.split}, {"conditions", model.train.conditions}});

  const ColorSegmenter seg;
  std::vector<TraitRow> rows;
  for (const auto& s : recs)
    for (size_t i = 0; i < s.size(); ++i) {
      const Image& img = store.get(s.images[i]);
      const std::string id = s.sequence_id + "@" + std::to_string(s.times[i]);
      rows.push_back({id, pla_from_masks(seg(img), f.gsd_mm)});
      if (reg) rows.push_back({id, reg->estimate(img)});
    }
  write_traits_csv(fs::path(c.out) / "traits.csv", rows);

  for (const char* b : {"T0", "ST", "LT"})
    if (auto it = r.report.buckets.find(b); it != r.report.buckets.end())
      std::printf("%s  n=%lld  ms_ssim=%.4f  perceptual=%.4f\n", b, static_cast<long long>(it->second.count),
                  it->second.ms_ssim, it->second.perceptual);
  if (r.report.fid) std::printf("FID=%.4f (%s)\n", *r.report.fid, r.report.extractor.c_str());
  if (r.generated)
    std::printf("BM MAE generated=%.4f real=%.4f\n", r.generated->all.mean_mae(), r.real->all.mean_mae());
  return 0;
}

// ---------------------------------------------------------------- sweeps

struct SweepFlags {
  std::string regressor;
  std::vector<std::string> sequences;
  std::vector<int> times;
  int input_index = 0;
  int draws = 10;
  int t_gen = 0;
  double gsd_mm = 0.23;
  std::vector<std::string> change;
  std::vector<int> scales = {50, 75, 100, 125, 150};
  size_t max_pairs = 200;
};

int cmd_sweep_time(const Common& c, const SweepFlags& f) {
  if (f.times.empty()) throw std::invalid_argument("--times needs at least one day");
  if (f.draws < 1) throw std::invalid_argument("--draws must be >= 1");
  auto model = generator_for(c);
  std::optional<BiomassRegressor> reg;
  if (!f.regressor.empty()) reg = BiomassRegressor::load(f.regressor);
  auto recs = select(records_for(c), f.sequences);
  ImageStore store;
  FeatureExtractor fx;
  TimeSweepConfig cfg;
  cfg.times = f.times;
  cfg.draws = f.draws;
  cfg.seed = c.seed;
  cfg.gsd_mm = f.gsd_mm;
  fs::create_directories(c.out);
  const fs::path csv = fs::path(c.out) / "time_sweep.csv";
  fs::remove(csv);
  for (const auto& r : recs) {
    const TimeSweep s = sweep_time(model.gen, r, static_cast<size_t>(f.input_index), store, fx, reg ? &*reg : nullptr, cfg);
    write_time_sweep_csv(csv, s.rows, true);
    write_png(fs::path(c.out) / ("grid_" + r.sequence_id + ".png"), s.grid);
  }
  std::printf("%zu sequences x %zu days -> %s\n", recs.size(), f.times.size(), csv.string().c_str());
  return 0;
}

int cmd_variability(const Common& c, const SweepFlags& f) {
  if (f.draws < 1) throw std::invalid_argument("--draws must be >= 1");
  auto model = generator_for(c);
  auto recs = select(records_for(c), f.sequences);
  ImageStore store;
  fs::create_directories(c.out);
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& r : recs) {
    if (static_cast<size_t>(f.input_index) >= r.size()) throw std::out_of_range("--input-index outside sequence");
    const int t = f.t_gen > 0 ? f.t_gen : r.times.back();
    const Variability v = variability(model.gen, store.get(r.images[static_cast<size_t>(f.input_index)]),
                                      r.conditions(static_cast<size_t>(f.input_index)), conditions_at(r, t), f.draws, c.seed);
    write_png(fs::path(c.out) / ("variability_" + r.sequence_id + ".png"), v.visual);
    write_stddev_csv(fs::path(c.out) / ("stddev_" + r.sequence_id + ".csv"), v.stddev);
    summary.push_back({{"sequence_id", r.sequence_id}, {"t_in", r.times[static_cast<size_t>(f.input_index)]},
                       {"t_gen", t}, {"draws", v.draws}, {"mean_std", v.mean}, {"max_std", v.max},
                       {"argmax_y", v.argmax / v.stddev.dim(1)}, {"argmax_x", v.argmax % v.stddev.dim(1)}});
  }
  std::ofstream(fs::path(c.out) / "variability.json") << summary.dump(2) << "\n";
  return 0;
}

int cmd_sweep_treatment(const Common& c, const SweepFlags& f) {
  if (f.regressor.empty()) throw std::invalid_argument("--regressor is required");
  auto model = generator_for(c);
  BiomassRegressor reg = BiomassRegressor::load(f.regressor);
  auto recs = select(records_for(c), f.sequences);
  ImageStore store;
  TreatmentSweepConfig cfg;
  for (const auto& s : f.change) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("--change expects c_in:c_gen, got " + s);
    cfg.change[std::stoi(s.substr(0, colon))] = std::stoi(s.substr(colon + 1));
  }
  cfg.t_gen = f.t_gen;
  cfg.seed = c.seed;
  cfg.image_size = model.model.image_size;
  const TreatmentSweep s = sweep_treatment(model.gen, reg, recs, store, cfg);
  fs::create_directories(c.out);
  write_treatment_csv(fs::path(c.out) / "treatment.csv", s.rows);
  write_replicates_csv(fs::path(c.out) / "replicates.csv", s.replicates);
  if (!s.replicates.empty()) write_png(fs::path(c.out) / "treatment_grid.png", s.grid);
  std::vector<double> diffs;
  for (const auto& r : s.replicates) diffs.push_back(r.diff());
  const double p = sign_test_p(diffs);
  const int64_t pos = std::count_if(diffs.begin(), diffs.end(), [](double d) { return d > 0; });
  std::ofstream(fs::path(c.out) / "treatment_summary.json")
      << nlohmann::json{{"replicates", diffs.size()}, {"increased", pos}, {"sign_test_p", p}}.dump(2) << "\n";
  std::printf("%zu replicates, %lld increased, sign test p=%.3g\n", diffs.size(), static_cast<long long>(pos), p);
  return 0;
}

int cmd_sweep_biomass(const Common& c, const SweepFlags& f) {
  if (f.regressor.empty()) throw std::invalid_argument("--regressor is required");
  auto model = generator_for(c);
  if (!model.model.cond.active.biomass) throw std::invalid_argument("checkpoint was not trained with biomass conditioning");
  BiomassRegressor reg = BiomassRegressor::load(f.regressor);
  auto recs = select(records_for(c, true), f.sequences);
  ImageStore store;
  BiomassSweepConfig cfg;
  cfg.scales = f.scales;
  cfg.max_pairs = f.max_pairs;
  cfg.seed = c.seed;
  const BiomassSweep s = sweep_biomass(model.gen, reg, recs, store, cfg);
  for (const auto& w : s.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  fs::create_directories(c.out);
  write_biomass_csv(fs::path(c.out) / "biomass_sweep.csv", s.rows);
  std::printf("ME monotone fraction  SW %.2f  FB %.2f\n", me_monotone_fraction(s.rows, 0), me_monotone_fraction(s.rows, 1));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crop growth simulation with a multi-conditional CWGAN-GP"};
  app.failure_message(CLI::FailureMessage::help);
  app.require_subcommand(1);

  Common common;
  TrainFlags tf;
  EvalFlags ef;
  SweepFlags sf;

  auto* synth = app.add_subcommand("synth", "write a procedural synthetic dataset");
  add_common(synth, common);

  auto* train = app.add_subcommand("train", "train the generator/critic or the biomass regressor");
  add_common(train, common);
  train->add_option("--model", tf.model, "what to train")->check(CLI::IsMember({"gan", "regressor", "both"}));
  train->add_option("--time-budget", tf.time_budget, "stop after the epoch exceeding this many seconds");
  train->add_option("--val-split", tf.val_split, "split used for model selection");

  auto* eval = app.add_subcommand("eval", "bucketed image metrics, FID and trait errors");
  add_common(eval, common);
  eval->add_option("--regressor", ef.regressor, "biomass regressor checkpoint");
  eval->add_flag("--no-fid", ef.no_fid, "skip FID");
  eval->add_option("--gsd-mm", ef.gsd_mm, "ground sample distance");

  auto* stime = app.add_subcommand("sweep-time", "predictions over a list of days with grids");
  auto* var = app.add_subcommand("variability", "per-pixel std over repeated generations");
  auto* streat = app.add_subcommand("sweep-treatment", "original vs changed treatment");
  auto* sbio = app.add_subcommand("sweep-biomass", "MAE/ME over biomass scale pairs");
  for (auto* s : {stime, var, streat, sbio}) {
    add_common(s, common);
    s->add_option("--sequence", sf.sequences, "sequence ids (default: whole split)")->delimiter(',');
  }
  for (auto* s : {stime, streat, sbio}) s->add_option("--regressor", sf.regressor, "biomass regressor checkpoint");
  for (auto* s : {stime, var}) {
    s->add_option("--input-index", sf.input_index, "index of the input image within each sequence");
    s->add_option("--draws", sf.draws, "noise draws");
  }
  stime->add_option("--times", sf.times, "days to generate")->delimiter(',');
  stime->add_option("--gsd-mm", sf.gsd_mm, "ground sample distance");
  for (auto* s : {var, streat}) s->add_option("--t-gen", sf.t_gen, "target day (default: last day)");
  streat->add_option("--change", sf.change, "c_in:c_gen pairs (default: low -> high density)")->delimiter(',');
  sbio->add_option("--scales", sf.scales, "percent scales per species")->delimiter(',');
  sbio->add_option("--max-pairs", sf.max_pairs, "pairs sampled from the split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub != synth && sub != train) apply_config_defaults(sub, common.config);
    if (sub == synth) return cmd_synth(common);
    if (sub == train) return cmd_train(common, tf);
    if (sub == eval) return cmd_eval(common, ef);
    if (sub == stime) return cmd_sweep_time(common, sf);
    if (sub == var) return cmd_variability(common, sf);
    if (sub == streat) return cmd_sweep_treatment(common, sf);
    if (sub == sbio) return cmd_sweep_biomass(common, sf);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
