#include "cropsim/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cropsim/checkpoint.hpp"

namespace cropsim {

namespace fs = std::filesystem;
using nlohmann::json;
using VarF = ag::Var<float>;

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.lr = 2e-4;
  c.batch_size = 16;
  c.epochs = 200;
  c.image_size = 64;
  c.gen_width = 16;
  c.critic_width = 16;
  return c;
}

void TrainConfig::validate() const {
  if (!(lambda_gp > 0)) throw std::invalid_argument("lambda_gp must be > 0");
  if (n_critic < 1) throw std::invalid_argument("n_critic must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(lr > 0)) throw std::invalid_argument("lr must be > 0");
  if (val_interval < 1) throw std::invalid_argument("val_interval must be >= 1");
  parse_active_conditions(conditions);
}

ModelConfig TrainConfig::model_config(int n_treatments, const BiomassNormalizer& norm) const {
  ModelConfig m;
  m.image_size = image_size;
  m.gen_width = gen_width;
  m.critic_width = critic_width;
  m.cond.active = parse_active_conditions(conditions);
  m.cond.n_treatments = std::max(1, n_treatments);
  m.cond.biomass_norm = norm;
  m.validate();
  return m;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, TrainConfig c) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    try {
      if (key == "lr") c.lr = std::stod(v);
      else if (key == "beta1") c.beta1 = std::stod(v);
      else if (key == "beta2") c.beta2 = std::stod(v);
      else if (key == "batch_size") c.batch_size = std::stoi(v);
      else if (key == "epochs") c.epochs = std::stoi(v);
      else if (key == "lambda_gp") c.lambda_gp = std::stod(v);
      else if (key == "n_critic") c.n_critic = std::stoi(v);
      else if (key == "conditions") c.conditions = v;
      else if (key == "image_size") c.image_size = std::stoi(v);
      else if (key == "seed") c.seed = std::stoull(v);
      else if (key == "gen_width") c.gen_width = std::stoi(v);
      else if (key == "critic_width") c.critic_width = std::stoi(v);
      else if (key == "val_interval") c.val_interval = std::stoi(v);
      else if (key == "augment") c.augment = parse_bool(v);
      else if (key == "p_hflip") c.augmentation.p_hflip = std::stod(v);
      else if (key == "p_vflip") c.augmentation.p_vflip = std::stod(v);
      else if (key == "p_rot90") c.augmentation.p_rot90 = std::stod(v);
      else if (key == "p_translate") c.augmentation.p_translate = std::stod(v);
      else if (key == "max_translate") c.augmentation.max_translate = std::stod(v);
      else if (key == "p_shadow") c.augmentation.p_shadow = std::stod(v);
      else throw std::invalid_argument("unknown key");
    } catch (const std::exception& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + " (" + key + "): " + e.what());
    }
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path, TrainConfig base) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_train_config(ss.str(), base);
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "lr = " << c.lr << "\nbeta1 = " << c.beta1 << "\nbeta2 = " << c.beta2 << "\nbatch_size = " << c.batch_size
    << "\nepochs = " << c.epochs << "\nlambda_gp = " << c.lambda_gp << "\nn_critic = " << c.n_critic
    << "\nconditions = " << c.conditions << "\nimage_size = " << c.image_size << "\nseed = " << c.seed
    << "\ngen_width = " << c.gen_width << "\ncritic_width = " << c.critic_width << "\nval_interval = " << c.val_interval
    << "\naugment = " << (c.augment ? "true" : "false") << "\np_hflip = " << c.augmentation.p_hflip
    << "\np_vflip = " << c.augmentation.p_vflip << "\np_rot90 = " << c.augmentation.p_rot90
    << "\np_translate = " << c.augmentation.p_translate << "\nmax_translate = " << c.augmentation.max_translate
    << "\np_shadow = " << c.augmentation.p_shadow << "\n";
  return o.str();
}

Tensor<float> stack_images(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("cannot stack zero images");
  const Shape s = images[0].shape();
  Tensor<float> out(Shape{static_cast<int64_t>(images.size()), s[0], s[1], s[2]});
  const int64_t n = images[0].numel();
  for (size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) throw ShapeError("cannot stack images of different shapes");
    std::copy(images[i].data(), images[i].data() + n, out.data() + static_cast<int64_t>(i) * n);
  }
  return out;
}

Image unstack_image(const Tensor<float>& batch, int64_t i) {
  Image out(Shape{batch.dim(1), batch.dim(2), batch.dim(3)});
  const int64_t n = out.numel();
  std::copy(batch.data() + i * n, batch.data() + (i + 1) * n, out.data());
  return out;
}

Batch make_batch(const std::vector<SequenceRecord>& records, std::span<const PairIndex> idx, ImageStore& store,
                 const AugmentConfig* aug, uint64_t seed) {
  Batch b;
  std::vector<Image> xin, xref;
  for (size_t i = 0; i < idx.size(); ++i) {
    SamplePair p = make_pair(records, idx[i], store);
    if (aug) augment(p, *aug, seed * 0x9E3779B97F4A7C15ULL + i);
    xin.push_back(std::move(p.x_in));
    xref.push_back(std::move(p.x_ref));
    b.y_in.push_back(p.y_in);
    b.y_gen.push_back(p.y_gen);
    b.sequence_ids.push_back(p.sequence_id);
  }
  b.x_in = stack_images(xin);
  b.x_ref = stack_images(xref);
  return b;
}

template <typename T>
Tensor<T> interpolate(const Tensor<T>& x_ref, const Tensor<T>& x_gen, const std::vector<T>& eps) {
  if (x_ref.shape() != x_gen.shape()) throw ShapeError("x_ref and x_gen shapes differ");
  const int64_t n = x_ref.dim(0);
  if (static_cast<int64_t>(eps.size()) != n) throw ShapeError("need one epsilon per sample");
  const int64_t per = x_ref.numel() / n;
  Tensor<T> out(x_ref.shape());
  for (int64_t i = 0; i < n; ++i) {
    const T e = eps[static_cast<size_t>(i)];
    for (int64_t j = i * per; j < (i + 1) * per; ++j) out[j] = e * x_ref[j] + (T(1) - e) * x_gen[j];
  }
  return out;
}

template <typename T>
ag::Var<T> gradient_penalty(const std::function<ag::Var<T>(const ag::Var<T>&)>& critic, const Tensor<T>& x_ref,
                            const Tensor<T>& x_gen, const std::vector<T>& eps, bool create_graph) {
  ag::GradModeGuard on(true);
  ag::Var<T> x_hat(interpolate(x_ref, x_gen, eps), true);
  ag::Var<T> scores = critic(x_hat);
  ag::Var<T> g = ag::grad(ag::sum(scores), x_hat, create_graph);
  for (T v : g.value().span())
    if (!std::isfinite(static_cast<double>(v))) throw TrainingError("non-finite critic gradient in the penalty term");
  const int64_t n = x_hat.dim(0);
  ag::Var<T> flat = ag::reshape(g, Shape{n, x_hat.numel() / n});
  ag::Var<T> sq = ag::sum_to(ag::mul(flat, flat), Shape{n, 1});
  ag::Var<T> norm = ag::pow_scalar(ag::add_scalar(sq, T(1e-12)), T(0.5));
  ag::Var<T> dev = ag::add_scalar(norm, T(-1));
  return ag::mean(ag::mul(dev, dev));
}

template Tensor<float> interpolate<float>(const Tensor<float>&, const Tensor<float>&, const std::vector<float>&);
template Tensor<double> interpolate<double>(const Tensor<double>&, const Tensor<double>&, const std::vector<double>&);
template ag::Var<float> gradient_penalty<float>(const std::function<ag::Var<float>(const ag::Var<float>&)>&,
                                                const Tensor<float>&, const Tensor<float>&, const std::vector<float>&,
                                                bool);
template ag::Var<double> gradient_penalty<double>(const std::function<ag::Var<double>(const ag::Var<double>&)>&,
                                                  const Tensor<double>&, const Tensor<double>&,
                                                  const std::vector<double>&, bool);

size_t select_best(const std::vector<double>& history) {
  if (history.empty()) throw std::invalid_argument("empty validation history");
  return static_cast<size_t>(std::min_element(history.begin(), history.end()) - history.begin());
}

namespace {

std::vector<VarF> param_vars(const nn::ParamSet<float>& ps) {
  std::vector<VarF> v;
  for (const auto& p : ps.params) v.push_back(*p.var);
  return v;
}

// Writes d(loss)/d(params) into the parameters' .grad() without touching
// anything outside the set.
void set_grads(nn::ParamSet<float>& ps, const VarF& loss) {
  std::vector<VarF> vars = param_vars(ps);
  std::vector<VarF> grads = ag::grad<float>(std::vector<VarF>{loss}, {}, vars, false);
  for (size_t i = 0; i < vars.size(); ++i) ps.params[i].var->grad() = grads[i].value();
}

bool grads_finite(const nn::ParamSet<float>& ps) {
  for (const auto& p : ps.params)
    for (float v : p.var->grad().span())
      if (!std::isfinite(v)) return false;
  return true;
}

json model_to_json(const ModelConfig& m) {
  return {{"image_size", m.image_size},
          {"gen_width", m.gen_width},
          {"critic_width", m.critic_width},
          {"noise_dim", m.noise_dim},
          {"embed_dim", m.embed_dim},
          {"conditions", m.cond.active.str()},
          {"n_treatments", m.cond.n_treatments},
          {"max_period", m.cond.max_period},
          {"biomass_mean", m.cond.biomass_norm.mean},
          {"biomass_std", m.cond.biomass_norm.stddev}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.image_size = j.at("image_size");
  m.gen_width = j.at("gen_width");
  m.critic_width = j.at("critic_width");
  m.noise_dim = j.at("noise_dim");
  m.embed_dim = j.at("embed_dim");
  m.cond.active = parse_active_conditions(j.at("conditions").get<std::string>());
  m.cond.n_treatments = j.at("n_treatments");
  m.cond.max_period = j.at("max_period");
  m.cond.biomass_norm.mean = j.at("biomass_mean").get<std::array<double, 2>>();
  m.cond.biomass_norm.stddev = j.at("biomass_std").get<std::array<double, 2>>();
  m.validate();
  return m;
}

void export_set(const nn::ParamSet<float>& ps, std::map<std::string, Tensor<float>>& out) {
  for (const auto& p : ps.params) out[p.name] = p.var->value();
  for (const auto& b : ps.buffers) out[b.name] = *b.tensor;
}

void import_set(nn::ParamSet<float>& ps, const std::map<std::string, Tensor<float>>& arrays, const std::string& src) {
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<float>& {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw CheckpointError(src + ": missing array " + name);
    if (it->second.shape() != shape)
      throw CheckpointError(src + ": array " + name + " has shape " + it->second.shape().str() + ", model expects " +
                            shape.str());
    return it->second;
  };
  for (auto& p : ps.params) p.var->mutable_value() = fetch(p.name, p.var->shape());
  for (auto& b : ps.buffers) *b.tensor = fetch(b.name, b.tensor->shape());
}

struct Snapshot {
  std::map<std::string, Tensor<float>> arrays;
};

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, const ModelConfig& model)
    : cfg_(cfg), model_(model), rng_(cfg.seed) {
  cfg_.validate();
  model_.validate();
  std::mt19937_64 init_rng(cfg.seed ^ 0xC0FFEE);
  gen_ = Generator<float>(model_, init_rng);
  critic_ = Critic<float>(model_, init_rng);
  gen_.collect(gen_ps_, "gen");
  critic_.collect(critic_ps_, "critic");
  nn::AdamConfig ac{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};
  gen_opt_ = nn::Adam<float>(nn::param_pointers(gen_ps_), ac);
  critic_opt_ = nn::Adam<float>(nn::param_pointers(critic_ps_), ac);
}

void Trainer::check_finite(double v, const char* what) {
  if (std::isfinite(v)) {
    bad_steps_ = 0;
    return;
  }
  if (++bad_steps_ >= 3)
    throw TrainingError(std::string("training diverged: non-finite ") + what + " for 3 consecutive steps");
}

StepStats Trainer::critic_step(const Batch& b) {
  const int64_t n = b.size();
  VarF x_in(b.x_in), x_ref(b.x_ref);
  VarF fake;
  {
    ag::NoGradGuard ng;
    fake = VarF(gen_.generate(x_in, b.y_in, b.y_gen, VarF(gen_.sample_noise(n, rng_)), true).value());
  }
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> eps(static_cast<size_t>(n));
  for (float& e : eps) e = u(rng_);

  VarF maps = critic_.condition_maps(b.y_in, b.y_gen);
  VarF s_real = critic_.score_with_maps(x_ref, x_in, maps);
  VarF s_fake = critic_.score_with_maps(fake, x_in, maps);
  std::function<VarF(const VarF&)> score = [&](const VarF& x) { return critic_.score_with_maps(x, x_in, maps); };
  StepStats st;
  VarF gp;
  try {
    gp = gradient_penalty<float>(score, b.x_ref, fake.value(), eps, true);
  } catch (const TrainingError&) {
    check_finite(NAN, "penalty gradient");
    return {NAN, NAN, NAN, NAN, NAN};
  }
  VarF wdist = ag::sub(ag::mean(s_fake), ag::mean(s_real));
  VarF loss = ag::add(wdist, ag::scale(gp, static_cast<float>(cfg_.lambda_gp)));
  st.loss_d = loss.item();
  st.wasserstein = wdist.item();
  st.gp = gp.item();
  st.score_real = ag::mean(s_real).item();
  st.score_fake = ag::mean(s_fake).item();
  check_finite(st.loss_d, "critic loss");
  if (!std::isfinite(st.loss_d)) return st;
  set_grads(critic_ps_, loss);
  if (!grads_finite(critic_ps_)) {
    check_finite(NAN, "critic gradient");
    return st;
  }
  critic_opt_.step();
  ++d_steps_;
  return st;
}

double Trainer::generator_step(const Batch& b) {
  const int64_t n = b.size();
  VarF x_in(b.x_in);
  VarF fake = gen_.generate(x_in, b.y_in, b.y_gen, VarF(gen_.sample_noise(n, rng_)), true);
  VarF loss = ag::scale(ag::mean(critic_.score(fake, x_in, b.y_in, b.y_gen)), -1.0f);
  const double v = loss.item();
  check_finite(v, "generator loss");
  if (!std::isfinite(v)) return v;
  set_grads(gen_ps_, loss);
  if (!grads_finite(gen_ps_)) {
    check_finite(NAN, "generator gradient");
    return v;
  }
  gen_opt_.step();
  ++g_steps_;
  return v;
}

Tensor<float> generate_images(Generator<float>& gen, const Tensor<float>& x_in, std::span<const ConditionSet> y_in,
                              std::span<const ConditionSet> y_gen, const Tensor<float>& z) {
  ag::NoGradGuard ng;
  return gen.generate(VarF(x_in), y_in, y_gen, VarF(z), false).value();
}

double Trainer::validate(const std::vector<SequenceRecord>& val, ImageStore& store) {
  if (val.empty()) throw TrainingError("validation split is empty");
  const std::vector<PairIndex> pairs = sample_epoch(val, cfg_.seed + 0x5A17);
  std::mt19937_64 noise_rng(cfg_.seed + 0x2A15E);
  double total = 0;
  const size_t bs = static_cast<size_t>(cfg_.batch_size);
  for (size_t i = 0; i < pairs.size(); i += bs) {
    std::span<const PairIndex> chunk(pairs.data() + i, std::min(bs, pairs.size() - i));
    Batch b = make_batch(val, chunk, store, nullptr, 0);
    Tensor<float> gen = generate_images(gen_, b.x_in, b.y_in, b.y_gen, gen_.sample_noise(b.size(), noise_rng));
    for (double d : perceptual_distance_batch(gen, b.x_ref, extractor_)) total += d;
  }
  return total / static_cast<double>(pairs.size());
}

std::vector<EpochLog> Trainer::fit(const std::vector<SequenceRecord>& train, const std::vector<SequenceRecord>& val,
                                   ImageStore& store, const FitOptions& opt) {
  if (train.empty()) throw TrainingError("training split is empty");
  if (val.empty()) throw TrainingError("validation split is empty");
  std::ofstream log;
  if (!opt.log_csv.empty()) {
    if (opt.log_csv.has_parent_path()) fs::create_directories(opt.log_csv.parent_path());
    log.open(opt.log_csv);
    if (!log) throw TrainingError("cannot write " + opt.log_csv.string());
    log << "epoch,loss_D,loss_G,GP,val_perceptual\n";
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<EpochLog> logs;
  Snapshot best;
  double best_val = val_history_.empty() ? INFINITY : val_history_[select_best(val_history_)];
  const size_t bs = static_cast<size_t>(cfg_.batch_size);
  while (epoch_ < cfg_.epochs) {
    ++epoch_;
    const std::vector<PairIndex> pairs = sample_epoch(train, cfg_.seed * 1000003ULL + static_cast<uint64_t>(epoch_));
    EpochLog el;
    el.epoch = epoch_;
    int n_d = 0, n_g = 0;
    for (size_t i = 0, k = 0; i + 2 <= pairs.size(); i += bs, ++k) {
      std::span<const PairIndex> chunk(pairs.data() + i, std::min(bs, pairs.size() - i));
      const uint64_t seed = (cfg_.seed * 7919ULL + static_cast<uint64_t>(epoch_)) * 65537ULL + k;
      Batch b = make_batch(train, chunk, store, cfg_.augment ? &cfg_.augmentation : nullptr, seed);
      StepStats st = critic_step(b);
      el.loss_d += st.loss_d;
      el.gp += st.gp;
      ++n_d;
      if (d_steps_ % cfg_.n_critic == 0) {
        el.loss_g += generator_step(b);
        ++n_g;
      }
    }
    el.loss_d /= std::max(n_d, 1);
    el.gp /= std::max(n_d, 1);
    el.loss_g = n_g ? el.loss_g / n_g : NAN;
    const bool last = epoch_ == cfg_.epochs;
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool out_of_time = opt.time_budget_s > 0 && elapsed > opt.time_budget_s;
    el.val_perceptual = NAN;
    if (epoch_ % cfg_.val_interval == 0 || last || out_of_time) {
      el.val_perceptual = validate(val, store);
      val_history_.push_back(el.val_perceptual);
      if (el.val_perceptual < best_val) {
        best_val = el.val_perceptual;
        best_epoch_ = epoch_;
        best.arrays.clear();
        export_set(gen_ps_, best.arrays);
        export_set(critic_ps_, best.arrays);
        saved_metric_ = best_val;
        if (!opt.checkpoint.empty()) save(opt.checkpoint);
      }
    }
    if (log) {
      log.precision(8);
      log << el.epoch << ',' << el.loss_d << ',' << el.loss_g << ',' << el.gp << ',' << el.val_perceptual << '\n';
      log.flush();
    }
    logs.push_back(el);
    if (opt.on_epoch) opt.on_epoch(el);
    if (out_of_time) break;
  }
  if (!best.arrays.empty()) {
    import_set(gen_ps_, best.arrays, "best snapshot");
    import_set(critic_ps_, best.arrays, "best snapshot");
  }
  return logs;
}

void Trainer::save(const fs::path& path) const {
  CheckpointData d;
  export_set(gen_ps_, d.arrays);
  export_set(critic_ps_, d.arrays);
  auto moments = [&d](const nn::Adam<float>& opt, const nn::ParamSet<float>& ps, const std::string& tag) {
    auto& o = const_cast<nn::Adam<float>&>(opt);
    for (size_t i = 0; i < ps.params.size(); ++i) {
      d.arrays["opt." + tag + ".m." + ps.params[i].name] = o.first_moments()[i];
      d.arrays["opt." + tag + ".v." + ps.params[i].name] = o.second_moments()[i];
    }
    return o.steps();
  };
  const int64_t gs = moments(gen_opt_, gen_ps_, "gen");
  const int64_t ds = moments(critic_opt_, critic_ps_, "critic");
  std::ostringstream rng_state;
  rng_state << rng_;
  d.meta = {{"format", "cropsim-checkpoint"},
            {"version", 1},
            {"train_config", format_train_config(cfg_)},
            {"model", model_to_json(model_)},
            {"epoch", epoch_},
            {"best_epoch", best_epoch_},
            {"val_history", val_history_},
            {"val_metric", saved_metric_},
            {"extractor", extractor_.provenance()},
            {"rng_state", rng_state.str()},
            {"generator_steps", g_steps_},
            {"critic_steps", d_steps_},
            {"adam_steps", {gs, ds}}};
  write_checkpoint(path, d);
}

std::unique_ptr<Trainer> Trainer::load(const fs::path& path) {
  CheckpointData d = read_checkpoint(path);
  if (d.meta.value("format", "") != "cropsim-checkpoint") throw CheckpointError(path.string() + ": unknown format");
  TrainConfig cfg = parse_train_config(d.meta.at("train_config").get<std::string>(), TrainConfig{});
  auto t = std::make_unique<Trainer>(cfg, model_from_json(d.meta.at("model")));
  import_set(t->gen_ps_, d.arrays, path.string());
  import_set(t->critic_ps_, d.arrays, path.string());
  auto moments = [&](nn::Adam<float>& opt, const nn::ParamSet<float>& ps, const std::string& tag, int64_t steps) {
    for (size_t i = 0; i < ps.params.size(); ++i) {
      auto m = d.arrays.find("opt." + tag + ".m." + ps.params[i].name);
      auto v = d.arrays.find("opt." + tag + ".v." + ps.params[i].name);
      if (m == d.arrays.end() || v == d.arrays.end()) return;
      opt.first_moments()[i] = m->second;
      opt.second_moments()[i] = v->second;
    }
    opt.set_steps(steps);
  };
  auto steps = d.meta.at("adam_steps").get<std::vector<int64_t>>();
  moments(t->gen_opt_, t->gen_ps_, "gen", steps.at(0));
  moments(t->critic_opt_, t->critic_ps_, "critic", steps.at(1));
  t->epoch_ = d.meta.at("epoch");
  t->best_epoch_ = d.meta.at("best_epoch");
  t->val_history_ = d.meta.at("val_history").get<std::vector<double>>();
  t->saved_metric_ = d.meta.at("val_metric");
  t->g_steps_ = d.meta.at("generator_steps");
  t->d_steps_ = d.meta.at("critic_steps");
  std::istringstream rs(d.meta.at("rng_state").get<std::string>());
  rs >> t->rng_;
  return t;
}

LoadedModel load_generator(const fs::path& path) {
  CheckpointData d = read_checkpoint(path);
  if (d.meta.value("format", "") != "cropsim-checkpoint") throw CheckpointError(path.string() + ": unknown format");
  LoadedModel m;
  m.train = parse_train_config(d.meta.at("train_config").get<std::string>(), TrainConfig{});
  m.model = model_from_json(d.meta.at("model"));
  std::mt19937_64 rng(0);
  m.gen = Generator<float>(m.model, rng);
  nn::ParamSet<float> ps;
  m.gen.collect(ps, "gen");
  import_set(ps, d.arrays, path.string());
  m.epoch = d.meta.at("epoch");
  m.val_history = d.meta.at("val_history").get<std::vector<double>>();
  return m;
}

}  // namespace cropsim
