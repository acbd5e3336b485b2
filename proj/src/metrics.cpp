#include "cropsim/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace cropsim {

namespace {

using Plane = std::vector<double>;

std::vector<double> gaussian_window() {
  std::vector<double> g(kSsimWindow);
  double s = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - (kSsimWindow - 1) / 2.0;
    g[static_cast<size_t>(i)] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    s += g[static_cast<size_t>(i)];
  }
  for (double& v : g) v /= s;
  return g;
}

// Separable 'valid' Gaussian filtering of an h x w plane.
Plane filter_valid(const Plane& p, int64_t h, int64_t w, const std::vector<double>& g) {
  const int64_t k = kSsimWindow, ow = w - k + 1, oh = h - k + 1;
  Plane tmp(static_cast<size_t>(h * ow));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0;
      for (int64_t i = 0; i < k; ++i) s += g[static_cast<size_t>(i)] * p[static_cast<size_t>(y * w + x + i)];
      tmp[static_cast<size_t>(y * ow + x)] = s;
    }
  Plane out(static_cast<size_t>(oh * ow));
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0;
      for (int64_t i = 0; i < k; ++i) s += g[static_cast<size_t>(i)] * tmp[static_cast<size_t>((y + i) * ow + x)];
      out[static_cast<size_t>(y * ow + x)] = s;
    }
  return out;
}

// Mean SSIM and mean contrast-structure terms for one channel plane.
std::pair<double, double> ssim_cs(const Plane& a, const Plane& b, int64_t h, int64_t w) {
  static const std::vector<double> g = gaussian_window();
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  Plane aa(a.size()), bb(a.size()), ab(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  Plane mu_a = filter_valid(a, h, w, g), mu_b = filter_valid(b, h, w, g);
  Plane e_aa = filter_valid(aa, h, w, g), e_bb = filter_valid(bb, h, w, g), e_ab = filter_valid(ab, h, w, g);
  double ssim_sum = 0, cs_sum = 0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    const double cs = (2 * cov + c2) / (va + vb + c2);
    const double lum = (2 * mu_a[i] * mu_b[i] + c1) / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1);
    ssim_sum += lum * cs;
    cs_sum += cs;
  }
  const double n = static_cast<double>(mu_a.size());
  return {ssim_sum / n, cs_sum / n};
}

Plane downsample2(const Plane& p, int64_t h, int64_t w) {
  const int64_t oh = h / 2, ow = w / 2;
  Plane out(static_cast<size_t>(oh * ow));
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x)
      out[static_cast<size_t>(y * ow + x)] =
          0.25 * (p[static_cast<size_t>(2 * y * w + 2 * x)] + p[static_cast<size_t>(2 * y * w + 2 * x + 1)] +
                  p[static_cast<size_t>((2 * y + 1) * w + 2 * x)] + p[static_cast<size_t>((2 * y + 1) * w + 2 * x + 1)]);
  return out;
}

Plane channel_plane(const Image& img, int64_t c) {
  const int64_t hw = img.dim(1) * img.dim(2);
  Plane p(static_cast<size_t>(hw));
  for (int64_t i = 0; i < hw; ++i) p[static_cast<size_t>(i)] = (static_cast<double>(img[c * hw + i]) + 1.0) * 0.5;
  return p;
}

void check_pair(const Image& x, const Image& y) {
  if (x.shape() != y.shape()) throw MetricError("image shapes differ: " + x.shape().str() + " vs " + y.shape().str());
  if (x.shape().rank() != 3) throw MetricError("expected C x H x W images");
  if (std::min(x.dim(1), x.dim(2)) < kSsimWindow) throw MetricError("image smaller than the SSIM window");
}

}  // namespace

int ms_ssim_scales(int64_t min_side) {
  int scales = 0;
  while (scales < 5 && min_side >= kSsimWindow) {
    ++scales;
    min_side /= 2;
  }
  return scales;
}

double ssim(const Image& x, const Image& y) {
  check_pair(x, y);
  double total = 0;
  for (int64_t c = 0; c < x.dim(0); ++c) total += ssim_cs(channel_plane(x, c), channel_plane(y, c), x.dim(1), x.dim(2)).first;
  return total / static_cast<double>(x.dim(0));
}

double ms_ssim(const Image& x, const Image& y) {
  check_pair(x, y);
  const int scales = ms_ssim_scales(std::min(x.dim(1), x.dim(2)));
  double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += kMsSsimWeights[s];
  double total = 0;
  for (int64_t c = 0; c < x.dim(0); ++c) {
    Plane a = channel_plane(x, c), b = channel_plane(y, c);
    int64_t h = x.dim(1), w = x.dim(2);
    double value = 1.0;
    for (int s = 0; s < scales; ++s) {
      auto [sim, cs] = ssim_cs(a, b, h, w);
      const double term = s + 1 == scales ? sim : cs;
      value *= std::pow(std::max(term, 0.0), kMsSsimWeights[s] / wsum);
      if (s + 1 < scales) {
        a = downsample2(a, h, w);
        b = downsample2(b, h, w);
        h /= 2;
        w /= 2;
      }
    }
    total += value;
  }
  return total / static_cast<double>(x.dim(0));
}

FeatureExtractor::FeatureExtractor(uint64_t seed) : tag_("seeded-random:" + std::to_string(seed)) {
  std::mt19937_64 rng(seed);
  const int64_t widths[6] = {3, 16, 32, 64, 64, 64};
  for (int s = 0; s < 5; ++s) {
    nn::Conv2d<float> conv(widths[s], widths[s + 1], 3, s == 0 ? 1 : 2, 1, rng);
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(widths[s] * 9)));
    for (float& v : conv.weight.mutable_value().span()) v = static_cast<float>(nd(rng));
    conv.bias.mutable_value().fill(0.0f);
    stages_.push_back(std::move(conv));
  }
}

int FeatureExtractor::feature_dim() const { return static_cast<int>(stages_.back().out_channels); }

std::vector<Tensor<float>> FeatureExtractor::taps(const Tensor<float>& batch) const {
  ag::NoGradGuard ng;
  std::vector<Tensor<float>> out;
  ag::Var<float> h(batch);
  for (const auto& s : stages_) {
    h = ag::relu(s(h));
    out.push_back(h.value());
  }
  return out;
}

Tensor<double> FeatureExtractor::pooled_features(const Tensor<float>& batch) const {
  auto t = taps(batch);
  const Tensor<float>& last = t.back();
  const int64_t n = last.dim(0), c = last.dim(1), hw = last.dim(2) * last.dim(3);
  Tensor<double> f(Shape{n, c});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (int64_t p = 0; p < hw; ++p) s += last[(i * c + ch) * hw + p];
      f[i * c + ch] = s / static_cast<double>(hw);
    }
  return f;
}

std::vector<double> perceptual_distance_batch(const Tensor<float>& a, const Tensor<float>& b,
                                              const FeatureExtractor& fx) {
  if (a.shape() != b.shape()) throw MetricError("batch shapes differ");
  auto ta = fx.taps(a), tb = fx.taps(b);
  const int64_t n = a.dim(0);
  std::vector<double> d(static_cast<size_t>(n), 0.0);
  constexpr double eps = 1e-10;
  for (size_t l = 0; l < ta.size(); ++l) {
    const int64_t c = ta[l].dim(1), hw = ta[l].dim(2) * ta[l].dim(3);
    for (int64_t i = 0; i < n; ++i) {
      double acc = 0;
      for (int64_t p = 0; p < hw; ++p) {
        double na = 0, nb = 0;
        for (int64_t ch = 0; ch < c; ++ch) {
          const double va = ta[l][(i * c + ch) * hw + p], vb = tb[l][(i * c + ch) * hw + p];
          na += va * va;
          nb += vb * vb;
        }
        na = 1.0 / (std::sqrt(na) + eps);
        nb = 1.0 / (std::sqrt(nb) + eps);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double diff = ta[l][(i * c + ch) * hw + p] * na - tb[l][(i * c + ch) * hw + p] * nb;
          acc += diff * diff;
        }
      }
      d[static_cast<size_t>(i)] += acc / static_cast<double>(hw);
    }
  }
  return d;
}

double perceptual_distance(const Image& x, const Image& y, const FeatureExtractor& fx) {
  if (x.shape() != y.shape()) throw MetricError("image shapes differ");
  const Shape s{1, x.dim(0), x.dim(1), x.dim(2)};
  return perceptual_distance_batch(x.reshaped(s), y.reshaped(s), fx)[0];
}

double fid(const Tensor<double>& real, const Tensor<double>& gen, double eps) {
  if (real.shape().rank() != 2 || gen.shape().rank() != 2 || real.dim(1) != gen.dim(1))
    throw MetricError("feature sets must be N x D with equal D");
  if (real.dim(0) < 2 || gen.dim(0) < 2) throw MetricError("FID needs at least 2 samples per set");
  using Mat = Eigen::MatrixXd;
  auto stats = [](const Tensor<double>& f) {
    const Eigen::Index n = f.dim(0), d = f.dim(1);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(f.data(), n, d);
    Eigen::VectorXd mu = m.colwise().mean().transpose();
    Mat centered = m.rowwise() - mu.transpose();
    Mat cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    return std::pair{mu, cov};
  };
  auto [mu_r, cov_r] = stats(real);
  auto [mu_g, cov_g] = stats(gen);
  auto sym_sqrt = [eps](const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(eps).cwiseSqrt();
    return Mat(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  };
  Mat s = sym_sqrt(cov_r);
  Mat inner = s * cov_g * s;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_r - mu_g).squaredNorm() + cov_r.trace() + cov_g.trace() - 2 * tr_sqrt;
  return std::max(value, 0.0);
}

Bucket bucket_of(int delta_t) {
  const int a = std::abs(delta_t);
  if (a == 0) return Bucket::kT0;
  return a <= 10 ? Bucket::kST : Bucket::kLT;
}

const char* bucket_name(Bucket b) {
  switch (b) {
    case Bucket::kT0:
      return "T0";
    case Bucket::kST:
      return "ST";
    default:
      return "LT";
  }
}

MetricReport bucket_report(std::vector<PairMetrics> pairs, std::optional<double> fid_value,
                           const std::string& extractor_tag) {
  MetricReport r;
  r.extractor = extractor_tag;
  r.fid = fid_value;
  for (const auto& p : pairs) {
    BucketStats& b = r.buckets[bucket_name(bucket_of(p.delta_t()))];
    ++b.count;
    b.ms_ssim += p.ms_ssim;
    b.perceptual += p.perceptual;
    ++r.overall.count;
    r.overall.ms_ssim += p.ms_ssim;
    r.overall.perceptual += p.perceptual;
  }
  for (auto& [name, b] : r.buckets) {
    b.ms_ssim /= static_cast<double>(b.count);
    b.perceptual /= static_cast<double>(b.count);
  }
  if (r.overall.count > 0) {
    r.overall.ms_ssim /= static_cast<double>(r.overall.count);
    r.overall.perceptual /= static_cast<double>(r.overall.count);
  }
  r.pairs = std::move(pairs);
  return r;
}

void require_same_provenance(const MetricReport& a, const MetricReport& b) {
  if (a.extractor != b.extractor)
    throw MetricError("reports use different feature extractors (" + a.extractor + " vs " + b.extractor +
                      "); their perceptual/FID values are not comparable");
}

void write_pairs_csv(const std::filesystem::path& path, const std::vector<PairMetrics>& pairs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "sequence_id,t_in,t_gen,delta_t,bucket,ms_ssim,perceptual\n";
  f.precision(10);
  for (const auto& p : pairs)
    f << p.sequence_id << ',' << p.t_in << ',' << p.t_gen << ',' << p.delta_t() << ','
      << bucket_name(bucket_of(p.delta_t())) << ',' << p.ms_ssim << ',' << p.perceptual << '\n';
}

void write_report_json(const std::filesystem::path& path, const MetricReport& report) {
  nlohmann::json j;
  j["extractor"] = report.extractor;
  j["fid"] = report.fid ? nlohmann::json(*report.fid) : nlohmann::json(nullptr);
  auto stats = [](const BucketStats& b) {
    return nlohmann::json{{"count", b.count}, {"ms_ssim", b.ms_ssim}, {"perceptual", b.perceptual}};
  };
  for (const char* name : {"T0", "ST", "LT"}) {
    auto it = report.buckets.find(name);
    if (it != report.buckets.end()) j["buckets"][name] = stats(it->second);
  }
  j["mean"] = stats(report.overall);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

}  // namespace cropsim
