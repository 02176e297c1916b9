#include "setflow/flow_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Dense>
#include <fftw3.h>
#include <json.hpp>

namespace setflow {

void NoiseMeasureSpec::validate() const {
  if (!std::isfinite(length_scale) || length_scale <= 0.0) {
    throw std::invalid_argument("noise length_scale must be finite and > 0");
  }
  if (!std::isfinite(amplitude) || amplitude <= 0.0) {
    throw std::invalid_argument("noise amplitude must be finite and > 0");
  }
  if (!std::isfinite(nugget) || nugget < 0.0) {
    throw std::invalid_argument("noise nugget must be finite and >= 0");
  }
}

namespace {

// FFTW's planner is not thread-safe; all plan create/destroy goes through here.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwBuffer {
  fftw_complex* data = nullptr;
  explicit FftwBuffer(std::size_t n) {
    data = static_cast<fftw_complex*>(fftw_malloc(n * sizeof(fftw_complex)));
    if (!data) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

}  // namespace

NoiseSampler::NoiseSampler(const NoiseMeasureSpec& spec, const Region& region,
                           std::vector<std::size_t> shape)
    : region_(region), shape_(std::move(shape)) {
  spec.validate();
  region_.validate();
  if (shape_.empty() || shape_.size() != region_.dim()) {
    throw std::invalid_argument("noise sampler shape rank must match region dimension");
  }
  for (std::size_t s : shape_) {
    if (s == 0) throw std::invalid_argument("noise sampler shape entries must be positive");
  }

  const std::size_t d = shape_.size();
  embed_shape_.resize(d);
  std::size_t total = 1;
  for (std::size_t k = 0; k < d; ++k) {
    embed_shape_[k] = std::max<std::size_t>(2, 2 * shape_[k]);
    total *= embed_shape_[k];
  }

  // Covariance of the periodic embedding: squared-exponential at the torus
  // distance, plus the nugget on the diagonal.
  std::vector<double> cov(total);
  {
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
      double r2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double dx = region_.extent(k) / double(shape_[k]);
        const std::size_t wrap = std::min(idx[k], embed_shape_[k] - idx[k]);
        const double r = double(wrap) * dx;
        r2 += r * r;
      }
      cov[flat] = spec.amplitude * spec.amplitude *
                  std::exp(-r2 / (2.0 * spec.length_scale * spec.length_scale));
      std::size_t k = d;
      while (k-- > 0) {
        if (++idx[k] < embed_shape_[k]) break;
        idx[k] = 0;
      }
    }
    cov[0] += spec.nugget;
  }

  // Eigenvalues of the circulant operator = forward DFT of the covariance.
  FftwBuffer in(total), out(total);
  std::vector<int> dims(d);
  for (std::size_t k = 0; k < d; ++k) dims[k] = int(embed_shape_[k]);
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_plan fwd = fftw_plan_dft(int(d), dims.data(), in.data, out.data,
                                  FFTW_FORWARD, FFTW_ESTIMATE);
    for (std::size_t i = 0; i < total; ++i) {
      in.data[i][0] = cov[i];
      in.data[i][1] = 0.0;
    }
    fftw_execute(fwd);
    fftw_destroy_plan(fwd);
  }

  std::vector<double> lambda(total);
  double pos_mass = 0.0, neg_mass = 0.0, lambda_min = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    lambda[i] = out.data[i][0];
    if (lambda[i] >= 0.0) {
      pos_mass += lambda[i];
    } else {
      neg_mass -= lambda[i];
      lambda_min = std::min(lambda_min, lambda[i]);
    }
  }
  // Small negative mass comes from the kink of the wrapped kernel at the
  // torus seam; drop it (the usual approximate embedding). A gross violation
  // gets one uniform spectral shift (a nugget boost), then a hard error.
  if (neg_mass > 1e-3 * pos_mass) {
    for (double& l : lambda) l += -lambda_min;
    pos_mass = neg_mass = 0.0;
    for (double l : lambda) (l >= 0.0 ? pos_mass : neg_mass) += std::abs(l);
    if (neg_mass > 1e-3 * pos_mass) {
      throw numeric_error("noise covariance embedding is not positive semi-definite");
    }
  }
  for (double& l : lambda) l = std::max(l, 0.0);

  spectrum_sqrt_.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    spectrum_sqrt_[i] = std::sqrt(std::max(lambda[i], 0.0) / double(total));
  }

  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft(int(d), dims.data(), in.data, out.data,
                          FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  if (!plan_) throw numeric_error("failed to create FFT plan for noise sampling");
}

NoiseSampler::~NoiseSampler() {
  if (plan_) {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(static_cast<fftw_plan>(plan_));
  }
}

GridFunction NoiseSampler::sample(std::uint64_t seed) const {
  const std::size_t d = shape_.size();
  std::size_t total = 1;
  for (std::size_t s : embed_shape_) total *= s;

  FftwBuffer in(total), out(total);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < total; ++i) {
    in.data[i][0] = spectrum_sqrt_[i] * normal(rng);
    in.data[i][1] = spectrum_sqrt_[i] * normal(rng);
  }
  fftw_execute_dft(static_cast<fftw_plan>(plan_), in.data, out.data);

  GridFunction gf;
  gf.region = region_;
  gf.shape = shape_;
  gf.values.resize(gf.node_count());

  std::vector<std::size_t> idx(d, 0);
  for (std::size_t flat = 0; flat < gf.values.size(); ++flat) {
    std::size_t embed_flat = 0;
    for (std::size_t k = 0; k < d; ++k) {
      embed_flat = embed_flat * embed_shape_[k] + idx[k];
    }
    gf.values[flat] = out.data[embed_flat][0];
    std::size_t k = d;
    while (k-- > 0) {
      if (++idx[k] < shape_[k]) break;
      idx[k] = 0;
    }
  }
  return gf;
}

GridFunction sample_noise(const NoiseMeasureSpec& spec, const Region& region,
                          const std::vector<std::size_t>& shape, std::uint64_t seed) {
  NoiseSampler sampler(spec, region, shape);
  return sampler.sample(seed);
}

namespace {

void require_same_grid(const GridFunction& a, const GridFunction& b, const char* what) {
  if (a.shape != b.shape || a.region.lower != b.region.lower ||
      a.region.upper != b.region.upper) {
    throw std::invalid_argument(std::string(what) + ": grid functions must share region and shape");
  }
}

}  // namespace

GridFunction cond_flow(const GridFunction& h0, const GridFunction& h1, double t, double zeta) {
  require_same_grid(h0, h1, "cond_flow");
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("cond_flow requires t in [0, 1]");
  GridFunction out = h0;
  const double a = 1.0 - (1.0 - zeta) * t;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = a * h0.values[i] + t * h1.values[i];
  }
  return out;
}

GridFunction cond_field(const GridFunction& h, const GridFunction& h1, double t, double zeta) {
  require_same_grid(h, h1, "cond_field");
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("cond_field requires t in [0, 1]");
  const double denom = 1.0 - (1.0 - zeta) * t;
  if (denom <= 0.0) {
    throw numeric_error("conditional field is singular at t = 1 with zeta = 0");
  }
  GridFunction out = h;
  const double b = 1.0 - zeta;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = (h1.values[i] - b * h.values[i]) / denom;
  }
  return out;
}

std::size_t FieldModelArch::feature_count() const {
  std::size_t neigh = 1;
  for (std::size_t k = 0; k < dim; ++k) neigh *= 3;
  return dim + neigh + time_features;
}

std::size_t FieldModelArch::parameter_count() const {
  const std::size_t f = feature_count();
  const std::size_t w = hidden_width;
  return f * w + w + w * w + w + w + 1;
}

void FieldModelArch::validate() const {
  if (dim == 0 || dim > 4) throw std::invalid_argument("field model dim must be in [1, 4]");
  if (hidden_width == 0) throw std::invalid_argument("field model hidden width must be positive");
  if (time_features == 0 || time_features % 2 != 0) {
    throw std::invalid_argument("field model time features must be a positive even count");
  }
}

FieldModel::FieldModel(FieldModelArch arch, std::vector<double> parameters)
    : arch_(arch), theta_(std::move(parameters)) {
  arch_.validate();
  if (theta_.size() != arch_.parameter_count()) {
    throw std::invalid_argument("field model parameter vector has the wrong length");
  }
}

FieldModel FieldModel::create(const FieldModelArch& arch, std::uint64_t seed) {
  arch.validate();
  std::vector<double> theta(arch.parameter_count());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t f = arch.feature_count();
  const std::size_t w = arch.hidden_width;
  std::size_t at = 0;
  const double s1 = 1.0 / std::sqrt(double(f));
  for (std::size_t i = 0; i < f * w; ++i) theta[at++] = s1 * normal(rng);
  at += w;  // b1 = 0
  const double s2 = 1.0 / std::sqrt(double(w));
  for (std::size_t i = 0; i < w * w; ++i) theta[at++] = s2 * normal(rng);
  at += w;  // b2 = 0
  for (std::size_t i = 0; i < w; ++i) theta[at++] = s2 * normal(rng);
  // b3 = 0
  return FieldModel(arch, std::move(theta));
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using ConstMap = Eigen::Map<const MatrixXd>;
using ConstVecMap = Eigen::Map<const VectorXd>;

struct ParamView {
  ConstMap w1;
  ConstVecMap b1;
  ConstMap w2;
  ConstVecMap b2;
  ConstVecMap w3;
  double b3;
};

ParamView view_params(const FieldModelArch& arch, const double* theta) {
  const std::size_t f = arch.feature_count();
  const std::size_t w = arch.hidden_width;
  const double* p = theta;
  ConstMap w1(p, f, w);
  p += f * w;
  ConstVecMap b1(p, w);
  p += w;
  ConstMap w2(p, w, w);
  p += w * w;
  ConstVecMap b2(p, w);
  p += w;
  ConstVecMap w3(p, w);
  p += w;
  return ParamView{w1, b1, w2, b2, w3, *p};
}

// Per-node features: normalized coordinates, the clamped 3^D neighborhood of
// input values, and sin/cos time harmonics.
MatrixXd build_features(const FieldModelArch& arch, const GridFunction& h, double t) {
  const std::size_t d = arch.dim;
  if (h.dim() != d) throw std::invalid_argument("field model grid dimension mismatch");
  const std::size_t n = h.node_count();

  std::size_t neigh = 1;
  for (std::size_t k = 0; k < d; ++k) neigh *= 3;

  std::vector<std::ptrdiff_t> offsets(neigh * d);
  for (std::size_t o = 0; o < neigh; ++o) {
    std::size_t rem = o;
    for (std::size_t k = d; k-- > 0;) {
      offsets[o * d + k] = std::ptrdiff_t(rem % 3) - 1;
      rem /= 3;
    }
  }

  std::vector<double> time_feat(arch.time_features);
  for (std::size_t j = 0; j < arch.time_features / 2; ++j) {
    const double freq = std::pow(2.0, double(j)) * std::numbers::pi;
    time_feat[2 * j] = std::sin(freq * t);
    time_feat[2 * j + 1] = std::cos(freq * t);
  }

  std::vector<std::size_t> stride(d);
  {
    std::size_t s = 1;
    for (std::size_t k = d; k-- > 0;) {
      stride[k] = s;
      s *= h.shape[k];
    }
  }

  MatrixXd x(n, arch.feature_count());
  std::vector<std::size_t> idx(d, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < d; ++k) {
      x(flat, col++) = 2.0 * (double(idx[k]) + 0.5) / double(h.shape[k]) - 1.0;
    }
    for (std::size_t o = 0; o < neigh; ++o) {
      std::size_t nflat = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const auto ni = std::clamp<std::ptrdiff_t>(
            std::ptrdiff_t(idx[k]) + offsets[o * d + k], 0, std::ptrdiff_t(h.shape[k]) - 1);
        nflat += std::size_t(ni) * stride[k];
      }
      x(flat, col++) = h.values[nflat];
    }
    for (double tf : time_feat) x(flat, col++) = tf;

    std::size_t k = d;
    while (k-- > 0) {
      if (++idx[k] < h.shape[k]) break;
      idx[k] = 0;
    }
  }
  return x;
}

struct ForwardCache {
  MatrixXd x;
  MatrixXd h1;
  MatrixXd h2;
  VectorXd pred;
};

// tanh routed through exp, which Eigen vectorizes for doubles; the plain
// array().tanh() falls back to scalar libm calls and dominates the step time.
void tanh_in_place(MatrixXd& z) {
  z = 1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0);
}

ForwardCache forward(const FieldModelArch& arch, const double* theta,
                     const GridFunction& h, double t) {
  const auto p = view_params(arch, theta);
  ForwardCache c;
  c.x = build_features(arch, h, t);
  c.h1 = (c.x * p.w1).rowwise() + p.b1.transpose();
  tanh_in_place(c.h1);
  c.h2 = (c.h1 * p.w2).rowwise() + p.b2.transpose();
  tanh_in_place(c.h2);
  c.pred = c.h2 * p.w3;
  c.pred.array() += p.b3;
  return c;
}

void backward(const FieldModelArch& arch, const double* theta, const ForwardCache& c,
              const VectorXd& d_out, double* grad) {
  const auto p = view_params(arch, theta);
  const std::size_t f = arch.feature_count();
  const std::size_t w = arch.hidden_width;

  const VectorXd d_w3 = c.h2.transpose() * d_out;
  const double d_b3 = d_out.sum();
  const MatrixXd d_h2 = d_out * p.w3.transpose();
  const MatrixXd d_z2 = d_h2.array() * (1.0 - c.h2.array().square());
  const MatrixXd d_w2 = c.h1.transpose() * d_z2;
  const VectorXd d_b2 = d_z2.colwise().sum();
  const MatrixXd d_h1 = d_z2 * p.w2.transpose();
  const MatrixXd d_z1 = d_h1.array() * (1.0 - c.h1.array().square());
  const MatrixXd d_w1 = c.x.transpose() * d_z1;
  const VectorXd d_b1 = d_z1.colwise().sum();

  double* g = grad;
  Eigen::Map<MatrixXd>(g, f, w) += d_w1;
  g += f * w;
  Eigen::Map<VectorXd>(g, w) += d_b1;
  g += w;
  Eigen::Map<MatrixXd>(g, w, w) += d_w2;
  g += w * w;
  Eigen::Map<VectorXd>(g, w) += d_b2;
  g += w;
  Eigen::Map<VectorXd>(g, w) += d_w3;
  g += w;
  *g += d_b3;
}

// Loss and parameter gradient of one conditional-path sample.
double fm_loss_single(const FieldModel& model, const FlowSample& sample, double zeta,
                      double* grad) {
  const GridFunction h_mid = cond_flow(sample.h0, sample.h1, sample.t, zeta);
  const GridFunction target = cond_field(h_mid, sample.h1, sample.t, zeta);

  const auto cache = forward(model.arch(), model.parameters().data(), h_mid, sample.t);
  const double cell = h_mid.cell_volume();
  VectorXd residual = cache.pred;
  for (std::size_t i = 0; i < target.values.size(); ++i) residual[Eigen::Index(i)] -= target.values[i];

  const double loss = cell * residual.squaredNorm();
  if (grad != nullptr) {
    const VectorXd d_out = 2.0 * cell * residual;
    backward(model.arch(), model.parameters().data(), cache, d_out, grad);
  }
  return loss;
}

}  // namespace

GridFunction FieldModel::apply(const GridFunction& h, double t) const {
  const auto cache = forward(arch_, theta_.data(), h, t);
  GridFunction out = h;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = cache.pred[Eigen::Index(i)];
  return out;
}

FmLoss fm_loss(const FieldModel& model, std::span<const FlowSample> batch, double zeta) {
  if (batch.empty()) throw std::invalid_argument("fm_loss needs a nonempty batch");
  FmLoss out;
  out.grad.assign(model.parameters().size(), 0.0);
  std::vector<double> scratch(model.parameters().size());
  for (const auto& sample : batch) {
    std::fill(scratch.begin(), scratch.end(), 0.0);
    out.loss += fm_loss_single(model, sample, zeta, scratch.data());
    for (std::size_t i = 0; i < scratch.size(); ++i) out.grad[i] += scratch[i];
  }
  const double inv_b = 1.0 / double(batch.size());
  out.loss *= inv_b;
  for (double& g : out.grad) g *= inv_b;
  if (!std::isfinite(out.loss)) {
    throw numeric_error("flow-matching loss is not finite");
  }
  return out;
}

double fm_loss_value(const FieldFn& field, std::span<const FlowSample> batch, double zeta) {
  if (batch.empty()) throw std::invalid_argument("fm_loss_value needs a nonempty batch");
  double loss = 0.0;
  for (const auto& sample : batch) {
    const GridFunction h_mid = cond_flow(sample.h0, sample.h1, sample.t, zeta);
    const GridFunction target = cond_field(h_mid, sample.h1, sample.t, zeta);
    const GridFunction pred = field(h_mid, sample.t);
    double acc = 0.0;
    for (std::size_t i = 0; i < target.values.size(); ++i) {
      const double r = pred.values[i] - target.values[i];
      acc += r * r;
    }
    loss += h_mid.cell_volume() * acc;
  }
  return loss / double(batch.size());
}

void TrainConfig::validate() const {
  if (!(zeta > 0.0 && zeta < 1.0)) throw std::invalid_argument("train zeta must lie in (0, 1)");
  if (batch == 0) throw std::invalid_argument("train batch must be >= 1");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw std::invalid_argument("train learning rate must be finite and >= 0");
  }
  if (lr_schedule != "constant" && lr_schedule != "cosine") {
    throw std::invalid_argument("train lr_schedule must be 'constant' or 'cosine'");
  }
}

TrainResult train(FieldModel& model, const std::vector<GridFunction>& corpus,
                  const NoiseMeasureSpec& noise, const TrainConfig& config,
                  const OptimizerState* resume) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("train needs a nonempty corpus");
  for (const auto& gf : corpus) require_same_grid(corpus.front(), gf, "train");
  if (corpus.front().dim() != model.arch().dim) {
    throw std::invalid_argument("train corpus dimension does not match the model");
  }

  const std::size_t param_count = model.parameters().size();
  TrainResult result;
  result.optimizer.m.assign(param_count, 0.0);
  result.optimizer.v.assign(param_count, 0.0);
  if (resume != nullptr) {
    if (resume->m.size() != param_count || resume->v.size() != param_count) {
      throw std::invalid_argument("resume optimizer state does not match the model");
    }
    result.optimizer = *resume;
  }

  std::size_t threads = config.threads;
  if (threads == 0) {
    threads = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 8);
  }
  threads = std::min(threads, config.batch);

  std::vector<std::unique_ptr<NoiseSampler>> samplers;
  samplers.reserve(threads);
  for (std::size_t i = 0; i < threads; ++i) {
    samplers.push_back(std::make_unique<NoiseSampler>(noise, corpus.front().region,
                                                      corpus.front().shape));
  }

  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::vector<double> losses(config.batch);
  std::vector<std::vector<double>> grads(config.batch, std::vector<double>(param_count));
  std::vector<double> grad(param_count);

  result.loss_trace.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::size_t global_step = result.optimizer.step + 1;

    auto run_elems = [&](std::size_t tid) {
      for (std::size_t e = tid; e < config.batch; e += threads) {
        const std::uint64_t elem_seed = mix_seed(config.seed, global_step, e);
        FlowSample sample;
        sample.h0 = samplers[tid]->sample(mix_seed(elem_seed, 0));
        std::mt19937_64 rng(mix_seed(elem_seed, 1));
        std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        sample.h1 = corpus[pick(rng)];
        sample.t = unit(rng);
        std::fill(grads[e].begin(), grads[e].end(), 0.0);
        losses[e] = fm_loss_single(model, sample, config.zeta, grads[e].data());
      }
    };

    std::vector<std::thread> pool;
    for (std::size_t tid = 1; tid < threads; ++tid) pool.emplace_back(run_elems, tid);
    run_elems(0);
    for (auto& th : pool) th.join();

    // Reduce in element order so the result is identical at any thread count.
    double loss = 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t e = 0; e < config.batch; ++e) {
      loss += losses[e];
      for (std::size_t i = 0; i < param_count; ++i) grad[i] += grads[e][i];
    }
    const double inv_b = 1.0 / double(config.batch);
    loss *= inv_b;

    if (!std::isfinite(loss) || loss > 1e6) {
      throw numeric_error("training diverged at step " + std::to_string(global_step) +
                          " (loss " + std::to_string(loss) + ")");
    }

    double lr = config.learning_rate;
    if (config.lr_schedule == "cosine") {
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / double(config.steps)));
    }

    result.optimizer.step = global_step;
    auto& m = result.optimizer.m;
    auto& v = result.optimizer.v;
    auto& theta = model.parameters();
    const double bc1 = 1.0 - std::pow(beta1, double(global_step));
    const double bc2 = 1.0 - std::pow(beta2, double(global_step));
    for (std::size_t i = 0; i < param_count; ++i) {
      const double g = grad[i] * inv_b;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + adam_eps);
    }
    result.loss_trace.push_back(loss);
  }
  return result;
}

GridFunction ode_sample(const FieldFn& field, GridFunction noise, std::size_t n_steps) {
  if (n_steps == 0) throw std::invalid_argument("ode_sample needs at least one step");
  noise.validate();
  const double dt = 1.0 / double(n_steps);
  for (std::size_t k = 0; k < n_steps; ++k) {
    const GridFunction u = field(noise, double(k) * dt);
    require_same_grid(noise, u, "ode_sample");
    for (std::size_t i = 0; i < noise.values.size(); ++i) {
      noise.values[i] += dt * u.values[i];
      if (!std::isfinite(noise.values[i])) {
        throw numeric_error("ode_sample state became non-finite at step " + std::to_string(k));
      }
    }
  }
  return noise;
}

GridFunction ode_sample(const FieldModel& model, GridFunction noise, std::size_t n_steps) {
  return ode_sample([&model](const GridFunction& h, double t) { return model.apply(h, t); },
                    std::move(noise), n_steps);
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ckpt.arch.validate();
  if (ckpt.theta.size() != ckpt.arch.parameter_count()) {
    throw std::invalid_argument("checkpoint parameter vector has the wrong length");
  }
  nlohmann::json header;
  header["format"] = "setflow-checkpoint";
  header["version"] = 1;
  header["arch"] = {{"dim", ckpt.arch.dim},
                    {"hidden_width", ckpt.arch.hidden_width},
                    {"time_features", ckpt.arch.time_features}};
  header["grid"] = {{"lower", ckpt.region.lower},
                    {"upper", ckpt.region.upper},
                    {"shape", ckpt.shape}};
  header["zeta"] = ckpt.zeta;
  header["step"] = ckpt.optimizer.step;
  header["param_count"] = ckpt.theta.size();
  header["opt_count"] = ckpt.optimizer.m.size();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open checkpoint for writing: " + path);
  out << header.dump() << '\n';
  auto dump = [&out](const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
  };
  dump(ckpt.theta);
  dump(ckpt.optimizer.m);
  dump(ckpt.optimizer.v);
  if (!out) throw io_error("failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line)) throw io_error("checkpoint " + path + ": missing header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw io_error("checkpoint " + path + ": bad header: " + e.what());
  }
  if (!header.contains("format") || header["format"] != "setflow-checkpoint" ||
      header.value("version", 0) != 1) {
    throw io_error("checkpoint " + path + ": not a setflow checkpoint");
  }

  Checkpoint ckpt;
  try {
    ckpt.arch.dim = header.at("arch").at("dim").get<std::size_t>();
    ckpt.arch.hidden_width = header.at("arch").at("hidden_width").get<std::size_t>();
    ckpt.arch.time_features = header.at("arch").at("time_features").get<std::size_t>();
    ckpt.region.lower = header.at("grid").at("lower").get<std::vector<double>>();
    ckpt.region.upper = header.at("grid").at("upper").get<std::vector<double>>();
    ckpt.shape = header.at("grid").at("shape").get<std::vector<std::size_t>>();
    ckpt.zeta = header.at("zeta").get<double>();
    ckpt.optimizer.step = header.at("step").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw io_error("checkpoint " + path + ": bad header schema: " + e.what());
  }
  try {
    ckpt.arch.validate();
    ckpt.region.validate();
  } catch (const std::invalid_argument& e) {
    throw io_error("checkpoint " + path + ": " + e.what());
  }

  const auto param_count = header.value("param_count", std::size_t(0));
  const auto opt_count = header.value("opt_count", std::size_t(0));
  if (param_count != ckpt.arch.parameter_count()) {
    throw io_error("checkpoint " + path + ": parameter count does not match architecture");
  }
  auto load = [&in, &path](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    if (!in.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(double)))) {
      throw io_error("checkpoint " + path + ": truncated payload");
    }
  };
  load(ckpt.theta, param_count);
  load(ckpt.optimizer.m, opt_count);
  load(ckpt.optimizer.v, opt_count);
  for (double t : ckpt.theta) {
    if (!std::isfinite(t)) throw io_error("checkpoint " + path + ": non-finite parameters");
  }
  return ckpt;
}

}  // namespace setflow
