#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "setflow/representation.hpp"

namespace setflow {

// Stationary squared-exponential Gaussian measure on the grid, sampled by
// circulant embedding. length_scale is in region coordinate units; the nugget
// adds white noise on the diagonal (and keeps the embedding positive).
struct NoiseMeasureSpec {
  double length_scale = 1.0;
  double amplitude = 1.0;
  double nugget = 1e-6;

  void validate() const;
};

class NoiseSampler {
 public:
  NoiseSampler(const NoiseMeasureSpec& spec, const Region& region,
               std::vector<std::size_t> shape);
  ~NoiseSampler();
  NoiseSampler(const NoiseSampler&) = delete;
  NoiseSampler& operator=(const NoiseSampler&) = delete;

  // Zero-mean Gaussian field with the spec covariance; a pure function of the
  // seed. Safe to call concurrently from multiple threads.
  GridFunction sample(std::uint64_t seed) const;

 private:
  Region region_;
  std::vector<std::size_t> shape_;
  std::vector<std::size_t> embed_shape_;
  std::vector<double> spectrum_sqrt_;  // sqrt(eigenvalue / embed size)
  void* plan_ = nullptr;               // fftw backward plan
};

// One-shot convenience wrapper around NoiseSampler.
GridFunction sample_noise(const NoiseMeasureSpec& spec, const Region& region,
                          const std::vector<std::size_t>& shape, std::uint64_t seed);

// Conditional flow (1 - (1 - zeta) t) h0 + t h1, pointwise.
GridFunction cond_flow(const GridFunction& h0, const GridFunction& h1, double t, double zeta);

// Closed-form conditional vector field (h1 - (1 - zeta) h) / (1 - (1 - zeta) t).
GridFunction cond_field(const GridFunction& h, const GridFunction& h1, double t, double zeta);

// Weight-shared per-node network approximating the vector field: every node
// sees its normalized coordinates, the 3^D neighborhood of input values and a
// sinusoidal embedding of t, through two tanh layers to one output value.
// Sharing weights across nodes keeps the model shape-agnostic.
struct FieldModelArch {
  std::size_t dim = 2;
  std::size_t hidden_width = 64;
  std::size_t time_features = 8;  // even: sin/cos pairs

  std::size_t feature_count() const;
  std::size_t parameter_count() const;
  void validate() const;
};

class FieldModel {
 public:
  FieldModel() = default;
  FieldModel(FieldModelArch arch, std::vector<double> parameters);

  static FieldModel create(const FieldModelArch& arch, std::uint64_t seed);

  const FieldModelArch& arch() const { return arch_; }
  const std::vector<double>& parameters() const { return theta_; }
  std::vector<double>& parameters() { return theta_; }

  GridFunction apply(const GridFunction& h, double t) const;

 private:
  FieldModelArch arch_;
  std::vector<double> theta_;
};

struct FlowSample {
  GridFunction h0;
  GridFunction h1;
  double t = 0.0;
};

struct FmLoss {
  double loss = 0.0;
  std::vector<double> grad;
};

// Flow-matching loss: mean over the batch of the grid L2 norm (cell volume
// times sum of squares) of u_theta(h_mid, t) - u_t(h_mid | h1), with h_mid on
// the conditional path. Returns the loss and its parameter gradient.
FmLoss fm_loss(const FieldModel& model, std::span<const FlowSample> batch, double zeta);

using FieldFn = std::function<GridFunction(const GridFunction&, double)>;

// Loss of an arbitrary field against the conditional target; no gradient.
double fm_loss_value(const FieldFn& field, std::span<const FlowSample> batch, double zeta);

struct TrainConfig {
  double zeta = 1e-3;
  std::size_t batch = 16;
  std::size_t steps = 20000;
  double learning_rate = 1e-3;
  std::string lr_schedule = "constant";  // constant | cosine
  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0: pick from hardware, capped at 8

  void validate() const;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

struct TrainResult {
  std::vector<double> loss_trace;  // one entry per step
  OptimizerState optimizer;
};

// Adam over the flow-matching loss. Each step draws per-element noise,
// corpus functions and times from counter-derived streams, so the whole run
// is a pure function of (corpus, config, resume state) at any thread count.
TrainResult train(FieldModel& model, const std::vector<GridFunction>& corpus,
                  const NoiseMeasureSpec& noise, const TrainConfig& config,
                  const OptimizerState* resume = nullptr);

// Explicit Euler integration of dh/dt = u(h, t) from t = 0 to 1.
GridFunction ode_sample(const FieldFn& field, GridFunction noise, std::size_t n_steps);
GridFunction ode_sample(const FieldModel& model, GridFunction noise, std::size_t n_steps);

struct Checkpoint {
  FieldModelArch arch;
  Region region;
  std::vector<std::size_t> shape;
  double zeta = 1e-3;
  std::vector<double> theta;
  OptimizerState optimizer;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace setflow
