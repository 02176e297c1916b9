#include "setflow/inverse_transform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace setflow {

namespace {

constexpr double kDensityFloor = 1e-300;

double fold_reflect(double x, double lo, double hi) {
  const double w = hi - lo;
  double u = std::fmod(x - lo, 2.0 * w);
  if (u < 0.0) u += 2.0 * w;
  return lo + (u <= w ? u : 2.0 * w - u);
}

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

TargetFunction TargetFunction::from_mixture(MixtureRepr repr, Region region) {
  return from_weighted_mixtures({{1.0, std::move(repr)}}, std::move(region));
}

TargetFunction TargetFunction::from_weighted_mixtures(
    std::vector<std::pair<double, MixtureRepr>> parts, Region region) {
  if (parts.empty()) throw std::invalid_argument("target needs at least one mixture");
  region.validate();
  TargetFunction t;
  t.region_ = std::move(region);
  BandwidthHints hints;
  hints.sigma_min = std::numeric_limits<double>::infinity();
  const double d = double(t.region_.dim());
  for (auto& [w, repr] : parts) {
    if (!std::isfinite(w) || w <= 0.0) {
      throw std::invalid_argument("target mixture weights must be finite and > 0");
    }
    repr.validate();
    if (repr.dim() != t.region_.dim()) {
      throw std::invalid_argument("target mixture dimension must match the region");
    }
    hints.sigma_min = std::min(hints.sigma_min, repr.sigma_min());
    hints.sigma_max = std::max(hints.sigma_max, repr.sigma_max());
    for (double s : repr.sigmas) {
      const double component_weight = w / double(repr.size());
      const double curvature =
          component_weight / (std::pow(2.0 * std::numbers::pi * s * s, 0.5 * d) * s * s);
      hints.max_curvature = std::max(hints.max_curvature, curvature);
    }
    t.parts_.push_back(Part{w, std::move(repr)});
  }
  t.hints_ = hints;
  return t;
}

std::optional<double> TargetFunction::grid_peak() const {
  if (!grid_) return std::nullopt;
  return *std::max_element(grid_->values.begin(), grid_->values.end());
}

TargetFunction TargetFunction::from_grid(GridFunction gf) {
  gf.validate();
  TargetFunction t;
  t.region_ = gf.region;
  t.grid_ = std::move(gf);
  return t;
}

double TargetFunction::value(std::span<const double> y) const {
  if (grid_) return interp_eval(*grid_, y);
  double acc = 0.0;
  for (const auto& p : parts_) acc += p.weight * std::exp(log_eval(p.repr, y));
  return acc;
}

std::vector<double> TargetFunction::gradient(std::span<const double> y) const {
  if (grid_) return interp_grad(*grid_, y);
  std::vector<double> acc(region_.dim(), 0.0);
  for (const auto& p : parts_) {
    const auto g = grad(p.repr, y);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += p.weight * g[k];
  }
  return acc;
}

std::vector<double> TargetFunction::log_gradient(std::span<const double> y) const {
  if (grid_) {
    auto g = interp_grad(*grid_, y);
    const double f = std::max(interp_eval(*grid_, y), kDensityFloor);
    for (double& v : g) v /= f;
    return g;
  }
  // grad ln f of the combination as a softmax-weighted average of the parts'
  // log-gradients; stable in the same way the single-mixture kernels are.
  const std::size_t d = region_.dim();
  std::vector<double> logs(parts_.size());
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < parts_.size(); ++m) {
    logs[m] = std::log(parts_[m].weight) + log_eval(parts_[m].repr, y);
    max_log = std::max(max_log, logs[m]);
  }
  std::vector<double> out(d, 0.0);
  double norm = 0.0;
  for (std::size_t m = 0; m < parts_.size(); ++m) {
    const double w = std::exp(logs[m] - max_log);
    norm += w;
    const auto g = log_grad(parts_[m].repr, y);
    for (std::size_t k = 0; k < d; ++k) out[k] += w * g.value[k];
  }
  for (double& v : out) v /= norm;
  return out;
}

DecodeConfig DecodeConfig::resolved(const TargetFunction::BandwidthHints& hints) const {
  if (!std::isfinite(hints.sigma_min) || hints.sigma_min <= 0.0 ||
      hints.sigma_max < hints.sigma_min || !std::isfinite(hints.max_curvature) ||
      hints.max_curvature <= 0.0) {
    throw std::invalid_argument("decode needs positive bandwidth/curvature hints");
  }
  DecodeConfig c = *this;
  if (c.alpha <= 0.0) c.alpha = 0.75 / hints.max_curvature;
  if (c.beta <= 0.0) c.beta = 0.25 * hints.sigma_min * hints.sigma_min;
  if (c.merge_radius <= 0.0) c.merge_radius = 2.5 * hints.sigma_max;
  if (c.min_group == 0) {
    c.min_group = std::size_t(std::max(3.0, double(c.particles) / (10.0 * c.expected_set_size)));
  }
  c.validate_resolved();
  return c;
}

void DecodeConfig::validate_resolved() const {
  if (particles == 0) throw std::invalid_argument("decode needs at least one particle");
  if (!std::isfinite(alpha) || alpha <= 0.0 || !std::isfinite(beta) || beta < 0.0) {
    throw std::invalid_argument("decode step sizes must be positive");
  }
  if (!std::isfinite(merge_radius) || merge_radius <= 0.0) {
    throw std::invalid_argument("decode merge radius must be positive");
  }
  if (min_group == 0) throw std::invalid_argument("decode min_group must be positive");
  if (!std::isfinite(expected_set_size) || expected_set_size <= 0.0) {
    throw std::invalid_argument("decode expected set size must be positive");
  }
}

ParticleSwarm init_particles(const Region& region, std::size_t m, std::uint64_t seed) {
  region.validate();
  if (m == 0) throw std::invalid_argument("init_particles needs at least one particle");
  ParticleSwarm swarm;
  swarm.dim = region.dim();
  swarm.data.resize(m * swarm.dim);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    auto p = swarm.particle(i);
    for (std::size_t k = 0; k < swarm.dim; ++k) {
      p[k] = region.lower[k] + region.extent(k) * unit(rng);
    }
  }
  return swarm;
}

ParticleSwarm langevin_warmup(ParticleSwarm swarm, const TargetFunction& target,
                              double beta, std::size_t steps, std::uint64_t seed,
                              const StepObserver& observer) {
  if (swarm.stage != SwarmStage::init) {
    throw std::invalid_argument("langevin_warmup expects an initialized swarm");
  }
  if (!std::isfinite(beta) || beta < 0.0) {
    throw std::invalid_argument("langevin beta must be finite and >= 0");
  }
  const Region& region = target.region();
  if (region.dim() != swarm.dim) {
    throw std::invalid_argument("swarm and target dimensions differ");
  }

  const double noise_scale = std::sqrt(2.0 * beta);
  // The drift stays bounded even where a grid interpolant crosses zero and
  // grad ln f blows up; direction is preserved.
  const double drift_cap = 0.5 * region.diameter();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < swarm.size(); ++i) {
      auto p = swarm.particle(i);
      const auto g = target.log_gradient(p);
      double drift_norm2 = 0.0;
      for (std::size_t k = 0; k < swarm.dim; ++k) drift_norm2 += g[k] * g[k];
      double scale = beta;
      const double drift_norm = beta * std::sqrt(drift_norm2);
      if (drift_norm > drift_cap) scale = beta * (drift_cap / drift_norm);

      for (std::size_t k = 0; k < swarm.dim; ++k) {
        const double z = normal(rng);
        const double moved = p[k] + scale * g[k] + noise_scale * z;
        p[k] = fold_reflect(moved, region.lower[k], region.upper[k]);
      }
      if (!all_finite(p)) {
        for (std::size_t k = 0; k < swarm.dim; ++k) {
          p[k] = region.lower[k] + region.extent(k) * unit(rng);
        }
        ++swarm.resets;
      }
    }
    ++swarm.step_count;
    if (observer) observer(swarm.step_count, swarm);
  }
  swarm.stage = SwarmStage::warmed;
  return swarm;
}

ParticleSwarm gradient_search(ParticleSwarm swarm, const TargetFunction& target,
                              double alpha, std::size_t steps,
                              const StepObserver& observer) {
  if (swarm.stage == SwarmStage::converged) {
    throw std::invalid_argument("gradient_search expects an initialized or warmed swarm");
  }
  if (!std::isfinite(alpha) || alpha <= 0.0) {
    throw std::invalid_argument("gradient step alpha must be positive");
  }
  const Region& region = target.region();
  if (region.dim() != swarm.dim) {
    throw std::invalid_argument("swarm and target dimensions differ");
  }

  for (std::size_t s = 0; s < steps; ++s) {
    std::size_t keep = 0;
    for (std::size_t i = 0; i < swarm.size(); ++i) {
      auto p = swarm.particle(i);
      const auto g = target.gradient(p);
      bool alive = true;
      for (std::size_t k = 0; k < swarm.dim; ++k) {
        const double moved = p[k] + alpha * g[k];
        if (!std::isfinite(moved) || moved < region.lower[k] || moved > region.upper[k]) {
          alive = false;
          break;
        }
        p[k] = moved;
      }
      if (alive) {
        if (keep != i) {
          std::copy(p.begin(), p.end(), swarm.particle(keep).begin());
        }
        ++keep;
      } else {
        ++swarm.dropped;
      }
    }
    swarm.data.resize(keep * swarm.dim);
    ++swarm.step_count;
    if (observer) observer(swarm.step_count, swarm);
  }

  swarm.final_grad_norms.resize(swarm.size());
  for (std::size_t i = 0; i < swarm.size(); ++i) {
    const auto g = target.gradient(swarm.particle(i));
    double n2 = 0.0;
    for (double v : g) n2 += v * v;
    swarm.final_grad_norms[i] = std::sqrt(n2);
  }
  swarm.stage = SwarmStage::converged;
  return swarm;
}

DedupResult deduplicate(const ParticleSwarm& swarm, double merge_radius,
                        std::size_t min_group) {
  if (swarm.stage != SwarmStage::converged) {
    throw std::invalid_argument("deduplicate expects a converged swarm");
  }
  if (!std::isfinite(merge_radius) || merge_radius <= 0.0) {
    throw std::invalid_argument("merge radius must be positive");
  }

  struct Group {
    std::vector<double> sum;
    std::size_t count = 0;
  };
  std::vector<Group> groups;
  std::vector<double> centroid(swarm.dim);

  const double r2 = merge_radius * merge_radius;
  for (std::size_t i = 0; i < swarm.size(); ++i) {
    const auto p = swarm.particle(i);
    std::size_t best = groups.size();
    double best_d2 = r2;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& g = groups[gi];
      for (std::size_t k = 0; k < swarm.dim; ++k) centroid[k] = g.sum[k] / double(g.count);
      const double d2 = squared_distance(p, centroid);
      if (d2 <= best_d2) {
        best_d2 = d2;
        best = gi;
      }
    }
    if (best == groups.size()) {
      groups.push_back(Group{std::vector<double>(p.begin(), p.end()), 1});
    } else {
      auto& g = groups[best];
      for (std::size_t k = 0; k < swarm.dim; ++k) g.sum[k] += p[k];
      ++g.count;
    }
  }

  DedupResult out;
  out.points = PointSet(swarm.dim == 0 ? 1 : swarm.dim);
  for (const auto& g : groups) {
    out.group_sizes.push_back(g.count);
    if (g.count < min_group) continue;
    for (std::size_t k = 0; k < swarm.dim; ++k) centroid[k] = g.sum[k] / double(g.count);
    out.points.push_back({centroid.data(), swarm.dim});
  }
  out.all_filtered = out.points.size() == 0;
  return out;
}

DecodeResult decode(const TargetFunction& target, const DecodeConfig& config) {
  DecodeConfig cfg = config;
  const bool needs_derivation = cfg.alpha <= 0.0 || cfg.beta <= 0.0 ||
                                cfg.merge_radius <= 0.0 || cfg.min_group == 0;
  if (needs_derivation) {
    const auto hints = target.mixture_hints();
    if (!hints) {
      throw std::invalid_argument(
          "decode on a grid target needs explicit alpha/beta/merge_radius/min_group "
          "or bandwidth hints to derive them from");
    }
    cfg = cfg.resolved(*hints);
  } else {
    cfg.validate_resolved();
  }

  DecodeResult result;
  result.diagnostics.config = cfg;

  StepObserver observer = nullptr;
  if (cfg.trajectory_stride > 0) {
    auto* diag = &result.diagnostics;
    const std::size_t stride = cfg.trajectory_stride;
    observer = [diag, stride](std::size_t step, const ParticleSwarm& s) {
      if (step % stride == 0) diag->trajectory.push_back({step, s.data});
    };
  }

  ParticleSwarm swarm = init_particles(target.region(), cfg.particles, mix_seed(cfg.seed, 0));
  if (cfg.trajectory_stride > 0) result.diagnostics.trajectory.push_back({0, swarm.data});

  swarm = langevin_warmup(std::move(swarm), target, cfg.beta, cfg.langevin_steps,
                          mix_seed(cfg.seed, 1), observer);
  swarm = gradient_search(std::move(swarm), target, cfg.alpha, cfg.grad_steps, observer);
  if (cfg.trajectory_stride > 0 && swarm.step_count % cfg.trajectory_stride != 0) {
    result.diagnostics.trajectory.push_back({swarm.step_count, swarm.data});
  }

  auto dedup = deduplicate(swarm, cfg.merge_radius, cfg.min_group);
  result.points = std::move(dedup.points);
  result.diagnostics.resets = swarm.resets;
  result.diagnostics.dropped = swarm.dropped;
  result.diagnostics.group_sizes = std::move(dedup.group_sizes);
  result.diagnostics.kept_groups = result.points.size();
  result.diagnostics.final_grad_norms = std::move(swarm.final_grad_norms);
  result.diagnostics.all_filtered = dedup.all_filtered;
  return result;
}

}  // namespace setflow
