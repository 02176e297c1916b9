#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "setflow/representation.hpp"

namespace setflow {

enum class SwarmStage { init, warmed, converged };

// M evolving particles with stage counters for warm-up / search. Particles
// are kept inside the region by reflection; the search stage may drop
// divergent ones instead.
struct ParticleSwarm {
  std::size_t dim = 0;
  std::vector<double> data;  // M x dim, row-major
  SwarmStage stage = SwarmStage::init;
  std::size_t step_count = 0;
  std::size_t resets = 0;   // non-finite particles resampled during warm-up
  std::size_t dropped = 0;  // particles discarded during search
  std::vector<double> final_grad_norms;  // filled by gradient_search

  std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> particle(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::span<double> particle(std::size_t i) { return {data.data() + i * dim, dim}; }
};

// Decode target: an exact mixture (possibly a weighted combination, which is
// how tests inject spurious bumps) or an interpolated grid function. Provides
// the value / gradient / log-gradient callbacks the dynamics need.
class TargetFunction {
 public:
  static TargetFunction from_mixture(MixtureRepr repr, Region region);
  static TargetFunction from_weighted_mixtures(
      std::vector<std::pair<double, MixtureRepr>> parts, Region region);
  static TargetFunction from_grid(GridFunction gf);

  double value(std::span<const double> y) const;
  std::vector<double> gradient(std::span<const double> y) const;
  // Gradient of ln f. For mixtures this is a stable ratio that never
  // underflows; grid interpolants clamp the density at 1e-300 before dividing.
  std::vector<double> log_gradient(std::span<const double> y) const;

  const Region& region() const { return region_; }

  // Length and stiffness scales the decode step sizes derive from.
  struct BandwidthHints {
    double sigma_min = 0.0;
    double sigma_max = 0.0;
    double max_curvature = 0.0;  // max_i w_i / ((2 pi sigma_i^2)^{D/2} sigma_i^2)
  };
  // Exact for mixture targets; empty for grid targets (the caller supplies a
  // bandwidth and the grid peak instead).
  std::optional<BandwidthHints> mixture_hints() const { return hints_; }
  // Largest grid value; empty for mixture targets.
  std::optional<double> grid_peak() const;

 private:
  TargetFunction() = default;
  struct Part {
    double weight = 1.0;
    MixtureRepr repr;
  };
  std::vector<Part> parts_;
  std::optional<GridFunction> grid_;
  Region region_;
  std::optional<BandwidthHints> hints_;
};

// All lengths are derived from the target's bandwidth scales unless set
// explicitly; zero/unset fields mean "derive".
struct DecodeConfig {
  std::size_t particles = 2048;      // M
  std::size_t langevin_steps = 300;  // S_lgvin
  std::size_t grad_steps = 200;      // S_grad
  double alpha = 0.0;                // gradient-ascent step, default 0.75 / max_curvature
  double beta = 0.0;                 // Langevin step, default (0.5 sigma_min)^2
  double merge_radius = 0.0;         // default 2.5 sigma_max
  std::size_t min_group = 0;         // default max(3, M / (10 N_expected))
  double expected_set_size = 5.0;    // N_expected
  std::uint64_t seed = 0;
  std::size_t trajectory_stride = 0;  // record particle snapshots every k steps

  // Returns a copy with every derived field materialized. max_curvature
  // bounds |f''| at the peaks and keeps the constant-step ascent stable.
  DecodeConfig resolved(const TargetFunction::BandwidthHints& hints) const;
  void validate_resolved() const;
};

using StepObserver = std::function<void(std::size_t step, const ParticleSwarm&)>;

// Uniform i.i.d. particles over the region.
ParticleSwarm init_particles(const Region& region, std::size_t m, std::uint64_t seed);

// Unadjusted Langevin iterations y <- y + beta grad ln f(y) + sqrt(2 beta) z,
// reflected at the region boundary. Non-finite particles are resampled
// uniformly and counted.
ParticleSwarm langevin_warmup(ParticleSwarm swarm, const TargetFunction& target,
                              double beta, std::size_t steps, std::uint64_t seed,
                              const StepObserver& observer = nullptr);

// Gradient ascent y <- y + alpha grad f(y). Particles that leave the region
// or go non-finite are dropped and counted.
ParticleSwarm gradient_search(ParticleSwarm swarm, const TargetFunction& target,
                              double alpha, std::size_t steps,
                              const StepObserver& observer = nullptr);

struct DedupResult {
  PointSet points;                      // centroids of the surviving groups
  std::vector<std::size_t> group_sizes;  // all groups, before filtering
  bool all_filtered = false;
};

// Single-pass clustering: each particle joins the nearest group whose
// centroid lies within merge_radius, else founds a new group. Groups smaller
// than min_group are discarded and survivors are averaged.
DedupResult deduplicate(const ParticleSwarm& swarm, double merge_radius,
                        std::size_t min_group);

struct TrajectorySnapshot {
  std::size_t step = 0;
  std::vector<double> particles;  // M x dim at that step
};

struct DecodeDiagnostics {
  std::size_t resets = 0;
  std::size_t dropped = 0;
  std::vector<std::size_t> group_sizes;
  std::size_t kept_groups = 0;
  std::vector<double> final_grad_norms;
  bool all_filtered = false;
  DecodeConfig config;  // fully resolved values used for the run
  std::vector<TrajectorySnapshot> trajectory;
};

struct DecodeResult {
  PointSet points;
  DecodeDiagnostics diagnostics;
};

// Full inverse transform: init -> Langevin warm-up -> gradient search ->
// de-duplication.
DecodeResult decode(const TargetFunction& target, const DecodeConfig& config);

}  // namespace setflow
