#pragma once

#include <optional>
#include <string>
#include <vector>

#include "setflow/common.hpp"

namespace setflow {

// Symbolic sum of Dirac atoms with weights 1/N. Exists as a type only; no
// pointwise evaluation is defined for it.
struct DeltaRepr {
  PointSet atoms;
};

// Gaussian mixture surrogate of a point set: equal weights 1/N, one adaptive
// isotropic bandwidth per center, sigma_i = epsilon * ln(1 + nearest-neighbor
// distance of center i). Integrates to exactly 1 over R^D.
struct MixtureRepr {
  PointSet centers;
  std::vector<double> sigmas;
  double epsilon = 0.0;

  std::size_t dim() const { return centers.dim(); }
  std::size_t size() const { return centers.size(); }
  double sigma_min() const;
  double sigma_max() const;
  void validate() const;
};

// Builds the mixture representation of a set. For N == 1 the nearest-neighbor
// rule has no neighbor; a region must be supplied and the bandwidth falls back
// to epsilon * ln(1 + region diameter).
MixtureRepr encode(const PointSet& set, double epsilon,
                   const std::optional<Region>& region = std::nullopt);

// Pointwise density of the mixture (normalized Gaussians, weights 1/N).
double eval(const MixtureRepr& repr, std::span<const double> y);

// ln of the density, computed by log-sum-exp; stays finite far outside the
// support where eval underflows.
double log_eval(const MixtureRepr& repr, std::span<const double> y);

// Gradient of the density.
std::vector<double> grad(const MixtureRepr& repr, std::span<const double> y);

struct LogGrad {
  std::vector<double> value;
  // Set when the density lies below the 1e-300 floor. The gradient itself is
  // exact regardless: it is a ratio of shifted sums that never underflows.
  bool clamped = false;
};

// Gradient of ln(density).
LogGrad log_grad(const MixtureRepr& repr, std::span<const double> y);

// L2 inner product of two mixtures via the Gaussian product identity:
// (1 / Na Nb) sum_ij G(x_i^a; x_j^b, (sigma_i^2 + sigma_j^2) I). Exact.
double l2_inner(const MixtureRepr& a, const MixtureRepr& b);

// Function sampled at the cell centers of a regular grid over a region.
// values are row-major with the last axis fastest.
struct GridFunction {
  Region region;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  std::size_t dim() const { return shape.size(); }
  std::size_t node_count() const;
  double cell_volume() const;
  double spacing(std::size_t axis) const {
    return region.extent(axis) / double(shape[axis]);
  }
  // Coordinate of the cell center with the given index along an axis.
  double node_coord(std::size_t axis, std::size_t index) const {
    return region.lower[axis] + (double(index) + 0.5) * spacing(axis);
  }
  double integral() const;  // midpoint Riemann sum
  void validate() const;
};

// Samples the mixture at cell centers. Requires the region to contain every
// center padded by 4 * sigma_max, and at least 32 cells per axis.
GridFunction rasterize(const MixtureRepr& repr, const Region& region,
                       const std::vector<std::size_t>& shape);

// Multilinear interpolation between cell centers (clamped within the outer
// half-cell margin). Queries outside the region are an error.
double interp_eval(const GridFunction& gf, std::span<const double> y);

// Gradient of the interpolant: central differences of the node values,
// themselves interpolated multilinearly. Second-order accurate.
std::vector<double> interp_grad(const GridFunction& gf, std::span<const double> y);

struct W2CheckEntry {
  double epsilon = 0.0;
  double bound = 0.0;      // epsilon * sqrt(D) * ln(1 + set diameter)
  double empirical = 0.0;  // sampled transport-plan cost
};

struct W2CheckResult {
  std::vector<W2CheckEntry> entries;
  double slope = 0.0;  // log-log regression of empirical vs epsilon
};

// Checks the linear convergence rate of the mixture toward the delta
// representation: draws samples from the mixture, pairs each with its
// generating center (the diagonal transport plan), and compares the sampled
// W2 cost against the epsilon * sqrt(D) * ln(1 + rho) bound. Throws
// numeric_error if the bound is exceeded by more than 5% or the fitted slope
// leaves [0.9, 1.1].
W2CheckResult w2_bound_check(const PointSet& set, const std::vector<double>& epsilons,
                             std::uint64_t seed, std::size_t samples = 2000);

// Grid file persistence: text (.gft) or binary (.gfb) chosen by extension.
void write_grid_function(const std::string& path, const GridFunction& gf);
GridFunction read_grid_function(const std::string& path);

}  // namespace setflow
