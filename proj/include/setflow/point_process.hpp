#pragma once

#include <functional>
#include <string>
#include <vector>

#include "setflow/common.hpp"

namespace setflow {

enum class ProcessVariant { poisson_sqexp_mixture, hawkes_exp };

// Parameters of the ground-truth generators. The Poisson variant uses a
// squared-exponential mixture intensity mu * sum_i w_i exp(-|x - b_i|^2);
// the Hawkes variant a 1-D self-exciting intensity
// mu + sum_{s<t} alpha exp(-beta (t - s)).
struct IntensitySpec {
  ProcessVariant variant = ProcessVariant::poisson_sqexp_mixture;

  double mu = 1.0;
  // poisson_sqexp_mixture only
  std::vector<double> weights;
  PointSet centers;
  // hawkes_exp only
  double alpha = 0.0;
  double beta = 1.0;

  void validate() const;

  // 2-D squared-exponential mixture with three components; the stock demo
  // process for synthetic corpora.
  static IntensitySpec demo_poisson();
  // Subcritical 1-D self-exciting process used for demo corpora.
  static IntensitySpec demo_hawkes();
};

// Evaluates the inhomogeneous Poisson intensity at x.
double poisson_intensity(std::span<const double> x, const IntensitySpec& spec);

// Thinning sampler for an arbitrary bounded intensity on a region.
// `lambda_max` must dominate the intensity over the region.
PointSet sample_poisson(const std::function<double(std::span<const double>)>& intensity,
                        double lambda_max, const Region& region, std::uint64_t seed);

// Thinning sampler for the squared-exponential mixture spec; the dominating
// constant comes from a coarse grid scan with a 1.1 safety factor.
PointSet sample_poisson(const IntensitySpec& spec, const Region& region, std::uint64_t seed);

// Ogata's modified thinning for the exponential-kernel Hawkes process.
// Returns 1-D event times in [0, horizon].
PointSet sample_hawkes(const IntensitySpec& spec, double horizon, std::uint64_t seed);

// Corpus persistence: JSON-lines, a header record followed by one object
// per set: {"dim": D, "points": [[..], ..]}. Round-trips are lossless.
void write_corpus(const std::string& path, const std::vector<PointSet>& sets);
std::vector<PointSet> read_corpus(const std::string& path);

std::string corpus_to_jsonl(const std::vector<PointSet>& sets);
std::vector<PointSet> corpus_from_jsonl(const std::string& text);

}  // namespace setflow
