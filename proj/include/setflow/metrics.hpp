#pragma once

#include <vector>

#include "setflow/representation.hpp"

namespace setflow {

struct CorpusStats {
  std::vector<PointSet> sets;
  std::vector<std::size_t> sizes;

  static CorpusStats from_sets(std::vector<PointSet> sets);
};

// Order-1 Wasserstein distance between the empirical set-size distributions,
// computed exactly as the L1 distance between the two quantile functions.
double s_wstein(const CorpusStats& gen, const CorpusStats& ref);

enum class MmdEstimator { unbiased, biased };

struct MmdResult {
  double value = 0.0;  // squared MMD estimate; the unbiased form may be negative
  std::size_t excluded_gen = 0;  // empty sets dropped (kernel undefined)
  std::size_t excluded_ref = 0;
};

// MMD between two corpora of point sets under the set-level kernel
// k(X, Y) = <f_X, f_Y> / sqrt(<f_X, f_X> <f_Y, f_Y>), the cosine-normalized
// L2 inner product of the mixture representations at the given bandwidth.
MmdResult d_mmd(const CorpusStats& gen, const CorpusStats& ref, double bandwidth_epsilon,
                MmdEstimator estimator = MmdEstimator::unbiased);

// Symmetric mean nearest-neighbor distance.
double chamfer(const PointSet& a, const PointSet& b);

// Building blocks shared with permutation-test tooling: encodings of the
// nonempty sets of a corpus (singletons use the fallback region bandwidth)
// and the Gram matrix of the normalized kernel.
Region pooled_bounding_region(const std::vector<const CorpusStats*>& corpora);
std::vector<MixtureRepr> encode_corpus(const CorpusStats& corpus, double epsilon,
                                       const Region& fallback, std::size_t* excluded = nullptr);
std::vector<double> kernel_matrix(const std::vector<MixtureRepr>& reprs);

}  // namespace setflow
