#include "setflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace setflow {

CorpusStats CorpusStats::from_sets(std::vector<PointSet> sets) {
  CorpusStats c;
  c.sizes.reserve(sets.size());
  for (const auto& s : sets) c.sizes.push_back(s.size());
  c.sets = std::move(sets);
  return c;
}

double s_wstein(const CorpusStats& gen, const CorpusStats& ref) {
  if (gen.sizes.empty() || ref.sizes.empty()) {
    throw std::invalid_argument("s_wstein needs nonempty corpora");
  }
  std::vector<double> a(gen.sizes.begin(), gen.sizes.end());
  std::vector<double> b(ref.sizes.begin(), ref.sizes.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());

  // Piecewise-constant quantile functions; walk their merged breakpoints in
  // exact units of 1 / (m n).
  const std::size_t m = a.size(), n = b.size();
  const unsigned long long total = (unsigned long long)(m)*n;
  std::size_t i = 0, j = 0;
  unsigned long long q_prev = 0;
  double acc = 0.0;
  while (i < m && j < n) {
    const unsigned long long qa = (unsigned long long)(i + 1) * n;
    const unsigned long long qb = (unsigned long long)(j + 1) * m;
    const unsigned long long q_next = std::min(qa, qb);
    acc += double(q_next - q_prev) * std::abs(a[i] - b[j]);
    if (qa == q_next) ++i;
    if (qb == q_next) ++j;
    q_prev = q_next;
  }
  return acc / double(total);
}

Region pooled_bounding_region(const std::vector<const CorpusStats*>& corpora) {
  std::size_t dim = 0;
  for (const auto* c : corpora) {
    for (const auto& s : c->sets) {
      if (s.size() > 0) {
        dim = s.dim();
        break;
      }
    }
    if (dim > 0) break;
  }
  if (dim == 0) throw std::invalid_argument("cannot pool a bounding region from empty corpora");

  std::vector<double> lo(dim, std::numeric_limits<double>::infinity());
  std::vector<double> hi(dim, -std::numeric_limits<double>::infinity());
  for (const auto* c : corpora) {
    for (const auto& s : c->sets) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t k = 0; k < dim; ++k) {
          lo[k] = std::min(lo[k], s[i][k]);
          hi[k] = std::max(hi[k], s[i][k]);
        }
      }
    }
  }
  double diag2 = 0.0;
  for (std::size_t k = 0; k < dim; ++k) diag2 += (hi[k] - lo[k]) * (hi[k] - lo[k]);
  const double pad = 0.5 * std::max(std::sqrt(diag2), 1.0);
  for (std::size_t k = 0; k < dim; ++k) {
    lo[k] -= pad;
    hi[k] += pad;
  }
  return Region(std::move(lo), std::move(hi));
}

std::vector<MixtureRepr> encode_corpus(const CorpusStats& corpus, double epsilon,
                                       const Region& fallback, std::size_t* excluded) {
  std::vector<MixtureRepr> out;
  std::size_t skipped = 0;
  for (const auto& s : corpus.sets) {
    if (s.size() == 0) {
      ++skipped;
      continue;
    }
    out.push_back(encode(s, epsilon, fallback));
  }
  if (excluded != nullptr) *excluded = skipped;
  return out;
}

std::vector<double> kernel_matrix(const std::vector<MixtureRepr>& reprs) {
  const std::size_t n = reprs.size();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = std::sqrt(l2_inner(reprs[i], reprs[i]));

  std::vector<double> k(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = l2_inner(reprs[i], reprs[j]) / (norms[i] * norms[j]);
      k[i * n + j] = v;
      k[j * n + i] = v;
    }
  }
  return k;
}

MmdResult d_mmd(const CorpusStats& gen, const CorpusStats& ref, double bandwidth_epsilon,
                MmdEstimator estimator) {
  if (gen.sets.empty() || ref.sets.empty()) {
    throw std::invalid_argument("d_mmd needs nonempty corpora");
  }
  const Region fallback = pooled_bounding_region({&gen, &ref});

  MmdResult result;
  const auto fg = encode_corpus(gen, bandwidth_epsilon, fallback, &result.excluded_gen);
  const auto fr = encode_corpus(ref, bandwidth_epsilon, fallback, &result.excluded_ref);
  const std::size_t m = fg.size(), n = fr.size();
  if (m == 0 || n == 0) {
    throw std::invalid_argument("d_mmd: a corpus has no nonempty sets");
  }
  if (estimator == MmdEstimator::unbiased && (m < 2 || n < 2)) {
    throw std::invalid_argument("unbiased d_mmd needs at least two nonempty sets per corpus");
  }

  std::vector<MixtureRepr> pooled;
  pooled.reserve(m + n);
  for (const auto& r : fg) pooled.push_back(r);
  for (const auto& r : fr) pooled.push_back(r);
  const auto gram = kernel_matrix(pooled);
  const std::size_t stride = m + n;
  auto at = [&gram, stride](std::size_t i, std::size_t j) { return gram[i * stride + j]; };

  double within_gen = 0.0, within_ref = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (estimator == MmdEstimator::unbiased && i == j) continue;
      within_gen += at(i, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (estimator == MmdEstimator::unbiased && i == j) continue;
      within_ref += at(m + i, m + j);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) cross += at(i, m + j);
  }

  if (estimator == MmdEstimator::unbiased) {
    result.value = within_gen / double(m * (m - 1)) + within_ref / double(n * (n - 1)) -
                   2.0 * cross / double(m * n);
  } else {
    result.value = within_gen / double(m * m) + within_ref / double(n * n) -
                   2.0 * cross / double(m * n);
  }
  return result;
}

double chamfer(const PointSet& a, const PointSet& b) {
  if (a.size() == 0 || b.size() == 0) {
    throw std::invalid_argument("chamfer needs nonempty point sets");
  }
  if (a.dim() != b.dim()) throw std::invalid_argument("chamfer dimension mismatch");

  auto directed_mean = [](const PointSet& from, const PointSet& to) {
    double acc = 0.0;
    for (std::size_t i = 0; i < from.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < to.size(); ++j) {
        best = std::min(best, squared_distance(from[i], to[j]));
      }
      acc += std::sqrt(best);
    }
    return acc / double(from.size());
  };
  return 0.5 * (directed_mean(a, b) + directed_mean(b, a));
}

}  // namespace setflow
