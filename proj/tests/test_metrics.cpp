#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "setflow/metrics.hpp"
#include "setflow/point_process.hpp"
#include "support/stats.hpp"

using namespace setflow;

namespace {

CorpusStats corpus_of_sizes(const std::vector<std::size_t>& sizes) {
  std::vector<PointSet> sets;
  for (std::size_t n : sizes) {
    PointSet s(1);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = double(i);
      s.push_back({&x, 1});
    }
    sets.push_back(std::move(s));
  }
  return CorpusStats::from_sets(std::move(sets));
}

// Brute-force W1 oracle: integral of |F - G| over the value axis.
double w1_cdf_area(std::vector<double> a, std::vector<double> b) {
  std::vector<double> grid;
  for (double v : a) grid.push_back(v);
  for (double v : b) grid.push_back(v);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  auto cdf = [](const std::vector<double>& s, double x) {
    double n = 0.0;
    for (double v : s) {
      if (v <= x) n += 1.0;
    }
    return n / double(s.size());
  };
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    acc += std::abs(cdf(a, grid[i]) - cdf(b, grid[i])) * (grid[i + 1] - grid[i]);
  }
  return acc;
}

std::vector<PointSet> random_corpus(std::size_t count, std::mt19937_64& rng,
                                    std::size_t min_size = 1, std::size_t max_size = 6) {
  std::uniform_int_distribution<std::size_t> size_pick(min_size, max_size);
  std::uniform_real_distribution<double> coord(0.0, 1.0);
  std::vector<PointSet> sets;
  for (std::size_t c = 0; c < count; ++c) {
    PointSet s(2);
    const std::size_t n = size_pick(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double p[2] = {coord(rng), coord(rng)};
      s.push_back({p, 2});
    }
    sets.push_back(std::move(s));
  }
  return sets;
}

// Unbiased squared-MMD recomputed from a Gram matrix and a label assignment;
// the permutation-null oracle for d_mmd.
double mmd_from_gram(const std::vector<double>& gram, const std::vector<std::size_t>& idx,
                     std::size_t m, std::size_t n) {
  const std::size_t total = m + n;
  auto at = [&](std::size_t i, std::size_t j) { return gram[idx[i] * total + idx[j]]; };
  double wg = 0.0, wr = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j) wg += at(i, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) wr += at(m + i, m + j);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) cross += at(i, m + j);
  }
  return wg / double(m * (m - 1)) + wr / double(n * (n - 1)) - 2.0 * cross / double(m * n);
}

}  // namespace

TEST_CASE("s_wstein on hand-checkable size laws") {
  CHECK(s_wstein(corpus_of_sizes({2, 2}), corpus_of_sizes({3, 3})) == doctest::Approx(1.0));
  CHECK(s_wstein(corpus_of_sizes({4, 1, 3}), corpus_of_sizes({4, 1, 3})) == doctest::Approx(0.0));
  CHECK(s_wstein(corpus_of_sizes({1, 3}), corpus_of_sizes({2, 2})) == doctest::Approx(1.0));
}

TEST_CASE("s_wstein equals the cdf-area oracle on random size samples") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> count(1, 12);
  std::uniform_int_distribution<std::size_t> size_pick(0, 9);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<std::size_t> sa(count(rng)), sb(count(rng));
    for (auto& v : sa) v = size_pick(rng);
    for (auto& v : sb) v = size_pick(rng);
    const double lib = s_wstein(corpus_of_sizes(sa), corpus_of_sizes(sb));
    const double oracle = w1_cdf_area(std::vector<double>(sa.begin(), sa.end()),
                                      std::vector<double>(sb.begin(), sb.end()));
    CHECK(lib == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("s_wstein is a metric on empirical size laws") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> count(2, 10);
  std::uniform_int_distribution<std::size_t> size_pick(0, 8);
  for (int rep = 0; rep < 25; ++rep) {
    std::vector<std::size_t> sa(count(rng)), sb(count(rng)), sc(count(rng));
    for (auto& v : sa) v = size_pick(rng);
    for (auto& v : sb) v = size_pick(rng);
    for (auto& v : sc) v = size_pick(rng);
    const auto a = corpus_of_sizes(sa), b = corpus_of_sizes(sb), c = corpus_of_sizes(sc);
    CHECK(s_wstein(a, b) == doctest::Approx(s_wstein(b, a)).epsilon(1e-12));
    CHECK(s_wstein(a, a) == doctest::Approx(0.0));
    CHECK(s_wstein(a, c) <= s_wstein(a, b) + s_wstein(b, c) + 1e-12);
  }
  CHECK_THROWS_AS((void)s_wstein(corpus_of_sizes({}), corpus_of_sizes({1})),
                  std::invalid_argument);
}

TEST_CASE("the set kernel is unit on the diagonal and the biased self-mmd vanishes") {
  std::mt19937_64 rng(7);
  const auto corpus = CorpusStats::from_sets(random_corpus(20, rng));
  const Region fallback = pooled_bounding_region({&corpus});
  const auto reprs = encode_corpus(corpus, 0.1, fallback);
  const auto gram = kernel_matrix(reprs);
  for (std::size_t i = 0; i < reprs.size(); ++i) {
    CHECK(gram[i * reprs.size() + i] == doctest::Approx(1.0).epsilon(1e-12));
  }
  const auto self = d_mmd(corpus, corpus, 0.1, MmdEstimator::biased);
  CHECK(std::abs(self.value) < 1e-12);
}

TEST_CASE("unbiased d_mmd straddles zero for same-law corpora") {
  std::mt19937_64 rng(11);
  bool saw_negative = false;
  for (int rep = 0; rep < 12 && !saw_negative; ++rep) {
    const auto a = CorpusStats::from_sets(random_corpus(12, rng));
    const auto b = CorpusStats::from_sets(random_corpus(12, rng));
    if (d_mmd(a, b, 0.1).value < 0.0) saw_negative = true;
  }
  CHECK(saw_negative);
}

TEST_CASE("d_mmd excludes empty sets with a count") {
  std::mt19937_64 rng(13);
  auto sets = random_corpus(10, rng);
  sets[3] = PointSet(2);
  sets[7] = PointSet(2);
  const auto gen = CorpusStats::from_sets(std::move(sets));
  const auto ref = CorpusStats::from_sets(random_corpus(10, rng));
  const auto result = d_mmd(gen, ref, 0.1);
  CHECK(result.excluded_gen == 2);
  CHECK(result.excluded_ref == 0);
  CHECK(std::isfinite(result.value));
}

TEST_CASE("d_mmd handles singleton sets through the fallback bandwidth") {
  std::vector<PointSet> a, b;
  a.emplace_back(2, std::vector<double>{0.2, 0.3});
  a.emplace_back(2, std::vector<double>{0.25, 0.31});
  b.emplace_back(2, std::vector<double>{0.8, 0.7, 0.6, 0.5});
  b.emplace_back(2, std::vector<double>{0.7, 0.72});
  const auto result = d_mmd(CorpusStats::from_sets(a), CorpusStats::from_sets(b), 0.1);
  CHECK(std::isfinite(result.value));
}

TEST_CASE("d_mmd is invariant to corpus order and within-set point order") {
  std::mt19937_64 rng(17);
  auto sets_a = random_corpus(8, rng, 2, 5);
  auto sets_b = random_corpus(8, rng, 2, 5);
  const double base =
      d_mmd(CorpusStats::from_sets(sets_a), CorpusStats::from_sets(sets_b), 0.1).value;

  std::shuffle(sets_a.begin(), sets_a.end(), rng);
  std::vector<PointSet> reversed;
  for (const auto& s : sets_b) {
    PointSet r(2);
    for (std::size_t i = s.size(); i-- > 0;) r.push_back(s[i]);
    reversed.push_back(std::move(r));
  }
  const double shuffled =
      d_mmd(CorpusStats::from_sets(sets_a), CorpusStats::from_sets(reversed), 0.1).value;
  CHECK(base == doctest::Approx(shuffled).epsilon(1e-12));
}

TEST_CASE("same-process corpora fall inside the permutation null band") {
  const IntensitySpec spec = IntensitySpec::demo_poisson();
  const Region region({-4.5, -4.5}, {4.5, 4.5});
  std::vector<PointSet> a, b;
  for (std::size_t i = 0; i < 200; ++i) {
    auto sa = sample_poisson(spec, region, mix_seed(101, i));
    auto sb = sample_poisson(spec, region, mix_seed(202, i));
    if (sa.size() > 0) a.push_back(std::move(sa));
    if (sb.size() > 0) b.push_back(std::move(sb));
  }
  const auto ca = CorpusStats::from_sets(std::move(a));
  const auto cb = CorpusStats::from_sets(std::move(b));
  const double observed = d_mmd(ca, cb, 0.25).value;

  const Region fallback = pooled_bounding_region({&ca, &cb});
  auto reprs = encode_corpus(ca, 0.25, fallback);
  const std::size_t m = reprs.size();
  for (auto& r : encode_corpus(cb, 0.25, fallback)) reprs.push_back(std::move(r));
  const std::size_t n = reprs.size() - m;
  const auto gram = kernel_matrix(reprs);

  std::vector<std::size_t> idx(m + n);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<double> null_draws;
  std::mt19937_64 rng(23);
  for (int p = 0; p < 500; ++p) {
    std::shuffle(idx.begin(), idx.end(), rng);
    null_draws.push_back(mmd_from_gram(gram, idx, m, n));
  }
  std::sort(null_draws.begin(), null_draws.end());
  const double lo = null_draws[std::size_t(0.025 * 500)];
  const double hi = null_draws[std::size_t(0.975 * 500)];
  CHECK(observed >= lo);
  CHECK(observed <= hi);
}

TEST_CASE("the kernel gram matrix is numerically psd") {
  std::mt19937_64 rng(29);
  const auto corpus = CorpusStats::from_sets(random_corpus(30, rng));
  const auto reprs = encode_corpus(corpus, 0.15, pooled_bounding_region({&corpus}));
  const std::size_t n = reprs.size();
  const auto gram = kernel_matrix(reprs);
  Eigen::MatrixXd k(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) k(Eigen::Index(i), Eigen::Index(j)) = gram[i * n + j];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-8);
}

TEST_CASE("chamfer distance on hand-checkable sets") {
  PointSet a(1, {0.0});
  PointSet b(1, {1.0});
  CHECK(chamfer(a, a) == doctest::Approx(0.0));
  CHECK(chamfer(a, b) == doctest::Approx(1.0));

  // brute-force oracle: directed means (0 + 0)/2 and (0 + 0 + 0.1)/3, averaged
  PointSet c(1, {0.0, 10.0});
  PointSet d(1, {0.0, 10.0, 10.1});
  const double oracle = 0.5 * (0.0 + 0.1 / 3.0);
  CHECK(chamfer(c, d) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(chamfer(d, c) == doctest::Approx(oracle).epsilon(1e-12));

  CHECK_THROWS_AS((void)chamfer(PointSet(1), b), std::invalid_argument);
}
