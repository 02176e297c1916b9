#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace setflow {

// Raised when a computation leaves the numeric domain (divergence, failed
// factorization, violated convergence check).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised on malformed or unreadable files.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Axis-aligned bounded box; hosts point sets, mixtures, grids and swarms.
struct Region {
  std::vector<double> lower;
  std::vector<double> upper;

  Region() = default;
  Region(std::vector<double> lo, std::vector<double> up);

  std::size_t dim() const { return lower.size(); }
  double volume() const;
  double extent(std::size_t axis) const { return upper[axis] - lower[axis]; }
  // Box diagonal length.
  double diameter() const;
  bool contains(std::span<const double> x) const;
  void validate() const;
};

// Finite unordered collection of D-dimensional points, stored row-major.
// Order of points carries no meaning; consumers must be permutation-invariant.
class PointSet {
 public:
  PointSet() = default;
  explicit PointSet(std::size_t dim) : dim_(dim) {}
  PointSet(std::size_t dim, std::vector<double> flat);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
  bool empty() const { return data_.empty(); }

  std::span<const double> operator[](std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  void push_back(std::span<const double> p);
  const std::vector<double>& flat() const { return data_; }

  bool operator==(const PointSet& other) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

double squared_distance(std::span<const double> a, std::span<const double> b);
double distance(std::span<const double> a, std::span<const double> b);

// Max pairwise distance of a set (0 for fewer than two points).
double set_diameter(const PointSet& points);

// splitmix64-based mixing; derives independent substream seeds from a master
// seed and one or two counters. Used everywhere replicates need their own
// deterministic stream.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace setflow
