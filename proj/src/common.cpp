#include "setflow/common.hpp"

#include <algorithm>

namespace setflow {

Region::Region(std::vector<double> lo, std::vector<double> up)
    : lower(std::move(lo)), upper(std::move(up)) {
  validate();
}

void Region::validate() const {
  if (lower.empty() || lower.size() != upper.size()) {
    throw std::invalid_argument("region bounds must be non-empty and of equal dimension");
  }
  for (std::size_t k = 0; k < lower.size(); ++k) {
    if (!std::isfinite(lower[k]) || !std::isfinite(upper[k]) || upper[k] <= lower[k]) {
      throw std::invalid_argument("region requires finite bounds with upper > lower");
    }
  }
}

double Region::volume() const {
  double v = 1.0;
  for (std::size_t k = 0; k < dim(); ++k) v *= extent(k);
  return v;
}

double Region::diameter() const {
  double s = 0.0;
  for (std::size_t k = 0; k < dim(); ++k) s += extent(k) * extent(k);
  return std::sqrt(s);
}

bool Region::contains(std::span<const double> x) const {
  if (x.size() != dim()) return false;
  for (std::size_t k = 0; k < dim(); ++k) {
    if (x[k] < lower[k] || x[k] > upper[k]) return false;
  }
  return true;
}

PointSet::PointSet(std::size_t dim, std::vector<double> flat)
    : dim_(dim), data_(std::move(flat)) {
  if (dim_ == 0) throw std::invalid_argument("point set dimension must be positive");
  if (data_.size() % dim_ != 0) {
    throw std::invalid_argument("flat point data length must be a multiple of dim");
  }
}

void PointSet::push_back(std::span<const double> p) {
  if (dim_ == 0) dim_ = p.size();
  if (p.size() != dim_) throw std::invalid_argument("point dimension mismatch");
  data_.insert(data_.end(), p.begin(), p.end());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

double distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

double set_diameter(const PointSet& points) {
  double best = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      best = std::max(best, squared_distance(points[i], points[j]));
    }
  }
  return std::sqrt(best);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

}  // namespace setflow
