#include "setflow/representation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace setflow {

namespace {

constexpr double kLogDensityFloor = -690.77552789821368;  // ln(1e-300)

// Per-query scratch for the stable mixture kernels: with m = max_i l_i of the
// component log-terms l_i, carries sum_i exp(l_i - m) and the shifted gradient
// sum. Everything downstream (density, log-density, both gradients) reads off
// these without ever forming an underflowing intermediate.
struct MixtureAccum {
  double max_log = -std::numeric_limits<double>::infinity();
  double sum = 0.0;                  // sum_i exp(l_i - max_log)
  std::vector<double> weighted_dir;  // sum_i exp(l_i - max_log) (x_i - y) / sigma_i^2
};

MixtureAccum accumulate(const MixtureRepr& repr, std::span<const double> y) {
  if (y.size() != repr.dim()) {
    throw std::invalid_argument("mixture query dimension mismatch");
  }
  const std::size_t n = repr.size();
  const std::size_t d = repr.dim();
  const double log_n = std::log(double(n));

  std::vector<double> logs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s2 = repr.sigmas[i] * repr.sigmas[i];
    logs[i] = -log_n - 0.5 * double(d) * std::log(2.0 * std::numbers::pi * s2) -
              0.5 * squared_distance(y, repr.centers[i]) / s2;
  }

  MixtureAccum acc;
  acc.max_log = *std::max_element(logs.begin(), logs.end());
  acc.weighted_dir.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = std::exp(logs[i] - acc.max_log);
    acc.sum += w;
    const double inv_s2 = 1.0 / (repr.sigmas[i] * repr.sigmas[i]);
    const auto xi = repr.centers[i];
    for (std::size_t k = 0; k < d; ++k) {
      acc.weighted_dir[k] += w * (xi[k] - y[k]) * inv_s2;
    }
  }
  return acc;
}

double gaussian_log_density(double r2, double s2, std::size_t d) {
  return -0.5 * double(d) * std::log(2.0 * std::numbers::pi * s2) - 0.5 * r2 / s2;
}

}  // namespace

double MixtureRepr::sigma_min() const {
  return *std::min_element(sigmas.begin(), sigmas.end());
}

double MixtureRepr::sigma_max() const {
  return *std::max_element(sigmas.begin(), sigmas.end());
}

void MixtureRepr::validate() const {
  if (centers.size() == 0) throw std::invalid_argument("mixture needs at least one center");
  if (sigmas.size() != centers.size()) {
    throw std::invalid_argument("mixture needs one bandwidth per center");
  }
  for (double s : sigmas) {
    if (!std::isfinite(s) || s <= 0.0) {
      throw std::invalid_argument("mixture bandwidths must be finite and > 0");
    }
  }
  if (!std::isfinite(epsilon) || epsilon <= 0.0) {
    throw std::invalid_argument("mixture epsilon must be finite and > 0");
  }
}

MixtureRepr encode(const PointSet& set, double epsilon, const std::optional<Region>& region) {
  if (set.size() == 0) {
    throw std::invalid_argument("cannot encode an empty point set");
  }
  if (!std::isfinite(epsilon) || epsilon <= 0.0) {
    throw std::invalid_argument("encode epsilon must be finite and > 0");
  }

  MixtureRepr repr;
  repr.centers = set;
  repr.epsilon = epsilon;
  repr.sigmas.resize(set.size());

  if (set.size() == 1) {
    if (!region) {
      throw std::invalid_argument("encoding a single point needs a region for the fallback bandwidth");
    }
    repr.sigmas[0] = epsilon * std::log1p(region->diameter());
    return repr;
  }

  for (std::size_t i = 0; i < set.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < set.size(); ++j) {
      if (j == i) continue;
      best = std::min(best, squared_distance(set[i], set[j]));
    }
    repr.sigmas[i] = epsilon * std::log1p(std::sqrt(best));
    if (repr.sigmas[i] <= 0.0) {
      throw std::invalid_argument("coincident centers produce a zero bandwidth");
    }
  }
  return repr;
}

double eval(const MixtureRepr& repr, std::span<const double> y) {
  const auto acc = accumulate(repr, y);
  return std::exp(acc.max_log) * acc.sum;
}

double log_eval(const MixtureRepr& repr, std::span<const double> y) {
  const auto acc = accumulate(repr, y);
  return acc.max_log + std::log(acc.sum);
}

std::vector<double> grad(const MixtureRepr& repr, std::span<const double> y) {
  auto acc = accumulate(repr, y);
  const double scale = std::exp(acc.max_log);
  for (double& g : acc.weighted_dir) g *= scale;
  return std::move(acc.weighted_dir);
}

LogGrad log_grad(const MixtureRepr& repr, std::span<const double> y) {
  auto acc = accumulate(repr, y);
  LogGrad out;
  out.clamped = acc.max_log + std::log(acc.sum) < kLogDensityFloor;
  out.value = std::move(acc.weighted_dir);
  for (double& g : out.value) g /= acc.sum;
  return out;
}

double l2_inner(const MixtureRepr& a, const MixtureRepr& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("l2_inner requires mixtures of equal dimension");
  }
  const std::size_t d = a.dim();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double s2 = a.sigmas[i] * a.sigmas[i] + b.sigmas[j] * b.sigmas[j];
      acc += std::exp(gaussian_log_density(squared_distance(a.centers[i], b.centers[j]), s2, d));
    }
  }
  return acc / (double(a.size()) * double(b.size()));
}

std::size_t GridFunction::node_count() const {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

double GridFunction::cell_volume() const {
  double v = 1.0;
  for (std::size_t k = 0; k < dim(); ++k) v *= spacing(k);
  return v;
}

double GridFunction::integral() const {
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc * cell_volume();
}

void GridFunction::validate() const {
  region.validate();
  if (shape.size() != region.dim()) {
    throw std::invalid_argument("grid shape rank must match region dimension");
  }
  for (std::size_t s : shape) {
    if (s == 0) throw std::invalid_argument("grid shape entries must be positive");
  }
  if (values.size() != node_count()) {
    throw std::invalid_argument("grid value count must equal the product of the shape");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("grid values must be finite");
  }
}

GridFunction rasterize(const MixtureRepr& repr, const Region& region,
                       const std::vector<std::size_t>& shape) {
  repr.validate();
  region.validate();
  if (region.dim() != repr.dim() || shape.size() != repr.dim()) {
    throw std::invalid_argument("rasterize dimension mismatch");
  }
  for (std::size_t s : shape) {
    if (s < 32) throw std::invalid_argument("rasterize needs at least 32 cells per axis");
  }
  const double pad = 4.0 * repr.sigma_max();
  for (std::size_t i = 0; i < repr.size(); ++i) {
    for (std::size_t k = 0; k < repr.dim(); ++k) {
      if (repr.centers[i][k] - pad < region.lower[k] ||
          repr.centers[i][k] + pad > region.upper[k]) {
        throw std::invalid_argument(
            "rasterize region must contain every center padded by 4 sigma_max");
      }
    }
  }

  GridFunction gf;
  gf.region = region;
  gf.shape = shape;
  gf.values.resize(gf.node_count());

  const std::size_t d = shape.size();
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> x(d);
  for (std::size_t flat = 0; flat < gf.values.size(); ++flat) {
    for (std::size_t k = 0; k < d; ++k) x[k] = gf.node_coord(k, idx[k]);
    gf.values[flat] = eval(repr, x);
    std::size_t k = d;
    while (k-- > 0) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  return gf;
}

namespace {

constexpr std::size_t kMaxGridDim = 4;

struct InterpCell {
  std::size_t base[kMaxGridDim];  // lower cell-center index per axis
  double frac[kMaxGridDim];       // interpolation weight toward base+1
  std::size_t stride[kMaxGridDim];
};

InterpCell locate(const GridFunction& gf, std::span<const double> y) {
  const std::size_t d = gf.dim();
  if (y.size() != d) throw std::invalid_argument("grid query dimension mismatch");
  if (d == 0 || d > kMaxGridDim) throw std::invalid_argument("unsupported grid dimension");

  InterpCell c{};
  std::size_t stride = 1;
  for (std::size_t k = d; k-- > 0;) {
    c.stride[k] = stride;
    stride *= gf.shape[k];
  }
  for (std::size_t k = 0; k < d; ++k) {
    if (y[k] < gf.region.lower[k] || y[k] > gf.region.upper[k]) {
      throw std::invalid_argument("grid query outside the region");
    }
    const double u = (y[k] - gf.region.lower[k]) / gf.spacing(k) - 0.5;
    if (gf.shape[k] == 1) {
      c.base[k] = 0;
      c.frac[k] = 0.0;
      continue;
    }
    double lo = std::floor(u);
    lo = std::clamp(lo, 0.0, double(gf.shape[k] - 2));
    c.base[k] = std::size_t(lo);
    c.frac[k] = std::clamp(u - lo, 0.0, 1.0);
  }
  return c;
}

// Central difference of the node values along `axis` at a node index vector,
// one-sided at the edges.
double node_diff(const GridFunction& gf, const InterpCell& c,
                 const std::size_t* node, std::size_t axis) {
  std::size_t flat = 0;
  const std::size_t d = gf.dim();
  for (std::size_t k = 0; k < d; ++k) flat += node[k] * c.stride[k];

  const std::size_t n = gf.shape[axis];
  const std::size_t s = c.stride[axis];
  const double dx = gf.spacing(axis);
  const std::size_t i = node[axis];
  if (n == 1) return 0.0;
  if (i == 0) return (gf.values[flat + s] - gf.values[flat]) / dx;
  if (i == n - 1) return (gf.values[flat] - gf.values[flat - s]) / dx;
  return (gf.values[flat + s] - gf.values[flat - s]) / (2.0 * dx);
}

}  // namespace

double interp_eval(const GridFunction& gf, std::span<const double> y) {
  const auto c = locate(gf, y);
  const std::size_t d = gf.dim();
  double acc = 0.0;
  for (std::size_t corner = 0; corner < (std::size_t(1) << d); ++corner) {
    double w = 1.0;
    std::size_t flat = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const bool hi = corner & (std::size_t(1) << k);
      w *= hi ? c.frac[k] : 1.0 - c.frac[k];
      flat += (c.base[k] + (hi && gf.shape[k] > 1 ? 1 : 0)) * c.stride[k];
    }
    acc += w * gf.values[flat];
  }
  return acc;
}

std::vector<double> interp_grad(const GridFunction& gf, std::span<const double> y) {
  const auto c = locate(gf, y);
  const std::size_t d = gf.dim();
  std::vector<double> out(d, 0.0);
  std::size_t node[kMaxGridDim];
  for (std::size_t corner = 0; corner < (std::size_t(1) << d); ++corner) {
    double w = 1.0;
    for (std::size_t k = 0; k < d; ++k) {
      const bool hi = corner & (std::size_t(1) << k);
      w *= hi ? c.frac[k] : 1.0 - c.frac[k];
      node[k] = c.base[k] + (hi && gf.shape[k] > 1 ? 1 : 0);
    }
    for (std::size_t a = 0; a < d; ++a) {
      out[a] += w * node_diff(gf, c, node, a);
    }
  }
  return out;
}

W2CheckResult w2_bound_check(const PointSet& set, const std::vector<double>& epsilons,
                             std::uint64_t seed, std::size_t samples) {
  if (set.size() < 2) {
    throw std::invalid_argument("w2_bound_check needs at least two points");
  }
  if (epsilons.empty() || samples == 0) {
    throw std::invalid_argument("w2_bound_check needs epsilons and a positive sample count");
  }

  const std::size_t d = set.dim();
  const double rho = set_diameter(set);

  W2CheckResult result;
  for (std::size_t e = 0; e < epsilons.size(); ++e) {
    const double eps = epsilons[e];
    const MixtureRepr repr = encode(set, eps);

    std::mt19937_64 rng(mix_seed(seed, e));
    std::uniform_int_distribution<std::size_t> pick(0, set.size() - 1);
    std::normal_distribution<double> normal(0.0, 1.0);

    // Cost of the diagonal transport plan: every Gaussian component sends its
    // mass to its own center, so a sampled displacement is sigma_i * z.
    double cost = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      const double sigma = repr.sigmas[pick(rng)];
      for (std::size_t k = 0; k < d; ++k) {
        const double dz = sigma * normal(rng);
        cost += dz * dz;
      }
    }
    W2CheckEntry entry;
    entry.epsilon = eps;
    entry.bound = eps * std::sqrt(double(d)) * std::log1p(rho);
    entry.empirical = std::sqrt(cost / double(samples));
    result.entries.push_back(entry);

    if (entry.empirical > entry.bound * 1.05) {
      throw numeric_error("w2_bound_check: sampled transport cost exceeds the bound");
    }
  }

  if (result.entries.size() >= 2) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double n = double(result.entries.size());
    for (const auto& entry : result.entries) {
      const double x = std::log(entry.epsilon);
      const double yv = std::log(entry.empirical);
      sx += x;
      sy += yv;
      sxx += x * x;
      sxy += x * yv;
    }
    result.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if (result.slope < 0.9 || result.slope > 1.1) {
      throw numeric_error("w2_bound_check: convergence slope outside [0.9, 1.1]");
    }
  }
  return result;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

constexpr char kGridBinaryMagic[4] = {'S', 'F', 'G', 'B'};

void write_grid_text(std::ostream& out, const GridFunction& gf) {
  out << "setflow-grid 1\n";
  out << "dim " << gf.dim() << "\n";
  char buf[32];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "lower";
  for (double v : gf.region.lower) out << ' ' << num(v);
  out << "\nupper";
  for (double v : gf.region.upper) out << ' ' << num(v);
  out << "\nshape";
  for (std::size_t s : gf.shape) out << ' ' << s;
  out << "\nvalues\n";
  for (double v : gf.values) out << num(v) << '\n';
}

GridFunction read_grid_text(std::istream& in, const std::string& path) {
  auto fail = [&path](const std::string& why) -> io_error {
    return io_error("grid file " + path + ": " + why);
  };
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "setflow-grid" || version != 1) {
    throw fail("missing setflow-grid header");
  }
  std::size_t d = 0;
  if (!(in >> word >> d) || word != "dim" || d == 0) throw fail("bad dim record");

  GridFunction gf;
  gf.region.lower.resize(d);
  gf.region.upper.resize(d);
  gf.shape.resize(d);
  if (!(in >> word) || word != "lower") throw fail("bad lower record");
  for (double& v : gf.region.lower) {
    if (!(in >> v)) throw fail("bad lower record");
  }
  if (!(in >> word) || word != "upper") throw fail("bad upper record");
  for (double& v : gf.region.upper) {
    if (!(in >> v)) throw fail("bad upper record");
  }
  if (!(in >> word) || word != "shape") throw fail("bad shape record");
  for (std::size_t& s : gf.shape) {
    if (!(in >> s)) throw fail("bad shape record");
  }
  if (!(in >> word) || word != "values") throw fail("missing values record");
  gf.values.resize(gf.node_count());
  for (double& v : gf.values) {
    if (!(in >> v)) throw fail("truncated values");
  }
  try {
    gf.validate();
  } catch (const std::invalid_argument& e) {
    throw fail(e.what());
  }
  return gf;
}

void write_grid_binary(std::ostream& out, const GridFunction& gf) {
  out.write(kGridBinaryMagic, 4);
  const std::uint32_t version = 1;
  const std::uint32_t d = std::uint32_t(gf.dim());
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  out.write(reinterpret_cast<const char*>(gf.region.lower.data()), d * sizeof(double));
  out.write(reinterpret_cast<const char*>(gf.region.upper.data()), d * sizeof(double));
  for (std::size_t s : gf.shape) {
    const std::uint64_t v = s;
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  out.write(reinterpret_cast<const char*>(gf.values.data()),
            std::streamsize(gf.values.size() * sizeof(double)));
}

GridFunction read_grid_binary(std::istream& in, const std::string& path) {
  auto fail = [&path](const std::string& why) -> io_error {
    return io_error("grid file " + path + ": " + why);
  };
  char magic[4];
  std::uint32_t version = 0, d = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, kGridBinaryMagic, 4) != 0) {
    throw fail("missing binary magic");
  }
  if (!in.read(reinterpret_cast<char*>(&version), sizeof version) || version != 1) {
    throw fail("unsupported version");
  }
  if (!in.read(reinterpret_cast<char*>(&d), sizeof d) || d == 0 || d > kMaxGridDim) {
    throw fail("bad dimension");
  }
  GridFunction gf;
  gf.region.lower.resize(d);
  gf.region.upper.resize(d);
  gf.shape.resize(d);
  if (!in.read(reinterpret_cast<char*>(gf.region.lower.data()), d * sizeof(double)) ||
      !in.read(reinterpret_cast<char*>(gf.region.upper.data()), d * sizeof(double))) {
    throw fail("truncated region bounds");
  }
  for (std::size_t k = 0; k < d; ++k) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw fail("truncated shape");
    gf.shape[k] = std::size_t(v);
  }
  gf.values.resize(gf.node_count());
  if (!in.read(reinterpret_cast<char*>(gf.values.data()),
               std::streamsize(gf.values.size() * sizeof(double)))) {
    throw fail("truncated values");
  }
  try {
    gf.validate();
  } catch (const std::invalid_argument& e) {
    throw fail(e.what());
  }
  return gf;
}

}  // namespace

void write_grid_function(const std::string& path, const GridFunction& gf) {
  gf.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open grid file for writing: " + path);
  if (ends_with(path, ".gft")) {
    write_grid_text(out, gf);
  } else if (ends_with(path, ".gfb")) {
    write_grid_binary(out, gf);
  } else {
    throw io_error("grid file needs a .gft (text) or .gfb (binary) extension: " + path);
  }
  if (!out) throw io_error("failed writing grid file: " + path);
}

GridFunction read_grid_function(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open grid file: " + path);
  if (ends_with(path, ".gft")) return read_grid_text(in, path);
  if (ends_with(path, ".gfb")) return read_grid_binary(in, path);
  throw io_error("grid file needs a .gft (text) or .gfb (binary) extension: " + path);
}

}  // namespace setflow
