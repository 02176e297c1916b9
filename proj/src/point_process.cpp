#include "setflow/point_process.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace setflow {

void IntensitySpec::validate() const {
  if (!std::isfinite(mu) || mu < 0.0) {
    throw std::invalid_argument("intensity mu must be finite and >= 0");
  }
  if (variant == ProcessVariant::poisson_sqexp_mixture) {
    if (weights.empty() || weights.size() != centers.size()) {
      throw std::invalid_argument("poisson spec needs one weight per mixture center");
    }
    double sum = 0.0;
    for (double w : weights) {
      if (!std::isfinite(w) || w < 0.0) {
        throw std::invalid_argument("poisson mixture weights must be finite and >= 0");
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw std::invalid_argument("poisson mixture weights must sum to 1");
    }
  } else {
    if (!std::isfinite(alpha) || alpha < 0.0) {
      throw std::invalid_argument("hawkes alpha must be finite and >= 0");
    }
    if (!std::isfinite(beta) || beta <= 0.0) {
      throw std::invalid_argument("hawkes beta must be finite and > 0");
    }
    if (alpha >= beta) {
      throw std::invalid_argument("hawkes requires alpha < beta (subcritical)");
    }
  }
}

IntensitySpec IntensitySpec::demo_poisson() {
  IntensitySpec spec;
  spec.variant = ProcessVariant::poisson_sqexp_mixture;
  spec.mu = 1.0;
  spec.weights = {0.3, 0.3, 0.4};
  spec.centers = PointSet(2, {2.51, 3.12, -2.01, -1.12, 2.51, -2.31});
  return spec;
}

IntensitySpec IntensitySpec::demo_hawkes() {
  IntensitySpec spec;
  spec.variant = ProcessVariant::hawkes_exp;
  spec.mu = 0.5;
  spec.alpha = 0.5;
  spec.beta = 3.0;
  return spec;
}

double poisson_intensity(std::span<const double> x, const IntensitySpec& spec) {
  if (spec.variant != ProcessVariant::poisson_sqexp_mixture) {
    throw std::invalid_argument("poisson_intensity requires a poisson_sqexp_mixture spec");
  }
  if (x.size() != spec.centers.dim()) {
    throw std::invalid_argument("poisson_intensity point dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.centers.size(); ++i) {
    acc += spec.weights[i] * std::exp(-squared_distance(x, spec.centers[i]));
  }
  return spec.mu * acc;
}

namespace {

// Coarse grid scan for a dominating constant; the integrand is smooth so a
// modest resolution with a safety factor is exact enough for thinning.
double scan_lambda_max(const std::function<double(std::span<const double>)>& intensity,
                       const Region& region, std::size_t per_axis) {
  const std::size_t d = region.dim();
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> x(d);
  double best = 0.0;
  while (true) {
    for (std::size_t k = 0; k < d; ++k) {
      x[k] = region.lower[k] + region.extent(k) * (per_axis == 1 ? 0.5 : double(idx[k]) / double(per_axis - 1));
    }
    const double v = intensity(x);
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("intensity must be finite and nonnegative on the region");
    }
    best = std::max(best, v);
    std::size_t k = 0;
    while (k < d && ++idx[k] == per_axis) idx[k++] = 0;
    if (k == d) break;
  }
  return best * 1.1;
}

}  // namespace

PointSet sample_poisson(const std::function<double(std::span<const double>)>& intensity,
                        double lambda_max, const Region& region, std::uint64_t seed) {
  region.validate();
  if (!std::isfinite(lambda_max) || lambda_max < 0.0) {
    throw std::invalid_argument("lambda_max must be finite and >= 0");
  }
  const std::size_t d = region.dim();
  PointSet out(d);
  if (lambda_max == 0.0) return out;

  std::mt19937_64 rng(seed);
  std::poisson_distribution<long> count_law(lambda_max * region.volume());
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const long candidates = count_law(rng);
  std::vector<double> x(d);
  for (long c = 0; c < candidates; ++c) {
    for (std::size_t k = 0; k < d; ++k) {
      x[k] = region.lower[k] + region.extent(k) * unit(rng);
    }
    const double lam = intensity(x);
    if (!std::isfinite(lam) || lam < 0.0) {
      throw std::invalid_argument("intensity must be finite and nonnegative on the region");
    }
    if (unit(rng) * lambda_max <= lam) out.push_back(x);
  }
  return out;
}

PointSet sample_poisson(const IntensitySpec& spec, const Region& region, std::uint64_t seed) {
  spec.validate();
  if (spec.variant != ProcessVariant::poisson_sqexp_mixture) {
    throw std::invalid_argument("sample_poisson requires a poisson_sqexp_mixture spec");
  }
  if (region.dim() != spec.centers.dim()) {
    throw std::invalid_argument("sample_poisson region dimension mismatch");
  }
  auto intensity = [&spec](std::span<const double> x) { return poisson_intensity(x, spec); };
  const double lambda_max = scan_lambda_max(intensity, region, 64);
  return sample_poisson(intensity, lambda_max, region, seed);
}

PointSet sample_hawkes(const IntensitySpec& spec, double horizon, std::uint64_t seed) {
  spec.validate();
  if (spec.variant != ProcessVariant::hawkes_exp) {
    throw std::invalid_argument("sample_hawkes requires a hawkes_exp spec");
  }
  if (!std::isfinite(horizon) || horizon <= 0.0) {
    throw std::invalid_argument("hawkes horizon must be finite and > 0");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  PointSet out(1);
  double t = 0.0;
  double excitation = 0.0;  // sum of alpha * exp(-beta (t - s_i)) at current t
  while (true) {
    const double lambda_bar = spec.mu + excitation;
    if (lambda_bar <= 0.0) break;
    const double dt = -std::log(1.0 - unit(rng)) / lambda_bar;
    t += dt;
    if (t > horizon) break;
    excitation *= std::exp(-spec.beta * dt);
    if (unit(rng) * lambda_bar <= spec.mu + excitation) {
      const double ev = t;
      out.push_back({&ev, 1});
      excitation += spec.alpha;
    }
  }
  return out;
}

namespace {

nlohmann::json set_to_json(const PointSet& s) {
  nlohmann::json rec;
  rec["dim"] = s.dim();
  auto points = nlohmann::json::array();
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto p = nlohmann::json::array();
    for (double v : s[i]) p.push_back(v);
    points.push_back(std::move(p));
  }
  rec["points"] = std::move(points);
  return rec;
}

PointSet set_from_json(const nlohmann::json& rec, std::size_t line_no) {
  if (!rec.contains("dim") || !rec.contains("points") || !rec["points"].is_array()) {
    throw io_error("corpus line " + std::to_string(line_no) + ": record needs dim and points");
  }
  const std::size_t d = rec["dim"].get<std::size_t>();
  if (d == 0) throw io_error("corpus line " + std::to_string(line_no) + ": dim must be positive");
  PointSet s(d);
  std::vector<double> p(d);
  for (const auto& jp : rec["points"]) {
    if (!jp.is_array() || jp.size() != d) {
      throw io_error("corpus line " + std::to_string(line_no) + ": point has wrong dimension");
    }
    for (std::size_t k = 0; k < d; ++k) p[k] = jp[k].get<double>();
    s.push_back(p);
  }
  return s;
}

}  // namespace

std::string corpus_to_jsonl(const std::vector<PointSet>& sets) {
  for (std::size_t i = 1; i < sets.size(); ++i) {
    if (sets[i].dim() != sets[0].dim()) {
      throw std::invalid_argument("corpus sets must share one dimension");
    }
  }
  nlohmann::json header;
  header["format"] = "setflow-corpus";
  header["version"] = 1;
  header["count"] = sets.size();
  if (!sets.empty()) header["dim"] = sets[0].dim();

  std::string out = header.dump();
  out.push_back('\n');
  for (const auto& s : sets) {
    out += set_to_json(s).dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<PointSet> corpus_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<PointSet> sets;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw io_error("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!saw_header) {
      if (!rec.contains("format") || rec["format"] != "setflow-corpus") {
        throw io_error("corpus line 1: missing setflow-corpus header record");
      }
      saw_header = true;
      continue;
    }
    sets.push_back(set_from_json(rec, line_no));
  }
  if (!saw_header) throw io_error("corpus line 1: missing setflow-corpus header record");
  return sets;
}

void write_corpus(const std::string& path, const std::vector<PointSet>& sets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open corpus file for writing: " + path);
  out << corpus_to_jsonl(sets);
  if (!out) throw io_error("failed writing corpus file: " + path);
}

std::vector<PointSet> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open corpus file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return corpus_from_jsonl(buf.str());
}

}  // namespace setflow
