#include "setflow/run_config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>

namespace setflow {

namespace {

using ConfigValue = std::variant<double, bool, std::string, std::vector<double>>;
using Section = std::map<std::string, ConfigValue>;
using ConfigTree = std::map<std::string, Section>;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void fail(std::size_t line, const std::string& why) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + why);
}

double parse_number(const std::string& tok, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || !std::isfinite(v)) {
    fail(line, "expected a number, got '" + tok + "'");
  }
  return v;
}

ConfigValue parse_value(const std::string& raw, std::size_t line) {
  if (raw.empty()) fail(line, "missing value");
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"') fail(line, "unterminated string");
    return raw.substr(1, raw.size() - 2);
  }
  if (raw == "true") return true;
  if (raw == "false") return false;
  if (raw.front() == '[') {
    if (raw.back() != ']') fail(line, "unterminated array");
    std::vector<double> items;
    std::string body = raw.substr(1, raw.size() - 2);
    std::stringstream ss(body);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (tok.empty()) fail(line, "empty array element");
      items.push_back(parse_number(tok, line));
    }
    return items;
  }
  return parse_number(raw, line);
}

ConfigTree parse_tree(const std::string& text) {
  ConfigTree tree;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    // strip comments outside quotes
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(line_no, "empty section name");
      tree[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail(line_no, "empty key");
    if (tree[section].count(key) != 0) fail(line_no, "duplicate key '" + key + "'");
    tree[section][key] = parse_value(trim(line.substr(eq + 1)), line_no);
  }
  return tree;
}

// Typed accessors; every consumed key is erased so leftovers can be reported.
struct SectionReader {
  std::string name;
  Section* section;

  template <class T>
  void take(const std::string& key, T& out) {
    if (section == nullptr) return;
    auto it = section->find(key);
    if (it == section->end()) return;
    if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, bool> ||
                  std::is_same_v<T, std::vector<double>>) {
      if (auto* v = std::get_if<T>(&it->second)) {
        out = *v;
      } else {
        throw std::invalid_argument("config [" + name + "] " + key + ": wrong value type");
      }
    } else {
      if (auto* v = std::get_if<double>(&it->second)) {
        if constexpr (std::is_integral_v<T>) {
          if (*v < 0 || *v != std::floor(*v)) {
            throw std::invalid_argument("config [" + name + "] " + key +
                                        ": expected a nonnegative integer");
          }
          out = T(*v);
        } else {
          out = T(*v);
        }
      } else {
        throw std::invalid_argument("config [" + name + "] " + key + ": expected a number");
      }
    }
    section->erase(it);
  }

  void take_shape(const std::string& key, std::vector<std::size_t>& out) {
    std::vector<double> raw;
    take(key, raw);
    if (raw.empty()) return;
    out.clear();
    for (double v : raw) {
      if (v <= 0 || v != std::floor(v)) {
        throw std::invalid_argument("config [" + name + "] " + key +
                                    ": expected positive integers");
      }
      out.push_back(std::size_t(v));
    }
  }
};

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_array(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ", ";
    out += format_number(v[i]);
  }
  return out + "]";
}

std::string format_shape(const std::vector<std::size_t>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(v[i]);
  }
  return out + "]";
}

}  // namespace

void RunConfig::validate() const {
  if (config_version != 1) {
    throw std::invalid_argument("unsupported config_version (expected 1)");
  }
  process.validate();
  synth_region.validate();
  grid_region.validate();
  if (grid_shape.empty() || grid_shape.size() != grid_region.dim()) {
    throw std::invalid_argument("grid shape rank must match the grid region");
  }
  if (!std::isfinite(epsilon) || epsilon <= 0.0) {
    throw std::invalid_argument("representation epsilon must be finite and > 0");
  }
  if (!std::isfinite(horizon) || horizon <= 0.0) {
    throw std::invalid_argument("hawkes horizon must be finite and > 0");
  }
  noise.validate();
  arch.validate();
  train.validate();
  if (sample.format != "gfb" && sample.format != "gft") {
    throw std::invalid_argument("sample format must be 'gfb' or 'gft'");
  }
  if (sample.ode_steps == 0) throw std::invalid_argument("sample ode_steps must be >= 1");
}

RunConfig parse_run_config_text(const std::string& text) {
  ConfigTree tree = parse_tree(text);
  RunConfig cfg;

  auto reader = [&tree](const std::string& name) {
    auto it = tree.find(name);
    return SectionReader{name, it == tree.end() ? nullptr : &it->second};
  };

  {
    auto top = reader("");
    top.take("config_version", cfg.config_version);
  }
  {
    auto run = reader("run");
    run.take("seed", cfg.seed);
    run.take("out", cfg.out_dir);
  }
  {
    auto proc = reader("process");
    std::string variant;
    proc.take("variant", variant);
    if (variant == "hawkes") {
      cfg.process = IntensitySpec::demo_hawkes();
    } else if (variant == "poisson" || variant.empty()) {
      cfg.process = IntensitySpec::demo_poisson();
    } else {
      throw std::invalid_argument("config [process] variant must be 'poisson' or 'hawkes'");
    }
    proc.take("mu", cfg.process.mu);
    proc.take("alpha", cfg.process.alpha);
    proc.take("beta", cfg.process.beta);
    proc.take("horizon", cfg.horizon);
    std::vector<double> weights, centers, lo, hi;
    std::size_t dim = 0;
    proc.take("weights", weights);
    proc.take("centers", centers);
    proc.take("dim", dim);
    proc.take("region_lower", lo);
    proc.take("region_upper", hi);
    if (!weights.empty()) cfg.process.weights = weights;
    if (!centers.empty()) {
      if (dim == 0) dim = cfg.process.centers.dim();
      if (dim == 0 || centers.size() % dim != 0) {
        throw std::invalid_argument("config [process] centers length must be a multiple of dim");
      }
      cfg.process.centers = PointSet(dim, centers);
    }
    if (!lo.empty() || !hi.empty()) cfg.synth_region = Region(lo, hi);
  }
  {
    auto synth = reader("synth");
    synth.take("count", cfg.synth_count);
  }
  {
    auto repr = reader("representation");
    repr.take("epsilon", cfg.epsilon);
  }
  {
    auto grid = reader("grid");
    std::vector<double> lo, hi;
    grid.take("lower", lo);
    grid.take("upper", hi);
    if (!lo.empty() || !hi.empty()) cfg.grid_region = Region(lo, hi);
    grid.take_shape("shape", cfg.grid_shape);
  }
  {
    auto noise = reader("noise");
    noise.take("length_scale", cfg.noise.length_scale);
    noise.take("amplitude", cfg.noise.amplitude);
    noise.take("nugget", cfg.noise.nugget);
  }
  {
    auto model = reader("model");
    model.take("hidden_width", cfg.arch.hidden_width);
    model.take("time_features", cfg.arch.time_features);
  }
  cfg.arch.dim = cfg.grid_shape.size();
  {
    auto train = reader("train");
    train.take("zeta", cfg.train.zeta);
    train.take("batch", cfg.train.batch);
    train.take("steps", cfg.train.steps);
    train.take("learning_rate", cfg.train.learning_rate);
    train.take("lr_schedule", cfg.train.lr_schedule);
    train.take("threads", cfg.train.threads);
  }
  {
    auto decode = reader("decode");
    decode.take("particles", cfg.decode.particles);
    decode.take("langevin_steps", cfg.decode.langevin_steps);
    decode.take("grad_steps", cfg.decode.grad_steps);
    decode.take("alpha", cfg.decode.alpha);
    decode.take("beta", cfg.decode.beta);
    decode.take("merge_radius", cfg.decode.merge_radius);
    decode.take("min_group", cfg.decode.min_group);
    decode.take("expected_set_size", cfg.decode.expected_set_size);
    decode.take("trajectory_stride", cfg.decode.trajectory_stride);
    decode.take("sigma_min", cfg.decode_sigma_min);
  }
  {
    auto metrics = reader("metrics");
    metrics.take("bandwidth_epsilon", cfg.metrics_epsilon);
  }
  {
    auto sample = reader("sample");
    sample.take("count", cfg.sample.count);
    sample.take("ode_steps", cfg.sample.ode_steps);
    sample.take("format", cfg.sample.format);
  }

  for (const auto& [name, section] : tree) {
    if (!section.empty()) {
      throw std::invalid_argument("config [" + name + "]: unknown key '" +
                                  section.begin()->first + "'");
    }
  }

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config_text(buf.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "config_version = " << cfg.config_version << "\n\n";
  out << "[run]\n";
  out << "seed = " << cfg.seed << "\n";
  out << "out = \"" << cfg.out_dir << "\"\n\n";

  out << "[process]\n";
  const bool poisson = cfg.process.variant == ProcessVariant::poisson_sqexp_mixture;
  out << "variant = \"" << (poisson ? "poisson" : "hawkes") << "\"\n";
  out << "mu = " << format_number(cfg.process.mu) << "\n";
  if (poisson) {
    out << "dim = " << cfg.process.centers.dim() << "\n";
    out << "weights = " << format_array(cfg.process.weights) << "\n";
    out << "centers = " << format_array(cfg.process.centers.flat()) << "\n";
    out << "region_lower = " << format_array(cfg.synth_region.lower) << "\n";
    out << "region_upper = " << format_array(cfg.synth_region.upper) << "\n";
  } else {
    out << "alpha = " << format_number(cfg.process.alpha) << "\n";
    out << "beta = " << format_number(cfg.process.beta) << "\n";
    out << "horizon = " << format_number(cfg.horizon) << "\n";
  }
  out << "\n[synth]\n";
  out << "count = " << cfg.synth_count << "\n";

  out << "\n[representation]\n";
  out << "epsilon = " << format_number(cfg.epsilon) << "\n";

  out << "\n[grid]\n";
  out << "lower = " << format_array(cfg.grid_region.lower) << "\n";
  out << "upper = " << format_array(cfg.grid_region.upper) << "\n";
  out << "shape = " << format_shape(cfg.grid_shape) << "\n";

  out << "\n[noise]\n";
  out << "length_scale = " << format_number(cfg.noise.length_scale) << "\n";
  out << "amplitude = " << format_number(cfg.noise.amplitude) << "\n";
  out << "nugget = " << format_number(cfg.noise.nugget) << "\n";

  out << "\n[model]\n";
  out << "hidden_width = " << cfg.arch.hidden_width << "\n";
  out << "time_features = " << cfg.arch.time_features << "\n";

  out << "\n[train]\n";
  out << "zeta = " << format_number(cfg.train.zeta) << "\n";
  out << "batch = " << cfg.train.batch << "\n";
  out << "steps = " << cfg.train.steps << "\n";
  out << "learning_rate = " << format_number(cfg.train.learning_rate) << "\n";
  out << "lr_schedule = \"" << cfg.train.lr_schedule << "\"\n";
  out << "threads = " << cfg.train.threads << "\n";

  out << "\n[decode]\n";
  out << "particles = " << cfg.decode.particles << "\n";
  out << "langevin_steps = " << cfg.decode.langevin_steps << "\n";
  out << "grad_steps = " << cfg.decode.grad_steps << "\n";
  out << "alpha = " << format_number(cfg.decode.alpha) << "\n";
  out << "beta = " << format_number(cfg.decode.beta) << "\n";
  out << "merge_radius = " << format_number(cfg.decode.merge_radius) << "\n";
  out << "min_group = " << cfg.decode.min_group << "\n";
  out << "expected_set_size = " << format_number(cfg.decode.expected_set_size) << "\n";
  out << "trajectory_stride = " << cfg.decode.trajectory_stride << "\n";
  out << "sigma_min = " << format_number(cfg.decode_sigma_min) << "\n";

  out << "\n[metrics]\n";
  out << "bandwidth_epsilon = " << format_number(cfg.metrics_epsilon) << "\n";

  out << "\n[sample]\n";
  out << "count = " << cfg.sample.count << "\n";
  out << "ode_steps = " << cfg.sample.ode_steps << "\n";
  out << "format = \"" << cfg.sample.format << "\"\n";
  return out.str();
}

void write_run_config(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open config for writing: " + path);
  out << serialize_run_config(cfg);
  if (!out) throw io_error("failed writing config: " + path);
}

}  // namespace setflow
