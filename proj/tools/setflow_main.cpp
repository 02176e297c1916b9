#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "setflow/flow_core.hpp"
#include "setflow/inverse_transform.hpp"
#include "setflow/metrics.hpp"
#include "setflow/point_process.hpp"
#include "setflow/run_config.hpp"

namespace fs = std::filesystem;
using namespace setflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = load_run_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (!args.out.empty()) cfg.out_dir = args.out;
  return cfg;
}

void write_resolved_next_to(const fs::path& output, const RunConfig& cfg) {
  fs::path p = output;
  if (fs::is_directory(output) || !output.has_extension()) {
    p = output / "resolved.toml";
  } else {
    p.replace_extension(".resolved.toml");
  }
  write_run_config(p.string(), cfg);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create output directory " + dir.string() + ": " + ec.message());
}

double derived_sigma_min(const RunConfig& cfg) {
  return cfg.decode_sigma_min > 0.0 ? cfg.decode_sigma_min
                                    : cfg.epsilon * std::log(2.0);
}

// Bandwidth hints for a grid target: the configured bandwidth plus the grid
// peak as the curvature scale.
TargetFunction::BandwidthHints grid_hints(const RunConfig& cfg, const TargetFunction& target) {
  TargetFunction::BandwidthHints hints;
  hints.sigma_min = hints.sigma_max = derived_sigma_min(cfg);
  const double peak = std::max(target.grid_peak().value_or(0.0), 1e-12);
  hints.max_curvature = peak / (hints.sigma_min * hints.sigma_min);
  return hints;
}

std::vector<PointSet> synth_sets(const RunConfig& cfg) {
  std::vector<PointSet> sets;
  sets.reserve(cfg.synth_count);
  for (std::size_t i = 0; i < cfg.synth_count; ++i) {
    const std::uint64_t seed = mix_seed(cfg.seed, i);
    if (cfg.process.variant == ProcessVariant::poisson_sqexp_mixture) {
      sets.push_back(sample_poisson(cfg.process, cfg.synth_region, seed));
    } else {
      sets.push_back(sample_hawkes(cfg.process, cfg.horizon, seed));
    }
  }
  return sets;
}

int cmd_synth(const CommonArgs& args, const std::string& process_override,
              std::size_t count_override) {
  RunConfig cfg = resolve_config(args);
  if (process_override == "poisson") {
    cfg.process = IntensitySpec::demo_poisson();
  } else if (process_override == "hawkes") {
    cfg.process = IntensitySpec::demo_hawkes();
  } else if (!process_override.empty()) {
    throw std::invalid_argument("--process must be 'poisson' or 'hawkes'");
  }
  if (count_override > 0) cfg.synth_count = count_override;
  cfg.validate();

  fs::path out = args.out.empty() ? fs::path(cfg.out_dir) / "corpus.jsonl" : fs::path(args.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());

  write_corpus(out.string(), synth_sets(cfg));
  write_resolved_next_to(out, cfg);
  std::cout << "wrote " << cfg.synth_count << " sets to " << out.string() << "\n";
  return kExitOk;
}

// Encode + rasterize the corpus on the configured grid; empty sets cannot be
// represented and are skipped with a warning.
std::vector<GridFunction> corpus_to_grids(const RunConfig& cfg, const std::vector<PointSet>& sets) {
  std::vector<GridFunction> grids;
  std::size_t skipped = 0;
  for (const auto& s : sets) {
    if (s.size() == 0) {
      ++skipped;
      continue;
    }
    const MixtureRepr repr = encode(s, cfg.epsilon, cfg.synth_region);
    grids.push_back(rasterize(repr, cfg.grid_region, cfg.grid_shape));
  }
  if (skipped > 0) {
    std::cerr << "warning: skipped " << skipped << " empty sets (no mixture representation)\n";
  }
  if (grids.empty()) throw std::invalid_argument("corpus has no nonempty sets to train on");
  return grids;
}

void write_loss_csv(const fs::path& path, std::size_t first_step,
                    const std::vector<double>& trace, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw io_error("cannot open loss trace for writing: " + path.string());
  if (!append) out << "step,loss\n";
  char buf[32];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", trace[i]);
    out << first_step + i << ',' << buf << '\n';
  }
}

int cmd_train(const CommonArgs& args, const std::string& corpus_path,
              const std::string& resume_path, std::optional<std::size_t> steps_override) {
  RunConfig cfg = resolve_config(args);
  if (steps_override) cfg.train.steps = *steps_override;
  cfg.train.seed = cfg.seed;
  cfg.validate();

  const fs::path out_dir(cfg.out_dir);
  ensure_dir(out_dir);

  const auto sets = read_corpus(corpus_path);
  const auto grids = corpus_to_grids(cfg, sets);

  FieldModel model;
  OptimizerState resume_state;
  const OptimizerState* resume = nullptr;
  if (!resume_path.empty()) {
    Checkpoint ckpt = read_checkpoint(resume_path);
    if (ckpt.shape != cfg.grid_shape) {
      throw std::invalid_argument("resume checkpoint grid does not match the config");
    }
    model = FieldModel(ckpt.arch, std::move(ckpt.theta));
    resume_state = std::move(ckpt.optimizer);
    resume = &resume_state;
    cfg.arch = ckpt.arch;
    cfg.train.zeta = ckpt.zeta;
  } else {
    model = FieldModel::create(cfg.arch, mix_seed(cfg.seed, 0x6d6f64656c));
  }

  const std::size_t first_step = (resume ? resume_state.step : 0) + 1;
  const TrainResult result = train(model, grids, cfg.noise, cfg.train, resume);

  Checkpoint ckpt;
  ckpt.arch = cfg.arch;
  ckpt.region = cfg.grid_region;
  ckpt.shape = cfg.grid_shape;
  ckpt.zeta = cfg.train.zeta;
  ckpt.theta = model.parameters();
  ckpt.optimizer = result.optimizer;
  write_checkpoint((out_dir / "checkpoint.sfck").string(), ckpt);

  const fs::path loss_path = out_dir / "loss.csv";
  write_loss_csv(loss_path, first_step, result.loss_trace,
                 resume != nullptr && fs::exists(loss_path));
  write_resolved_next_to(out_dir, cfg);
  std::cout << "trained " << result.loss_trace.size() << " steps; final loss "
            << (result.loss_trace.empty() ? 0.0 : result.loss_trace.back()) << "\n";
  return kExitOk;
}

int cmd_sample(const CommonArgs& args, const std::string& checkpoint_path, std::size_t count) {
  RunConfig cfg = resolve_config(args);
  cfg.validate();
  if (count > 0) cfg.sample.count = count;

  const Checkpoint ckpt = read_checkpoint(checkpoint_path);
  const FieldModel model(ckpt.arch, ckpt.theta);

  const fs::path out_dir(cfg.out_dir);
  ensure_dir(out_dir);

  NoiseSampler sampler(cfg.noise, ckpt.region, ckpt.shape);
  char name[32];
  for (std::size_t i = 0; i < cfg.sample.count; ++i) {
    const GridFunction noise = sampler.sample(mix_seed(cfg.seed, i));
    const GridFunction gf = ode_sample(model, noise, cfg.sample.ode_steps);
    std::snprintf(name, sizeof name, "fn_%05zu.%s", i, cfg.sample.format.c_str());
    write_grid_function((out_dir / name).string(), gf);
  }
  write_resolved_next_to(out_dir, cfg);
  std::cout << "sampled " << cfg.sample.count << " functions into " << out_dir.string() << "\n";
  return kExitOk;
}

std::vector<fs::path> grid_files_in(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    if (ext == ".gfb" || ext == ".gft") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

nlohmann::json diagnostics_to_json(const DecodeDiagnostics& diag) {
  nlohmann::json j;
  j["resets"] = diag.resets;
  j["dropped"] = diag.dropped;
  j["group_sizes"] = diag.group_sizes;
  j["kept_groups"] = diag.kept_groups;
  j["all_filtered"] = diag.all_filtered;
  double mean = 0.0, worst = 0.0;
  for (double g : diag.final_grad_norms) {
    mean += g;
    worst = std::max(worst, g);
  }
  if (!diag.final_grad_norms.empty()) mean /= double(diag.final_grad_norms.size());
  j["final_grad_norm_mean"] = mean;
  j["final_grad_norm_max"] = worst;
  j["config"] = {{"particles", diag.config.particles},
                 {"langevin_steps", diag.config.langevin_steps},
                 {"grad_steps", diag.config.grad_steps},
                 {"alpha", diag.config.alpha},
                 {"beta", diag.config.beta},
                 {"merge_radius", diag.config.merge_radius},
                 {"min_group", diag.config.min_group},
                 {"seed", diag.config.seed}};
  return j;
}

int cmd_invert(const CommonArgs& args, const std::string& functions_dir,
               const std::string& corpus_path) {
  RunConfig cfg = resolve_config(args);
  cfg.validate();
  if (functions_dir.empty() == corpus_path.empty()) {
    throw std::invalid_argument("invert needs exactly one of --functions or --corpus");
  }

  const fs::path out_dir(cfg.out_dir);
  ensure_dir(out_dir);

  std::vector<TargetFunction> targets;
  double mean_size = 0.0;
  if (!corpus_path.empty()) {
    const auto sets = read_corpus(corpus_path);
    std::size_t nonempty = 0;
    for (const auto& s : sets) {
      if (s.size() == 0) continue;
      mean_size += double(s.size());
      ++nonempty;
      targets.push_back(TargetFunction::from_mixture(encode(s, cfg.epsilon, cfg.synth_region),
                                                     cfg.synth_region));
    }
    if (nonempty > 0) mean_size /= double(nonempty);
  } else {
    for (const auto& path : grid_files_in(functions_dir)) {
      targets.push_back(TargetFunction::from_grid(read_grid_function(path.string())));
    }
  }
  if (targets.empty()) throw std::invalid_argument("invert found no decode targets");

  DecodeConfig base = cfg.decode;
  if (base.expected_set_size <= 0.0) {
    base.expected_set_size = mean_size > 0.0 ? mean_size : 5.0;
  }

  std::vector<PointSet> decoded;
  nlohmann::json diagnostics = nlohmann::json::array();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    DecodeConfig dc = base;
    dc.seed = mix_seed(cfg.seed, i);
    if (!targets[i].mixture_hints()) {
      dc = dc.resolved(grid_hints(cfg, targets[i]));
    }
    const DecodeResult result = decode(targets[i], dc);
    decoded.push_back(result.points);
    auto j = diagnostics_to_json(result.diagnostics);
    j["target_index"] = i;
    diagnostics.push_back(std::move(j));
  }

  write_corpus((out_dir / "sets.jsonl").string(), decoded);
  {
    std::ofstream out(out_dir / "diagnostics.json");
    if (!out) throw io_error("cannot write diagnostics.json");
    out << diagnostics.dump(2) << "\n";
  }
  write_resolved_next_to(out_dir, cfg);
  std::cout << "decoded " << decoded.size() << " sets into " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& gen_path, const std::string& ref_path,
             const std::string& report_path) {
  RunConfig cfg = resolve_config(args);
  cfg.validate();

  const auto gen = CorpusStats::from_sets(read_corpus(gen_path));
  const auto ref = CorpusStats::from_sets(read_corpus(ref_path));
  const double eps = cfg.metrics_epsilon > 0.0 ? cfg.metrics_epsilon : cfg.epsilon;

  const double sw = s_wstein(gen, ref);
  const MmdResult mmd = d_mmd(gen, ref, eps);

  nlohmann::json report;
  report["s_wstein"] = sw;
  report["d_mmd"] = mmd.value;
  report["n_gen"] = gen.sets.size();
  report["n_ref"] = ref.sets.size();
  report["excluded_gen"] = mmd.excluded_gen;
  report["excluded_ref"] = mmd.excluded_ref;
  report["config"] = {{"bandwidth_epsilon", eps}, {"estimator", "unbiased"}};

  fs::path out = report_path.empty() ? fs::path(cfg.out_dir) / "report.json"
                                     : fs::path(report_path);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  std::ofstream file(out);
  if (!file) throw io_error("cannot write metric report: " + out.string());
  file << report.dump(2) << "\n";
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

void write_heatmap_csv(const fs::path& path, const GridFunction& gf) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write heatmap csv: " + path.string());
  const std::size_t d = gf.dim();
  for (std::size_t k = 0; k < d; ++k) out << 'x' << k << ',';
  out << "value\n";
  std::vector<std::size_t> idx(d, 0);
  for (std::size_t flat = 0; flat < gf.values.size(); ++flat) {
    for (std::size_t k = 0; k < d; ++k) out << gf.node_coord(k, idx[k]) << ',';
    out << gf.values[flat] << '\n';
    std::size_t k = d;
    while (k-- > 0) {
      if (++idx[k] < gf.shape[k]) break;
      idx[k] = 0;
    }
  }
}

int cmd_plotdata(const CommonArgs& args, const std::string& run_dir) {
  RunConfig cfg = resolve_config(args);
  cfg.validate();
  const fs::path run(run_dir.empty() ? cfg.out_dir : run_dir);
  const fs::path out_dir = fs::path(cfg.out_dir) / "plotdata";
  ensure_dir(out_dir);

  // Intensity field over the synthesis window.
  if (cfg.process.variant == ProcessVariant::poisson_sqexp_mixture) {
    std::ofstream out(out_dir / "intensity.csv");
    if (!out) throw io_error("cannot write intensity.csv");
    out << "x0,x1,lambda\n";
    const std::size_t n = 128;
    std::vector<double> x(2);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        x[0] = cfg.synth_region.lower[0] + cfg.synth_region.extent(0) * (double(i) + 0.5) / double(n);
        x[1] = cfg.synth_region.lower[1] + cfg.synth_region.extent(1) * (double(j) + 0.5) / double(n);
        out << x[0] << ',' << x[1] << ',' << poisson_intensity(x, cfg.process) << '\n';
      }
    }
  } else {
    // Conditional intensity along the first corpus set, if present.
    const fs::path corpus = run / "corpus.jsonl";
    if (fs::exists(corpus)) {
      const auto sets = read_corpus(corpus.string());
      if (!sets.empty() && sets.front().size() > 0) {
        std::ofstream out(out_dir / "intensity.csv");
        out << "t,lambda\n";
        const auto& events = sets.front();
        const std::size_t n = 2048;
        for (std::size_t i = 0; i <= n; ++i) {
          const double t = cfg.horizon * double(i) / double(n);
          double lam = cfg.process.mu;
          for (std::size_t e = 0; e < events.size(); ++e) {
            const double s = events[e][0];
            if (s < t) lam += cfg.process.alpha * std::exp(-cfg.process.beta * (t - s));
          }
          out << t << ',' << lam << '\n';
        }
      }
    }
  }

  // Heatmaps for every grid function in the run directory.
  std::size_t heatmaps = 0;
  std::vector<fs::path> functions;
  if (fs::exists(run)) functions = grid_files_in(run);
  for (const auto& path : functions) {
    write_heatmap_csv(out_dir / (path.stem().string() + "_heatmap.csv"),
                      read_grid_function(path.string()));
    ++heatmaps;
  }

  // Particle trajectory of one decode, for the warm-up / search figures.
  std::optional<TargetFunction> target;
  if (!functions.empty()) {
    target = TargetFunction::from_grid(read_grid_function(functions.front().string()));
  } else if (fs::exists(run / "corpus.jsonl")) {
    const auto sets = read_corpus((run / "corpus.jsonl").string());
    for (const auto& s : sets) {
      if (s.size() > 0) {
        target = TargetFunction::from_mixture(encode(s, cfg.epsilon, cfg.synth_region),
                                              cfg.synth_region);
        break;
      }
    }
  }
  if (target) {
    DecodeConfig dc = cfg.decode;
    dc.seed = cfg.seed;
    if (dc.trajectory_stride == 0) {
      dc.trajectory_stride = std::max<std::size_t>(1, (dc.langevin_steps + dc.grad_steps) / 10);
    }
    if (!target->mixture_hints()) dc = dc.resolved(grid_hints(cfg, *target));
    const DecodeResult result = decode(*target, dc);

    std::ofstream out(out_dir / "particles.csv");
    if (!out) throw io_error("cannot write particles.csv");
    out << "step,particle";
    for (std::size_t k = 0; k < target->region().dim(); ++k) out << ",x" << k;
    out << '\n';
    for (const auto& snap : result.diagnostics.trajectory) {
      const std::size_t d = target->region().dim();
      const std::size_t m = snap.particles.size() / d;
      for (std::size_t i = 0; i < m; ++i) {
        out << snap.step << ',' << i;
        for (std::size_t k = 0; k < d; ++k) out << ',' << snap.particles[i * d + k];
        out << '\n';
      }
    }
  }

  std::cout << "plot data in " << out_dir.string() << " (" << heatmaps << " heatmaps)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"setflow: generative unordered-flow pipeline for point sets"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string process_override, corpus_path, resume_path, checkpoint_path;
  std::string functions_dir, gen_path, ref_path, report_path, run_dir;
  std::optional<std::size_t> steps_override;
  std::size_t sample_count = 0, synth_count = 0;

  auto add_common = [&common](CLI::App* cmd) {
    cmd->add_option("--config", common.config_path, "run configuration file");
    cmd->add_option("--seed", common.seed, "seed override");
    cmd->add_option("--out", common.out, "output path");
  };

  auto* synth = app.add_subcommand("synth", "sample a synthetic corpus");
  add_common(synth);
  synth->add_option("--process", process_override, "poisson | hawkes");
  synth->add_option("--count", synth_count, "number of sets");

  auto* train_cmd = app.add_subcommand("train", "train the flow model on a corpus");
  add_common(train_cmd);
  train_cmd->add_option("--corpus", corpus_path, "training corpus (jsonl)")->required();
  train_cmd->add_option("--resume", resume_path, "checkpoint to continue from");
  train_cmd->add_option("--steps", steps_override, "step-count override");

  auto* sample_cmd = app.add_subcommand("sample", "generate functions from a checkpoint");
  add_common(sample_cmd);
  sample_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  sample_cmd->add_option("--count", sample_count, "number of functions");

  auto* invert = app.add_subcommand("invert", "decode functions or exact mixtures to point sets");
  add_common(invert);
  invert->add_option("--functions", functions_dir, "directory of grid function files");
  invert->add_option("--corpus", corpus_path, "corpus of exact point sets to round-trip");

  auto* eval = app.add_subcommand("eval", "compare a generated corpus against a reference");
  add_common(eval);
  eval->add_option("--gen", gen_path, "generated corpus")->required();
  eval->add_option("--ref", ref_path, "reference corpus")->required();
  eval->add_option("--report", report_path, "report path (default <out>/report.json)");

  auto* plotdata = app.add_subcommand("plotdata", "export csv bundles for plotting");
  add_common(plotdata);
  plotdata->add_option("--run", run_dir, "run directory with corpus/function files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth->parsed()) return cmd_synth(common, process_override, synth_count);
    if (train_cmd->parsed()) return cmd_train(common, corpus_path, resume_path, steps_override);
    if (sample_cmd->parsed()) return cmd_sample(common, checkpoint_path, sample_count);
    if (invert->parsed()) return cmd_invert(common, functions_dir, corpus_path);
    if (eval->parsed()) return cmd_eval(common, gen_path, ref_path, report_path);
    if (plotdata->parsed()) return cmd_plotdata(common, run_dir);
  } catch (const io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}
