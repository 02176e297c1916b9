#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "setflow/inverse_transform.hpp"
#include "setflow/metrics.hpp"
#include "setflow/point_process.hpp"
#include "setflow/run_config.hpp"

namespace fs = std::filesystem;
using namespace setflow;

namespace {

std::string binary() {
  const char* bin = std::getenv("SETFLOW_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "SETFLOW_BIN must point at the cli binary");
  return bin;
}

int run(const std::string& args) {
  const std::string cmd = binary() + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path work_dir() {
  static fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "setflow_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Small, fast configuration shared by the pipeline smoke tests.
void write_smoke_config(const fs::path& path) {
  std::ofstream out(path);
  out << R"(config_version = 1
[run]
seed = 11

[synth]
count = 12

[representation]
epsilon = 0.25

[grid]
lower = [-8.0, -8.0]
upper = [8.0, 8.0]
shape = [32, 32]

[model]
hidden_width = 16
time_features = 4

[train]
steps = 50
batch = 2
learning_rate = 0.002

[decode]
particles = 256
langevin_steps = 60
grad_steps = 60

[sample]
count = 3
ode_steps = 20
)";
}

}  // namespace

TEST_CASE("synth writes the requested number of sets and a resolved config") {
  const fs::path dir = work_dir();
  const fs::path corpus = dir / "c.jsonl";
  CHECK(run("synth --process poisson --seed 7 --count 5 --out " + corpus.string()) == 0);

  std::ifstream in(corpus);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 6);  // header + 5 records
  CHECK(fs::exists(dir / "c.resolved.toml"));
  const RunConfig resolved = load_run_config((dir / "c.resolved.toml").string());
  CHECK(resolved.seed == 7);
  CHECK(resolved.synth_count == 5);
}

TEST_CASE("synth is byte-identical per seed") {
  const fs::path dir = work_dir();
  const fs::path a = dir / "a.jsonl", b = dir / "b.jsonl";
  CHECK(run("synth --process hawkes --seed 13 --count 4 --out " + a.string()) == 0);
  CHECK(run("synth --process hawkes --seed 13 --count 4 --out " + b.string()) == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(run("synth --process hawkes --seed 14 --count 4 --out " + b.string()) == 0);
  CHECK(slurp(a) != slurp(b));
}

TEST_CASE("invalid process parameters exit with the validation code") {
  const fs::path dir = work_dir();
  const fs::path cfg = dir / "bad.toml";
  {
    std::ofstream out(cfg);
    out << "[process]\nvariant = \"hawkes\"\nalpha = 5.0\nbeta = 3.0\n";
  }
  CHECK(run("synth --config " + cfg.string() + " --out " + (dir / "x.jsonl").string()) == 2);
  CHECK(run("synth --process cox --out " + (dir / "x.jsonl").string()) == 2);
}

TEST_CASE("missing input files exit with the io code") {
  const fs::path dir = work_dir();
  CHECK(run("train --corpus " + (dir / "nope.jsonl").string() + " --out " + dir.string()) == 4);
  CHECK(run("eval --gen " + (dir / "nope.jsonl").string() + " --ref " +
            (dir / "nope.jsonl").string()) == 4);
}

TEST_CASE("the training pipeline runs, resumes, and refuses corrupt checkpoints") {
  const fs::path dir = work_dir() / "pipeline";
  fs::create_directories(dir);
  const fs::path cfg = dir / "run.toml";
  write_smoke_config(cfg);
  const fs::path corpus = dir / "corpus.jsonl";

  REQUIRE(run("synth --config " + cfg.string() + " --out " + corpus.string()) == 0);
  REQUIRE(run("train --config " + cfg.string() + " --corpus " + corpus.string() + " --out " +
              dir.string()) == 0);
  CHECK(fs::exists(dir / "checkpoint.sfck"));
  CHECK(fs::exists(dir / "resolved.toml"));

  // loss trace: header + one row per step, numbered from 1
  {
    std::ifstream in(dir / "loss.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,loss");
    std::size_t rows = 0;
    std::string first, last;
    while (std::getline(in, line)) {
      if (rows == 0) first = line;
      last = line;
      ++rows;
    }
    CHECK(rows == 50);
    CHECK(first.substr(0, 2) == "1,");
    CHECK(last.substr(0, 3) == "50,");
  }

  // resume continues the numbering
  REQUIRE(run("train --config " + cfg.string() + " --corpus " + corpus.string() + " --out " +
              dir.string() + " --resume " + (dir / "checkpoint.sfck").string() +
              " --steps 10") == 0);
  {
    std::ifstream in(dir / "loss.csv");
    std::string line, last;
    std::size_t rows = 0;
    std::getline(in, line);
    while (std::getline(in, line)) {
      last = line;
      ++rows;
    }
    CHECK(rows == 60);
    CHECK(last.substr(0, 3) == "60,");
  }

  // corrupted checkpoint is refused
  {
    std::ofstream out(dir / "broken.sfck", std::ios::binary);
    out << "not a checkpoint\n";
  }
  CHECK(run("train --config " + cfg.string() + " --corpus " + corpus.string() + " --out " +
            dir.string() + " --resume " + (dir / "broken.sfck").string()) == 4);

  // sampling emits one grid file per requested function, same grid header
  const fs::path sampled = dir / "sampled";
  REQUIRE(run("sample --config " + cfg.string() + " --checkpoint " +
              (dir / "checkpoint.sfck").string() + " --seed 3 --out " + sampled.string()) == 0);
  std::size_t function_files = 0;
  for (const auto& entry : fs::directory_iterator(sampled)) {
    if (entry.path().extension() == ".gfb") {
      const auto gf = read_grid_function(entry.path().string());
      CHECK(gf.shape == std::vector<std::size_t>{32, 32});
      ++function_files;
    }
  }
  CHECK(function_files == 3);

  // invert on the generated functions produces a corpus + diagnostics
  const fs::path inverted = dir / "inverted";
  REQUIRE(run("invert --config " + cfg.string() + " --functions " + sampled.string() +
              " --out " + inverted.string()) == 0);
  CHECK(fs::exists(inverted / "sets.jsonl"));
  CHECK(fs::exists(inverted / "diagnostics.json"));

  // plotdata exports the csv bundles
  const fs::path plots = dir / "plotout";
  REQUIRE(run("plotdata --config " + cfg.string() + " --run " + sampled.string() + " --out " +
              plots.string()) == 0);
  CHECK(fs::exists(plots / "plotdata" / "intensity.csv"));
  CHECK(fs::exists(plots / "plotdata" / "particles.csv"));
  std::size_t heatmaps = 0;
  for (const auto& entry : fs::directory_iterator(plots / "plotdata")) {
    if (entry.path().filename().string().find("heatmap") != std::string::npos) ++heatmaps;
  }
  CHECK(heatmaps == 3);
}

TEST_CASE("invert on an exact corpus reproduces the library decode bit for bit") {
  const fs::path dir = work_dir() / "invert_exact";
  fs::create_directories(dir);
  const fs::path cfg_path = dir / "run.toml";
  write_smoke_config(cfg_path);

  // a small corpus of two well-separated sets
  std::vector<PointSet> sets;
  sets.emplace_back(2, std::vector<double>{-2.0, -2.0, 2.0, 2.0, 0.0, 2.5});
  sets.emplace_back(2, std::vector<double>{-1.0, 1.5, 1.5, -1.0});
  const fs::path corpus = dir / "exact.jsonl";
  write_corpus(corpus.string(), sets);

  REQUIRE(run("invert --config " + cfg_path.string() + " --corpus " + corpus.string() +
              " --out " + dir.string()) == 0);
  const auto decoded = read_corpus((dir / "sets.jsonl").string());
  REQUIRE(decoded.size() == 2);

  // replicate the command through the library
  RunConfig cfg = load_run_config(cfg_path.string());
  double mean_size = 0.5 * (3.0 + 2.0);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto target = TargetFunction::from_mixture(encode(sets[i], cfg.epsilon, cfg.synth_region),
                                                     cfg.synth_region);
    DecodeConfig dc = cfg.decode;
    dc.expected_set_size = mean_size;
    dc.seed = mix_seed(cfg.seed, i);
    const auto result = decode(target, dc);
    CHECK(decoded[i] == result.points);
  }
}

TEST_CASE("eval of a corpus against itself reports zero size distance") {
  const fs::path dir = work_dir() / "eval_self";
  fs::create_directories(dir);
  const fs::path corpus = dir / "c.jsonl";
  REQUIRE(run("synth --process poisson --seed 5 --count 20 --out " + corpus.string()) == 0);
  const fs::path report = dir / "report.json";
  REQUIRE(run("eval --gen " + corpus.string() + " --ref " + corpus.string() + " --report " +
              report.string() + " --out " + dir.string()) == 0);
  const std::string text = slurp(report);
  CHECK(text.find("\"s_wstein\": 0.0") != std::string::npos);
  CHECK(text.find("\"n_gen\": 20") != std::string::npos);
}
