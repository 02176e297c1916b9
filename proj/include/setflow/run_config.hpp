#pragma once

#include <string>

#include "setflow/flow_core.hpp"
#include "setflow/inverse_transform.hpp"
#include "setflow/point_process.hpp"

namespace setflow {

struct SampleConfig {
  std::size_t count = 200;
  std::size_t ode_steps = 100;
  std::string format = "gfb";  // gfb (binary) | gft (text)
};

// One config file drives every command; all defaults are materialized when
// the resolved config is written next to the outputs.
struct RunConfig {
  int config_version = 1;
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  IntensitySpec process = IntensitySpec::demo_poisson();
  double horizon = 100.0;            // hawkes sampling window
  Region synth_region{{-4.5, -4.5}, {4.5, 4.5}};  // poisson sampling window
  std::size_t synth_count = 500;

  double epsilon = 0.25;

  Region grid_region{{-8.0, -8.0}, {8.0, 8.0}};
  std::vector<std::size_t> grid_shape{64, 64};

  NoiseMeasureSpec noise{0.8, 0.15, 1e-6};
  FieldModelArch arch{2, 64, 8};
  TrainConfig train{1e-3, 16, 20000, 1e-3, "constant", 0, 0};

  DecodeConfig decode;
  double decode_sigma_min = 0.0;  // bandwidth hint for grid targets; 0: epsilon * ln 2

  double metrics_epsilon = 0.0;  // 0: use epsilon

  SampleConfig sample;

  void validate() const;
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string serialize_run_config(const RunConfig& cfg);
void write_run_config(const std::string& path, const RunConfig& cfg);

}  // namespace setflow
