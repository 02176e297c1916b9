#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "setflow/flow_core.hpp"
#include "support/stats.hpp"

using namespace setflow;

namespace {

GridFunction make_grid(const Region& region, std::vector<std::size_t> shape) {
  GridFunction gf;
  gf.region = region;
  gf.shape = std::move(shape);
  gf.values.assign(gf.node_count(), 0.0);
  return gf;
}

GridFunction random_grid(const Region& region, std::vector<std::size_t> shape,
                         std::mt19937_64& rng, double scale = 1.0) {
  GridFunction gf = make_grid(region, std::move(shape));
  std::normal_distribution<double> normal(0.0, scale);
  for (double& v : gf.values) v = normal(rng);
  return gf;
}

// Isotropic gaussian bump sampled at the cell centers; integrates to ~1.
GridFunction gaussian_grid(const Region& region, std::vector<std::size_t> shape,
                           double cx, double cy, double sigma) {
  GridFunction gf = make_grid(region, std::move(shape));
  for (std::size_t i = 0; i < gf.shape[0]; ++i) {
    for (std::size_t j = 0; j < gf.shape[1]; ++j) {
      const double dx = gf.node_coord(0, i) - cx;
      const double dy = gf.node_coord(1, j) - cy;
      gf.values[i * gf.shape[1] + j] =
          std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) /
          (2.0 * std::numbers::pi * sigma * sigma);
    }
  }
  return gf;
}

double max_abs_diff(const GridFunction& a, const GridFunction& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("noise samples have zero mean at every node") {
  const NoiseMeasureSpec spec{0.3, 0.7, 1e-6};
  const Region region({0.0, 0.0}, {1.0, 1.0});
  NoiseSampler sampler(spec, region, {16, 16});

  const std::size_t reps = 10000;
  std::vector<double> mean(256, 0.0);
  for (std::size_t r = 0; r < reps; ++r) {
    const auto gf = sampler.sample(mix_seed(3, r));
    for (std::size_t i = 0; i < 256; ++i) mean[i] += gf.values[i];
  }
  const double stderr_node = spec.amplitude / std::sqrt(double(reps));
  for (double m : mean) {
    CHECK(std::abs(m / double(reps)) <= 4.0 * stderr_node);
  }
}

TEST_CASE("noise covariance matches the squared-exponential kernel") {
  const NoiseMeasureSpec spec{0.3, 0.7, 1e-4};
  const Region region({0.0, 0.0}, {1.0, 1.0});
  NoiseSampler sampler(spec, region, {16, 16});
  const double dx = 1.0 / 16.0;

  // node pairs along one row at increasing separations, plus the diagonal
  const std::size_t base = 5 * 16 + 3;
  const std::vector<std::size_t> offsets{0, 1, 3, 6};

  const std::size_t reps = 20000;
  std::vector<double> acc(offsets.size(), 0.0);
  for (std::size_t r = 0; r < reps; ++r) {
    const auto gf = sampler.sample(mix_seed(9, r));
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      acc[k] += gf.values[base] * gf.values[base + offsets[k]];
    }
  }
  const double a2 = spec.amplitude * spec.amplitude;
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    const double dist = double(offsets[k]) * dx;
    double theory = a2 * std::exp(-dist * dist / (2.0 * spec.length_scale * spec.length_scale));
    if (offsets[k] == 0) theory += spec.nugget;
    const double emp = acc[k] / double(reps);
    const double band = 5.0 * std::sqrt((a2 * a2 + theory * theory) / double(reps));
    CHECK(std::abs(emp - theory) <= band);
  }
}

TEST_CASE("long correlation lengths give near-constant fields") {
  const NoiseMeasureSpec spec{100.0, 1.0, 0.0};
  const Region region({0.0, 0.0}, {1.0, 1.0});
  NoiseSampler sampler(spec, region, {16, 16});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto gf = sampler.sample(seed);
    std::vector<double> v(gf.values.begin(), gf.values.end());
    CHECK(teststat::sample_variance(v) < 1e-3);
  }
}

TEST_CASE("1-d noise sampling works") {
  const NoiseMeasureSpec spec{0.2, 1.0, 1e-6};
  const Region region({0.0}, {1.0});
  const auto gf = sample_noise(spec, region, {64}, 4);
  CHECK(gf.values.size() == 64);
  gf.validate();
}

TEST_CASE("conditional flow endpoints") {
  std::mt19937_64 rng(5);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  const auto h0 = random_grid(region, {8, 8}, rng);
  const auto h1 = random_grid(region, {8, 8}, rng);
  const double zeta = 0.05;

  CHECK(max_abs_diff(cond_flow(h0, h1, 0.0, zeta), h0) == 0.0);

  const auto end = cond_flow(h0, h1, 1.0, zeta);
  for (std::size_t i = 0; i < end.values.size(); ++i) {
    CHECK(end.values[i] ==
          doctest::Approx(zeta * h0.values[i] + h1.values[i]).epsilon(1e-14));
  }

  const auto mid = cond_flow(h0, h1, 0.5, 0.0);
  for (std::size_t i = 0; i < mid.values.size(); ++i) {
    CHECK(mid.values[i] == doctest::Approx(0.5 * (h0.values[i] + h1.values[i])).epsilon(1e-14));
  }
}

TEST_CASE("conditional field along the path is the constant transport field") {
  std::mt19937_64 rng(7);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  for (int rep = 0; rep < 5; ++rep) {
    const auto h0 = random_grid(region, {8, 8}, rng);
    const auto h1 = random_grid(region, {8, 8}, rng);
    const double zeta = (rep % 2 == 0) ? 1e-3 : 0.2;
    for (double t : {0.0, 0.21, 0.5, 0.77, 0.999}) {
      const auto along = cond_field(cond_flow(h0, h1, t, zeta), h1, t, zeta);
      for (std::size_t i = 0; i < along.values.size(); ++i) {
        const double expected = h1.values[i] - (1.0 - zeta) * h0.values[i];
        CHECK(std::abs(along.values[i] - expected) < 1e-12 * std::max(1.0, std::abs(expected)));
      }
    }
  }
}

TEST_CASE("conditional field edge cases") {
  std::mt19937_64 rng(9);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  const auto h = random_grid(region, {8, 8}, rng);
  const auto h1 = random_grid(region, {8, 8}, rng);

  const auto at0 = cond_field(h, h1, 0.0, 0.1);
  for (std::size_t i = 0; i < at0.values.size(); ++i) {
    CHECK(at0.values[i] == doctest::Approx(h1.values[i] - 0.9 * h.values[i]).epsilon(1e-14));
  }

  const auto degenerate = cond_field(h, h1, 0.63, 1.0);
  CHECK(max_abs_diff(degenerate, h1) == 0.0);

  CHECK_THROWS_AS((void)cond_field(h, h1, 1.0, 0.0), numeric_error);
}

TEST_CASE("time derivative of the flow equals the field along the flow") {
  std::mt19937_64 rng(11);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  const auto h0 = random_grid(region, {8, 8}, rng);
  const auto h1 = random_grid(region, {8, 8}, rng);
  const double zeta = 0.05, dt = 1e-6;
  for (double t : {0.1, 0.5, 0.9}) {
    const auto fwd = cond_flow(h0, h1, t + dt, zeta);
    const auto bwd = cond_flow(h0, h1, t - dt, zeta);
    const auto field = cond_field(cond_flow(h0, h1, t, zeta), h1, t, zeta);
    for (std::size_t i = 0; i < field.values.size(); ++i) {
      const double numeric = (fwd.values[i] - bwd.values[i]) / (2.0 * dt);
      CHECK(numeric == doctest::Approx(field.values[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("a field that equals the conditional target has zero loss") {
  std::mt19937_64 rng(13);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  std::vector<FlowSample> batch;
  batch.push_back({random_grid(region, {8, 8}, rng), random_grid(region, {8, 8}, rng), 0.37});
  const double zeta = 0.01;
  const GridFunction& h1 = batch[0].h1;
  const FieldFn oracle = [&h1, zeta](const GridFunction& h, double t) {
    return cond_field(h, h1, t, zeta);
  };
  CHECK(fm_loss_value(oracle, batch, zeta) < 1e-24);
}

TEST_CASE("zero model loss equals the hand-computed target norm") {
  std::mt19937_64 rng(17);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  std::vector<FlowSample> batch;
  for (int i = 0; i < 2; ++i) {
    batch.push_back({random_grid(region, {4, 4}, rng), random_grid(region, {4, 4}, rng),
                     0.25 + 0.4 * i});
  }
  const double zeta = 0.1;

  FieldModelArch arch{2, 6, 4};
  FieldModel zero(arch, std::vector<double>(arch.parameter_count(), 0.0));
  const auto result = fm_loss(zero, batch, zeta);

  double expected = 0.0;
  for (const auto& s : batch) {
    const auto mid = cond_flow(s.h0, s.h1, s.t, zeta);
    const auto target = cond_field(mid, s.h1, s.t, zeta);
    double acc = 0.0;
    for (double v : target.values) acc += v * v;
    expected += acc * mid.cell_volume();
  }
  expected /= double(batch.size());
  CHECK(result.loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss parameter gradient matches central finite differences") {
  std::mt19937_64 rng(19);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  std::vector<FlowSample> batch;
  for (int i = 0; i < 3; ++i) {
    batch.push_back({random_grid(region, {6, 6}, rng, 0.5),
                     random_grid(region, {6, 6}, rng, 0.5), 0.1 + 0.27 * i});
  }
  const double zeta = 1e-3;
  FieldModelArch arch{2, 8, 4};
  FieldModel model = FieldModel::create(arch, 99);
  const auto result = fm_loss(model, batch, zeta);

  std::uniform_int_distribution<std::size_t> pick(0, model.parameters().size() - 1);
  for (int probe = 0; probe < 20; ++probe) {
    const std::size_t i = pick(rng);
    const double h = 1e-5 * std::max(1.0, std::abs(model.parameters()[i]));
    FieldModel shifted = model;
    shifted.parameters()[i] += h;
    const double hi = fm_loss(shifted, batch, zeta).loss;
    shifted.parameters()[i] = model.parameters()[i] - h;
    const double lo = fm_loss(shifted, batch, zeta).loss;
    const double numeric = (hi - lo) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(result.grad[i]), 1e-10});
    CHECK(std::abs(numeric - result.grad[i]) / denom <= 1e-4);
  }
}

TEST_CASE("training overfits a single function") {
  const Region region({0.0, 0.0}, {1.0, 1.0});
  const std::vector<GridFunction> corpus{gaussian_grid(region, {24, 24}, 0.5, 0.45, 0.2)};
  const NoiseMeasureSpec noise{0.25, 0.3, 1e-6};

  FieldModelArch arch{2, 32, 8};
  FieldModel model = FieldModel::create(arch, 7);
  TrainConfig cfg;
  cfg.zeta = 1e-3;
  cfg.batch = 8;
  cfg.steps = 2000;
  cfg.learning_rate = 2e-3;
  cfg.seed = 21;

  const auto result = train(model, corpus, noise, cfg);
  REQUIRE(result.loss_trace.size() == cfg.steps);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    head += result.loss_trace[i];
    tail += result.loss_trace[cfg.steps - 1 - i];
  }
  CHECK(tail < 0.05 * head);

  // Generated functions keep the target's unit mass, within the stated band.
  NoiseSampler sampler(noise, region, {24, 24});
  double mass = 0.0;
  const std::size_t gen = 10;
  for (std::size_t i = 0; i < gen; ++i) {
    mass += ode_sample(model, sampler.sample(mix_seed(31, i)), 100).integral();
  }
  mass /= double(gen);
  CHECK(mass > 0.8);
  CHECK(mass < 1.2);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  std::mt19937_64 rng(23);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  const std::vector<GridFunction> corpus{random_grid(region, {8, 8}, rng)};
  FieldModel model = FieldModel::create({2, 8, 4}, 5);
  const std::vector<double> before = model.parameters();

  TrainConfig cfg;
  cfg.batch = 2;
  cfg.steps = 50;
  cfg.learning_rate = 0.0;
  cfg.seed = 3;
  (void)train(model, corpus, {0.3, 0.5, 1e-6}, cfg);
  CHECK(model.parameters() == before);
}

TEST_CASE("training is deterministic per seed at any thread count") {
  std::mt19937_64 rng(29);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  std::vector<GridFunction> corpus;
  for (int i = 0; i < 3; ++i) corpus.push_back(random_grid(region, {8, 8}, rng));

  auto run = [&corpus, &region](std::size_t threads) {
    FieldModel model = FieldModel::create({2, 8, 4}, 5);
    TrainConfig cfg;
    cfg.batch = 4;
    cfg.steps = 60;
    cfg.seed = 11;
    cfg.threads = threads;
    return std::pair(train(model, corpus, {0.3, 0.5, 1e-6}, cfg).loss_trace,
                     model.parameters());
  };
  const auto a = run(1);
  const auto b = run(2);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("ode with the zero field returns the input") {
  std::mt19937_64 rng(31);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  const auto noise = random_grid(region, {8, 8}, rng);
  FieldModelArch arch{2, 6, 4};
  FieldModel zero(arch, std::vector<double>(arch.parameter_count(), 0.0));
  const auto out = ode_sample(zero, noise, 25);
  CHECK(max_abs_diff(out, noise) == 0.0);
}

TEST_CASE("euler transports exactly along the conditional field") {
  // The conditional path is affine in t and the field is constant along it,
  // so explicit Euler lands on zeta h0 + g at every step count.
  std::mt19937_64 rng(37);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  const auto h0 = random_grid(region, {8, 8}, rng);
  const auto g = random_grid(region, {8, 8}, rng);
  for (double zeta : {0.0, 0.2}) {
    const FieldFn toward_g = [&g, zeta](const GridFunction& h, double t) {
      return cond_field(h, g, t, zeta);
    };
    for (std::size_t steps : {3, 10, 100}) {
      const auto out = ode_sample(toward_g, h0, steps);
      for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double expected = zeta * h0.values[i] + g.values[i];
        CHECK(std::abs(out.values[i] - expected) < 1e-10);
      }
    }
  }
}

TEST_CASE("euler converges at first order on a time-varying field") {
  std::mt19937_64 rng(41);
  const Region region({0.0, 0.0}, {1.0, 1.0});
  const auto h0 = random_grid(region, {8, 8}, rng);
  // dh/dt = cos(2 pi t) h has the exact solution h(1) = h0.
  const FieldFn field = [](const GridFunction& h, double t) {
    GridFunction u = h;
    const double a = std::cos(2.0 * std::numbers::pi * t);
    for (double& v : u.values) v *= a;
    return u;
  };
  std::vector<double> errs;
  for (std::size_t steps : {50, 100, 200}) {
    errs.push_back(max_abs_diff(ode_sample(field, h0, steps), h0));
  }
  CHECK(errs[0] / errs[1] == doctest::Approx(2.0).epsilon(0.15));
  CHECK(errs[1] / errs[2] == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("checkpoints round-trip and refuse corruption") {
  Checkpoint ckpt;
  ckpt.arch = {2, 8, 4};
  ckpt.region = Region({0.0, 0.0}, {1.0, 1.0});
  ckpt.shape = {8, 8};
  ckpt.zeta = 0.002;
  std::mt19937_64 rng(43);
  std::normal_distribution<double> normal;
  ckpt.theta.resize(ckpt.arch.parameter_count());
  for (double& t : ckpt.theta) t = normal(rng);
  ckpt.optimizer.step = 17;
  ckpt.optimizer.m.assign(ckpt.theta.size(), 0.25);
  ckpt.optimizer.v.assign(ckpt.theta.size(), 0.5);

  const auto path = std::filesystem::temp_directory_path() / "setflow_ckpt_test.sfck";
  write_checkpoint(path.string(), ckpt);
  const auto back = read_checkpoint(path.string());
  CHECK(back.theta == ckpt.theta);
  CHECK(back.optimizer.m == ckpt.optimizer.m);
  CHECK(back.optimizer.v == ckpt.optimizer.v);
  CHECK(back.optimizer.step == 17);
  CHECK(back.zeta == ckpt.zeta);
  CHECK(back.shape == ckpt.shape);

  {
    std::ofstream out(path, std::ios::binary);
    out << "{\"format\":\"something-else\"}\n";
  }
  CHECK_THROWS_AS((void)read_checkpoint(path.string()), io_error);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    write_checkpoint(path.string(), ckpt);
  }
  std::filesystem::resize_file(path, 64);
  CHECK_THROWS_AS((void)read_checkpoint(path.string()), io_error);
  std::filesystem::remove(path);
}
