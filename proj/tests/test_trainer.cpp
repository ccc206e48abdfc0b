#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <string>

#include "foura/config.hpp"
#include "foura/matrix.hpp"
#include "foura/rng.hpp"
#include "foura/svd.hpp"
#include "foura/trainer.hpp"

using namespace foura;

namespace {

TrainConfig fit_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.task = Task::MatrixFit;
  cfg.rank = 8;
  cfg.r_true = 2;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("prng streams are deterministic and decoupled") {
  Rng a(123);
  Rng b(123);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  REQUIRE(substream(5, 0) != substream(5, 1));
  REQUIRE(substream(5, 0) == substream(5, 0));
}

TEST_CASE("planted problem construction") {
  const TrainConfig cfg = fit_config(3);
  const MatrixFitProblem p = make_matrix_fit_problem(cfg);
  REQUIRE(max_abs_diff(p.w_star, p.w0 + p.delta_star) == 0.0);

  // the planted update has r_true dominant directions plus a small tail
  const SvdResult s = svd(p.delta_star);
  REQUIRE(s.sigma[0] == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(s.sigma[1] == Catch::Approx(0.85).margin(1e-9));
  REQUIRE(s.sigma[2] == Catch::Approx(cfg.tail_scale).margin(1e-9));

  // same seed, different target ids share w0 but not the planted update
  TrainConfig other = cfg;
  other.target_id = 1;
  const MatrixFitProblem q = make_matrix_fit_problem(other);
  REQUIRE(p.w0 == q.w0);
  REQUIRE(max_abs_diff(p.delta_star, q.delta_star) > 0.1);
}

TEST_CASE("matrix fit with a zero planted update stays at zero loss") {
  TrainConfig cfg = fit_config(7);
  cfg.steps = 200;
  cfg.signal_scale = 0.0;
  cfg.tail_scale = 0.0;
  cfg.transform = TransformKind::Dct;
  cfg.gate_mode = GateChoice::Soft;
  const MatrixFitProblem p = make_matrix_fit_problem(cfg);
  REQUIRE(frobenius_norm(p.delta_star) == 0.0);

  const TrainTrace tr = run_matrix_fit(cfg);
  REQUIRE(tr.losses.back() < 1e-6);
  // nothing to learn: the adapter branch stays silent
  const AdapterLayer& l = tr.final_layers[0];
  const Matrix dw = materialize_delta_w(l, std::vector<double>(l.rank, 1.0));
  REQUIRE(frobenius_norm(dw) < 1e-6);
}

TEST_CASE("matrix fit learns the planted update and the gate prunes") {
  TrainConfig cfg = fit_config(0);
  cfg.steps = 2000;
  cfg.transform = TransformKind::Dct;
  cfg.gate_mode = GateChoice::Soft;
  const TrainTrace tr = run_matrix_fit(cfg);
  REQUIRE(tr.losses.size() == 2000);
  REQUIRE(tr.losses.back() < 1e-3);
  REQUIRE(tr.effective_ranks.back()[0] < 8);
  REQUIRE(tr.final_layers.size() == 1);

  // every recorded effective rank respects the configured rank
  for (const auto& step : tr.effective_ranks)
    for (std::size_t e : step) REQUIRE(e <= cfg.rank);
}

TEST_CASE("training traces are bitwise deterministic") {
  TrainConfig cfg = fit_config(11);
  cfg.steps = 120;
  cfg.transform = TransformKind::Dct;
  cfg.gate_mode = GateChoice::Soft;
  const TrainTrace a = run_matrix_fit(cfg);
  const TrainTrace b = run_matrix_fit(cfg);
  REQUIRE(a.losses == b.losses);
  REQUIRE(a.effective_ranks == b.effective_ranks);
  REQUIRE(a.final_layers[0].a == b.final_layers[0].a);
  REQUIRE(a.final_layers[0].b == b.final_layers[0].b);
}

TEST_CASE("lora and ungated dct foura reach the same floor (unitary reparameterization)") {
  TrainConfig lora = fit_config(11);
  lora.steps = 4000;
  lora.lr = 3e-3;
  lora.tail_scale = 0.0;
  lora.transform = TransformKind::None;
  lora.gate_mode = GateChoice::Absent;
  TrainConfig foura = lora;
  foura.transform = TransformKind::Dct;
  foura.gate_mode = GateChoice::Absent;
  const double l1 = run_matrix_fit(lora).losses.back();
  const double l2 = run_matrix_fit(foura).losses.back();
  REQUIRE(std::abs(l1 - l2) < 1e-6);
}

TEST_CASE("frozen gate mode exports a frozen layer") {
  TrainConfig cfg = fit_config(13);
  cfg.steps = 300;
  cfg.transform = TransformKind::Dct;
  cfg.gate_mode = GateChoice::Frozen;
  const TrainTrace tr = run_matrix_fit(cfg);
  const AdapterLayer& l = tr.final_layers[0];
  REQUIRE(l.gate.has_value());
  REQUIRE(l.gate->mode == GateMode::Frozen);
  REQUIRE(l.gate->frozen_mask.size() == cfg.rank);
  for (double v : l.gate->frozen_mask) REQUIRE((v == 0.0 || v == 1.0));
}

TEST_CASE("config text parsing") {
  const TrainConfig cfg = parse_train_config_text(
      "# comment\n"
      "task = toy_denoise\n"
      "rank = 6\n"
      "transform = dft\n"
      "axis = token\n"
      "gate_mode = hard_adaptive\n"
      "steps = 42\n"
      "lr = 5e-3\n"
      "batch = 4\n"
      "seed = 99\n"
      "lambda_entropy = 1e-4\n"
      "alpha = 1.5\n"
      "optimizer = sgd\n"
      "threshold = 0.6\n");
  REQUIRE(cfg.task == Task::ToyDenoise);
  REQUIRE(cfg.rank == 6);
  REQUIRE(cfg.transform == TransformKind::Dft);
  REQUIRE(cfg.axis == Axis::Token);
  REQUIRE(cfg.gate_mode == GateChoice::HardAdaptive);
  REQUIRE(cfg.steps == 42);
  REQUIRE(cfg.lr == Catch::Approx(5e-3));
  REQUIRE(cfg.batch == 4);
  REQUIRE(cfg.seed == 99);
  REQUIRE(cfg.lambda_entropy == Catch::Approx(1e-4));
  REQUIRE(cfg.alpha == Catch::Approx(1.5));
  REQUIRE(cfg.optimizer == OptimizerKind::Sgd);
  REQUIRE(cfg.gate_threshold == Catch::Approx(0.6));

  // errors carry the line number
  try {
    parse_train_config_text("task = matrix_fit\nnonsense = 1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
  }
  REQUIRE_THROWS_AS(parse_train_config_text("task matrix_fit\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_train_config_text("lr = abc\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_train_config_text("transform = fft\n"), ConfigError);
  REQUIRE_THROWS_AS(load_train_config("no_such_file.cfg"), ConfigError);
}

TEST_CASE("config validation") {
  TrainConfig cfg = fit_config(1);
  cfg.steps = 0;
  REQUIRE_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = fit_config(1);
  cfg.lr = 0.0;
  REQUIRE_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = fit_config(1);
  cfg.alpha = 2.5;
  REQUIRE_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = fit_config(1);
  cfg.transform = TransformKind::None;
  cfg.gate_mode = GateChoice::Soft;
  REQUIRE_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = fit_config(1);
  REQUIRE_THROWS_AS(run_toy_denoise(cfg), InvalidInput);  // wrong task
}

TEST_CASE("toy denoiser: frozen all-ones mask keeps the trace flat at the nominal rank") {
  // hand-built layers, no training: frozen all-ones gates
  Rng rng(17);
  std::vector<AdapterLayer> layers;
  for (auto [k1, k2] : {std::pair<std::size_t, std::size_t>{32, 32}, {32, 16}}) {
    AdapterLayer l;
    l.w0 = rng.gaussian_matrix(k1, k2, 0.1);
    l.a = rng.gaussian_matrix(4, k1, 0.05);
    l.b = rng.gaussian_matrix(k2, 4, 0.05);
    l.rank = 4;
    l.transform = TransformKind::Dct;
    GateState g;
    g.g1 = rng.gaussian_matrix(4, 4);
    g.g2 = rng.gaussian_matrix(4, 4);
    g.mode = GateMode::Frozen;
    g.frozen_mask = {1.0, 1.0, 1.0, 1.0};
    l.gate = g;
    layers.push_back(std::move(l));
  }
  const DenoiseEval ev = run_denoise_eval(layers, 5, 4);
  REQUIRE(ev.timesteps.size() == 20);
  REQUIRE(ev.timesteps.front() == 20);
  REQUIRE(ev.timesteps.back() == 1);
  for (const auto& row : ev.ranks) {
    REQUIRE(row[0] == 4);
    REQUIRE(row[1] == 4);
  }

  // the all-masked counterpart records zero effective rank at every timestep
  for (AdapterLayer& l : layers) l.gate->frozen_mask = {0.0, 0.0, 0.0, 0.0};
  const DenoiseEval off = run_denoise_eval(layers, 5, 4);
  for (const auto& row : off.ranks) {
    REQUIRE(row[0] == 0);
    REQUIRE(row[1] == 0);
  }
}

TEST_CASE("toy denoiser with alpha 0 reproduces the base trajectory") {
  TrainConfig cfg;
  cfg.task = Task::ToyDenoise;
  cfg.rank = 4;
  cfg.steps = 30;
  cfg.transform = TransformKind::Dct;
  cfg.gate_mode = GateChoice::Soft;
  cfg.seed = 23;
  TrainTrace tr = run_toy_denoise(cfg);

  std::vector<AdapterLayer> disabled = tr.final_layers;
  for (AdapterLayer& l : disabled) l.alpha = 0.0;
  const DenoiseEval ev = run_denoise_eval(disabled, cfg.seed, cfg.eval_batch, cfg.target_id);

  // reference trajectory straight through the base weights
  std::vector<AdapterLayer> bare;
  for (const AdapterLayer& l : disabled) {
    AdapterLayer plain;
    plain.w0 = l.w0;
    plain.a = Matrix(l.rank, l.k1());
    plain.b = Matrix(l.k2(), l.rank);
    plain.rank = l.rank;
    plain.transform = TransformKind::None;
    bare.push_back(std::move(plain));
  }
  const DenoiseEval base = run_denoise_eval(bare, cfg.seed, cfg.eval_batch, cfg.target_id);
  REQUIRE(max_abs_diff(ev.final_x, base.final_x) < 1e-12);
}

TEST_CASE("toy denoiser trains and records per-timestep masks") {
  TrainConfig cfg;
  cfg.task = Task::ToyDenoise;
  cfg.rank = 8;
  cfg.steps = 600;
  cfg.lr = 1e-2;
  cfg.lambda_entropy = 3e-5;
  cfg.transform = TransformKind::Dct;
  cfg.gate_mode = GateChoice::HardAdaptive;
  cfg.seed = 2;
  const TrainTrace tr = run_toy_denoise(cfg);
  REQUIRE(tr.timestep_ranks.size() == 20);
  REQUIRE(tr.final_layers.size() == 2);
  for (const auto& row : tr.timestep_ranks) {
    REQUIRE(row.size() == 2);
    for (std::size_t e : row) REQUIRE(e <= cfg.rank);
  }
  // denoising actually helps: mean loss over the last 100 steps beats the first 100
  double first = 0.0;
  double last = 0.0;
  for (int i = 0; i < 100; ++i) {
    first += tr.losses[i];
    last += tr.losses[tr.losses.size() - 100 + i];
  }
  REQUIRE(last < first);
}
