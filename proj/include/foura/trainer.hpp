#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "foura/adapter.hpp"
#include "foura/autodiff.hpp"
#include "foura/errors.hpp"
#include "foura/matrix.hpp"
#include "foura/optimizer.hpp"
#include "foura/rng.hpp"
#include "foura/svd.hpp"
#include "foura/transforms.hpp"

namespace foura {

enum class Task { MatrixFit, ToyDenoise };
enum class GateChoice { Absent, Soft, HardAdaptive, Frozen };

struct TrainConfig {
  Task task = Task::MatrixFit;
  std::size_t rank = 8;
  TransformKind transform = TransformKind::Dct;
  Axis axis = Axis::Embedding;
  GateChoice gate_mode = GateChoice::Soft;
  std::size_t steps = 2000;
  double lr = 1e-3;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  double lambda_entropy = 1e-3;
  double alpha = 1.0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double gate_threshold = 0.5;
  // task plumbing
  std::size_t k1 = 32;
  std::size_t k2 = 32;
  std::size_t r_true = 2;
  double signal_scale = 1.0;
  double tail_scale = 0.05;
  std::uint64_t target_id = 0;
  std::size_t eval_batch = 8;
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.steps < 1) throw ConfigError("steps must be >= 1");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (cfg.rank < 1) throw ConfigError("rank must be >= 1");
  if (cfg.batch < 1) throw ConfigError("batch must be >= 1");
  if (cfg.eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
  if (!std::isfinite(cfg.alpha) || cfg.alpha < 0.0 || cfg.alpha > 2.0) {
    throw ConfigError("alpha must lie in [0, 2]");
  }
  if (cfg.lambda_entropy < 0.0) throw ConfigError("lambda_entropy must be >= 0");
  if (!(cfg.gate_threshold > 0.0 && cfg.gate_threshold < 1.0)) {
    throw ConfigError("threshold must lie in (0, 1)");
  }
  if (cfg.transform == TransformKind::None && cfg.gate_mode != GateChoice::Absent) {
    throw ConfigError("transform = none cannot carry a gate");
  }
  if (cfg.task == Task::MatrixFit) {
    if (cfg.k1 < 8 || cfg.k2 < 8 || cfg.k1 > 1024 || cfg.k2 > 1024) {
      throw ConfigError("k1/k2 must lie in [8, 1024]");
    }
    if (cfg.rank > std::min(cfg.k1, cfg.k2)) throw ConfigError("rank exceeds layer size");
    const std::size_t kmin = std::min(cfg.k1, cfg.k2);
    const std::size_t n_anchor = std::min<std::size_t>(8, kmin / 2);
    if (cfg.r_true < 1 || cfg.r_true + n_anchor >= kmin) {
      throw ConfigError("r_true leaves no room for the planted tail");
    }
  } else {
    if (cfg.rank > 16) throw ConfigError("toy_denoise supports rank <= 16");
  }
}

// Per-step and per-timestep record of one training run.
struct TrainTrace {
  std::vector<double> losses;                              // task MSE per step
  std::vector<std::vector<std::size_t>> effective_ranks;   // [step][layer]
  std::vector<std::vector<double>> soft_mask_means;        // [step][layer]
  std::vector<std::size_t> timesteps;                      // denoise eval, descending
  std::vector<std::vector<std::size_t>> timestep_ranks;    // [eval idx][layer]
  std::vector<std::vector<double>> timestep_soft_means;    // [eval idx][layer]
  std::vector<AdapterLayer> final_layers;
};

namespace detail {

inline constexpr std::uint64_t kStreamBase = 0;
inline constexpr std::uint64_t kStreamTarget = 1;
inline constexpr std::uint64_t kStreamInit = 2;
inline constexpr std::uint64_t kStreamBatch = 3;
inline constexpr std::uint64_t kStreamEval = 4;

// Trainable tensors for one adapter, stored in tape orientation
// (pa = a^T is k1 x r, pb = b^T is r x k2, pg* = g*^T).
struct LayerParams {
  Matrix pa;
  Matrix pb;
  Matrix pg1t;
  Matrix pg2t;
  bool gated = false;
};

struct TapeLayer {
  int pa = -1;
  int pb = -1;
  int pg1 = -1;
  int pg2 = -1;
  int out = -1;
  int soft_mask = -1;
};

struct LayerGraphSpec {
  const Matrix* w0 = nullptr;
  const LayerParams* params = nullptr;
  double alpha = 1.0;
  TransformKind transform = TransformKind::None;
  Axis axis = Axis::Embedding;
  bool hard_ste = false;  // straight-through threshold on the applied mask
  double tau = 0.5;
};

// Records one adapted layer on the tape: base product plus the (optionally
// gated) low-rank branch in the transform domain.
inline TapeLayer build_layer(ad::Tape& tape, int z_id, const LayerGraphSpec& s) {
  TapeLayer L;
  const int w0_id = tape.leaf(*s.w0);
  const int base = tape.matmul(z_id, w0_id);
  L.pa = tape.leaf(s.params->pa, true);
  L.pb = tape.leaf(s.params->pb, true);

  if (s.transform == TransformKind::None) {
    const int h = tape.matmul(z_id, L.pa);
    const int h2 = tape.matmul(h, L.pb);
    L.out = tape.add(base, tape.scale(h2, s.alpha));
    return L;
  }

  const int x = tape.transform_fwd(z_id, s.transform, s.axis);
  const int zlr = tape.matmul(x, L.pa);
  int scaled;
  if (s.params->gated) {
    const int v = tape.mean_pool_rows(zlr);
    L.pg1 = tape.leaf(s.params->pg1t, true);
    L.pg2 = tape.leaf(s.params->pg2t, true);
    const int h = tape.tanh(tape.matmul(v, L.pg1));
    const int u = tape.matmul(h, L.pg2);
    L.soft_mask = tape.sigmoid(u);
    int mask = L.soft_mask;
    if (s.hard_ste) mask = tape.hard_mask_ste(mask, s.tau);
    const int dmask = tape.diag(tape.scale(mask, s.alpha));
    scaled = tape.matmul(zlr, dmask);
  } else {
    scaled = tape.scale(zlr, s.alpha);
  }
  const int y = tape.matmul(scaled, L.pb);
  L.out = tape.add(base, tape.transform_inv(y, s.transform, s.axis));
  return L;
}

inline LayerParams init_layer_params(Rng& rng, std::size_t k1, std::size_t k2,
                                     std::size_t rank, bool gated) {
  LayerParams p;
  p.pa = rng.gaussian_matrix(k1, rank, 0.02);
  p.pb = Matrix(rank, k2);  // zero start: the branch is silent until b moves
  p.gated = gated;
  if (gated) {
    p.pg1t = rng.gaussian_matrix(rank, rank, 0.02);
    p.pg2t = rng.gaussian_matrix(rank, rank, 0.02);
  }
  return p;
}

inline AdapterLayer export_layer(const Matrix& w0, const LayerParams& p,
                                 const TrainConfig& cfg) {
  AdapterLayer l;
  l.w0 = w0;
  l.a = p.pa.transposed();
  l.b = p.pb.transposed();
  l.rank = cfg.rank;
  l.alpha = cfg.alpha;
  l.transform = cfg.transform;
  l.axis = cfg.axis;
  if (p.gated) {
    GateState g;
    g.g1 = p.pg1t.transposed();
    g.g2 = p.pg2t.transposed();
    g.threshold = cfg.gate_threshold;
    g.entropy_weight = cfg.lambda_entropy;
    g.mode = cfg.gate_mode == GateChoice::HardAdaptive ? GateMode::HardAdaptive
                                                       : GateMode::Soft;
    l.gate = std::move(g);
  }
  return l;
}

inline void record_masks(const ad::Tape& tape, const std::vector<TapeLayer>& layers,
                         std::size_t rank, double tau, TrainTrace& trace) {
  std::vector<std::size_t> effs;
  std::vector<double> means;
  for (const TapeLayer& L : layers) {
    if (L.soft_mask < 0) {
      effs.push_back(rank);
      means.push_back(1.0);
      continue;
    }
    const Matrix& m = tape.value(L.soft_mask);
    std::size_t eff = 0;
    double mean = 0.0;
    for (double v : m.data()) {
      eff += v > tau ? 1 : 0;
      mean += v;
    }
    effs.push_back(eff);
    means.push_back(mean / static_cast<double>(m.size()));
  }
  trace.effective_ranks.push_back(std::move(effs));
  trace.soft_mask_means.push_back(std::move(means));
}

// Orthonormalize the columns of g in place (modified Gram-Schmidt, two passes).
inline void orthonormalize_columns(Matrix& g) {
  for (std::size_t j = 0; j < g.cols(); ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.rows(); ++i) dot += g(i, k) * g(i, j);
        for (std::size_t i = 0; i < g.rows(); ++i) g(i, j) -= dot * g(i, k);
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i) norm += g(i, j) * g(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw InvalidInput("orthonormalize_columns: rank-deficient draw");
    for (std::size_t i = 0; i < g.rows(); ++i) g(i, j) /= norm;
  }
}

}  // namespace detail

// Planted matrix-fit problem: the signal part of the target update lives in
// the weak singular directions of w0, the small tail rides on w0's dominant
// directions (structure the base model already expresses).
struct MatrixFitProblem {
  Matrix w0;
  Matrix delta_star;
  Matrix w_star;
};

inline MatrixFitProblem make_matrix_fit_problem(const TrainConfig& cfg) {
  MatrixFitProblem p;
  Rng rw(substream(cfg.seed, detail::kStreamBase));
  p.w0 = rw.gaussian_matrix(cfg.k1, cfg.k2, 1.0 / std::sqrt(static_cast<double>(cfg.k1)));
  const SvdResult sw = svd(p.w0);

  const std::size_t kmin = std::min(cfg.k1, cfg.k2);
  const std::size_t n_anchor = std::min<std::size_t>(8, kmin / 2);
  const std::size_t n_tail = std::min<std::size_t>(6, n_anchor);

  Rng rt(substream(substream(cfg.seed, detail::kStreamTarget), cfg.target_id));
  const std::size_t c1 = cfg.k1 - n_anchor;
  const std::size_t c2 = cfg.k2 - n_anchor;
  Matrix qu = rt.gaussian_matrix(c1, cfg.r_true);
  Matrix qv = rt.gaussian_matrix(c2, cfg.r_true);
  detail::orthonormalize_columns(qu);
  detail::orthonormalize_columns(qv);

  // signal directions: combinations of w0's weakest singular vectors
  Matrix us(cfg.k1, cfg.r_true);
  Matrix vs(cfg.k2, cfg.r_true);
  for (std::size_t j = 0; j < cfg.r_true; ++j) {
    for (std::size_t i = 0; i < cfg.k1; ++i) {
      double acc = 0.0;
      for (std::size_t t = 0; t < c1; ++t) acc += sw.u(i, n_anchor + t) * qu(t, j);
      us(i, j) = acc;
    }
    for (std::size_t i = 0; i < cfg.k2; ++i) {
      double acc = 0.0;
      for (std::size_t t = 0; t < c2; ++t) acc += sw.v(i, n_anchor + t) * qv(t, j);
      vs(i, j) = acc;
    }
  }

  p.delta_star = Matrix(cfg.k1, cfg.k2);
  for (std::size_t j = 0; j < cfg.r_true; ++j) {
    const double sv = cfg.signal_scale * std::pow(0.85, static_cast<double>(j));
    for (std::size_t i = 0; i < cfg.k1; ++i)
      for (std::size_t c = 0; c < cfg.k2; ++c) p.delta_star(i, c) += sv * us(i, j) * vs(c, j);
  }
  for (std::size_t j = 0; j < n_tail; ++j) {
    const double sv = cfg.tail_scale * std::pow(0.8, static_cast<double>(j));
    for (std::size_t i = 0; i < cfg.k1; ++i)
      for (std::size_t c = 0; c < cfg.k2; ++c)
        p.delta_star(i, c) += sv * sw.u(i, j) * sw.v(c, j);
  }
  p.w_star = p.w0 + p.delta_star;
  return p;
}

// Seeded held-out batches for mask calibration and materialization.
inline std::vector<Matrix> calibration_batches(std::uint64_t seed, std::size_t rows,
                                               std::size_t cols, std::size_t samples = 8) {
  Rng rcal(substream(seed, detail::kStreamEval));
  std::vector<Matrix> out;
  out.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    out.push_back(rcal.gaussian_matrix(rows, cols));
  }
  return out;
}

inline std::vector<Matrix> matrix_fit_calibration(const TrainConfig& cfg,
                                                  std::size_t samples = 8) {
  return calibration_batches(cfg.seed, cfg.batch, cfg.k1, samples);
}

// Train one adapter to track a planted weight update over seeded Gaussian
// token batches. Deterministic for a fixed config.
inline TrainTrace run_matrix_fit(const TrainConfig& cfg) {
  if (cfg.task != Task::MatrixFit) throw InvalidInput("run_matrix_fit: wrong task");
  validate_train_config(cfg);

  const MatrixFitProblem problem = make_matrix_fit_problem(cfg);
  Rng rinit(substream(cfg.seed, detail::kStreamInit));
  detail::LayerParams params = detail::init_layer_params(
      rinit, cfg.k1, cfg.k2, cfg.rank, cfg.gate_mode != GateChoice::Absent);

  Optimizer opt(cfg.optimizer, cfg.lr);
  Rng rbatch(substream(cfg.seed, detail::kStreamBatch));
  TrainTrace trace;

  detail::LayerGraphSpec spec;
  spec.w0 = &problem.w0;
  spec.params = &params;
  spec.alpha = cfg.alpha;
  spec.transform = cfg.transform;
  spec.axis = cfg.axis;
  spec.hard_ste = cfg.gate_mode == GateChoice::HardAdaptive;
  spec.tau = cfg.gate_threshold;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Matrix z = rbatch.gaussian_matrix(cfg.batch, cfg.k1);
    const Matrix target = Matrix::matmul(z, problem.w_star);

    ad::Tape tape;
    const int z_id = tape.leaf(z);
    const detail::TapeLayer L = detail::build_layer(tape, z_id, spec);
    const int t_id = tape.leaf(target);
    const int fit = tape.mse_loss(L.out, t_id);
    int loss = fit;
    if (L.soft_mask >= 0 && cfg.lambda_entropy > 0.0) {
      loss = tape.add(loss, tape.scale(tape.entropy_penalty(L.soft_mask), cfg.lambda_entropy));
    }
    const double fit_value = tape.value(fit)(0, 0);
    if (!std::isfinite(tape.value(loss)(0, 0))) {
      throw TrainingDiverged("matrix_fit: loss became non-finite at step " +
                             std::to_string(step));
    }
    tape.backward(loss);

    std::vector<Matrix*> ps = {&params.pa, &params.pb};
    std::vector<const Matrix*> gs = {&tape.grad(L.pa), &tape.grad(L.pb)};
    if (params.gated) {
      ps.push_back(&params.pg1t);
      ps.push_back(&params.pg2t);
      gs.push_back(&tape.grad(L.pg1));
      gs.push_back(&tape.grad(L.pg2));
    }
    opt.step(ps, gs);

    trace.losses.push_back(fit_value);
    detail::record_masks(tape, {L}, cfg.rank, cfg.gate_threshold, trace);
  }

  AdapterLayer layer = detail::export_layer(problem.w0, params, cfg);
  if (cfg.gate_mode == GateChoice::Frozen) {
    const std::vector<Matrix> calib = matrix_fit_calibration(cfg);
    freeze_gate(layer, calib);
  }
  trace.final_layers.push_back(std::move(layer));
  return trace;
}

// ---------------------------------------------------------------------------
// Toy denoiser: a fixed 2-layer linear model over 16-dim signals with a
// 16-dim sinusoidal timestep embedding concatenated onto the input.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::size_t kSignalDim = 16;
inline constexpr std::size_t kTembDim = 16;
inline constexpr std::size_t kDenoiseIn = kSignalDim + kTembDim;  // 32
inline constexpr std::size_t kDenoiseSteps = 20;
inline constexpr double kDenoiseEta = 0.5;

inline std::vector<double> timestep_embedding(std::size_t t) {
  std::vector<double> e(kTembDim);
  for (std::size_t j = 0; j < kTembDim / 2; ++j) {
    const double freq = std::pow(10000.0, -static_cast<double>(j) /
                                              static_cast<double>(kTembDim / 2));
    e[2 * j] = std::sin(static_cast<double>(t) * freq);
    e[2 * j + 1] = std::cos(static_cast<double>(t) * freq);
  }
  return e;
}

inline double noise_level(std::size_t t) {
  return static_cast<double>(t) / static_cast<double>(kDenoiseSteps);
}

struct DenoiseProblem {
  Matrix w0_1;   // 32 x 32
  Matrix w0_2;   // 32 x 16
  Matrix v_sig;  // 16 x 3, orthonormal columns: the planted clean subspace
};

inline DenoiseProblem make_denoise_problem(std::uint64_t seed, std::uint64_t target_id) {
  DenoiseProblem p;
  Rng rb(substream(seed, kStreamBase));
  p.w0_1 = rb.gaussian_matrix(kDenoiseIn, kDenoiseIn, 0.25 / std::sqrt(32.0));
  p.w0_2 = rb.gaussian_matrix(kDenoiseIn, kSignalDim, 0.25 / std::sqrt(32.0));
  Rng rt(substream(substream(seed, kStreamTarget), target_id));
  p.v_sig = rt.gaussian_matrix(kSignalDim, 3);
  orthonormalize_columns(p.v_sig);
  return p;
}

inline Matrix sample_clean(const DenoiseProblem& p, Rng& rng, std::size_t n) {
  static constexpr double kScales[3] = {1.5, 1.2, 0.9};
  Matrix w(n, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 3; ++j) w(i, j) = kScales[j] * rng.gaussian();
  return Matrix::matmul(w, p.v_sig.transposed());
}

inline Matrix concat_temb(const Matrix& x, std::size_t t) {
  const std::vector<double> e = timestep_embedding(t);
  Matrix z(x.rows(), kDenoiseIn);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < kSignalDim; ++j) z(i, j) = x(i, j);
    for (std::size_t j = 0; j < kTembDim; ++j) z(i, kSignalDim + j) = e[j];
  }
  return z;
}

}  // namespace detail

// Generic single-layer forward that dispatches on the transform kind; plain
// LoRA layers report a full-rank all-ones mask.
inline std::pair<Matrix, MaskReport> adapter_forward(const AdapterLayer& layer,
                                                     const Matrix& z_in) {
  if (layer.transform == TransformKind::None) {
    MaskReport rep;
    rep.soft_mask.assign(layer.rank, 1.0);
    rep.hard_mask.assign(layer.rank, 1);
    rep.effective_rank = layer.rank;
    return {lora_forward(layer, z_in), std::move(rep)};
  }
  return foura_forward(layer, z_in);
}

struct DenoiseEval {
  std::vector<std::size_t> timesteps;                    // descending T..1
  std::vector<std::vector<std::size_t>> ranks;           // [idx][layer]
  std::vector<std::vector<double>> soft_means;           // [idx][layer]
  Matrix final_x;
};

// T-step iterative refinement x <- x - eta * eps(x, t), recording the gate
// mask of every layer at every timestep.
inline DenoiseEval run_denoise_eval(const std::vector<AdapterLayer>& layers,
                                    std::uint64_t seed, std::size_t eval_batch,
                                    std::uint64_t target_id = 0) {
  if (layers.size() != 2) throw InvalidInput("run_denoise_eval: expects two layers");
  const detail::DenoiseProblem p = detail::make_denoise_problem(seed, target_id);
  Rng reval(substream(seed, detail::kStreamEval));
  const Matrix y = detail::sample_clean(p, reval, eval_batch);
  Matrix x = y;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) += reval.gaussian();

  DenoiseEval ev;
  for (std::size_t t = detail::kDenoiseSteps; t >= 1; --t) {
    const Matrix z = detail::concat_temb(x, t);
    auto [h1, rep1] = adapter_forward(layers[0], z);
    auto [eps, rep2] = adapter_forward(layers[1], h1);
    ev.timesteps.push_back(t);
    ev.ranks.push_back({rep1.effective_rank, rep2.effective_rank});
    double m1 = 0.0;
    double m2 = 0.0;
    for (double v : rep1.soft_mask) m1 += v;
    for (double v : rep2.soft_mask) m2 += v;
    ev.soft_means.push_back({m1 / static_cast<double>(rep1.soft_mask.size()),
                             m2 / static_cast<double>(rep2.soft_mask.size())});
    x -= detail::kDenoiseEta * eps;
  }
  ev.final_x = std::move(x);
  return ev;
}

// Train adapters on both denoiser layers to predict the corruption residual,
// then run the T-step refinement and record per-timestep mask reports.
inline TrainTrace run_toy_denoise(const TrainConfig& cfg) {
  if (cfg.task != Task::ToyDenoise) throw InvalidInput("run_toy_denoise: wrong task");
  validate_train_config(cfg);

  const detail::DenoiseProblem problem =
      detail::make_denoise_problem(cfg.seed, cfg.target_id);
  Rng rinit(substream(cfg.seed, detail::kStreamInit));
  const bool gated = cfg.gate_mode != GateChoice::Absent;
  detail::LayerParams params1 =
      detail::init_layer_params(rinit, detail::kDenoiseIn, detail::kDenoiseIn, cfg.rank, gated);
  detail::LayerParams params2 =
      detail::init_layer_params(rinit, detail::kDenoiseIn, detail::kSignalDim, cfg.rank, gated);

  Optimizer opt(cfg.optimizer, cfg.lr);
  Rng rbatch(substream(cfg.seed, detail::kStreamBatch));
  TrainTrace trace;

  detail::LayerGraphSpec spec1;
  spec1.w0 = &problem.w0_1;
  spec1.params = &params1;
  spec1.alpha = cfg.alpha;
  spec1.transform = cfg.transform;
  spec1.axis = cfg.axis;
  spec1.hard_ste = cfg.gate_mode == GateChoice::HardAdaptive;
  spec1.tau = cfg.gate_threshold;
  detail::LayerGraphSpec spec2 = spec1;
  spec2.w0 = &problem.w0_2;
  spec2.params = &params2;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::size_t t = 1 + static_cast<std::size_t>(rbatch.next_u64() %
                                                       detail::kDenoiseSteps);
    const double sigma = detail::noise_level(t);
    const Matrix y = detail::sample_clean(problem, rbatch, cfg.batch);
    Matrix x = y;
    Matrix target(cfg.batch, detail::kSignalDim);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) {
        const double n = sigma * rbatch.gaussian();
        x(i, j) += n;
        target(i, j) = n;
      }
    const Matrix z = detail::concat_temb(x, t);

    ad::Tape tape;
    const int z_id = tape.leaf(z);
    const detail::TapeLayer L1 = detail::build_layer(tape, z_id, spec1);
    const detail::TapeLayer L2 = detail::build_layer(tape, L1.out, spec2);
    const int t_id = tape.leaf(target);
    const int fit = tape.mse_loss(L2.out, t_id);
    int loss = fit;
    if (cfg.lambda_entropy > 0.0) {
      if (L1.soft_mask >= 0) {
        loss = tape.add(loss,
                        tape.scale(tape.entropy_penalty(L1.soft_mask), cfg.lambda_entropy));
      }
      if (L2.soft_mask >= 0) {
        loss = tape.add(loss,
                        tape.scale(tape.entropy_penalty(L2.soft_mask), cfg.lambda_entropy));
      }
    }
    const double fit_value = tape.value(fit)(0, 0);
    if (!std::isfinite(tape.value(loss)(0, 0))) {
      throw TrainingDiverged("toy_denoise: loss became non-finite at step " +
                             std::to_string(step));
    }
    tape.backward(loss);

    std::vector<Matrix*> ps = {&params1.pa, &params1.pb, &params2.pa, &params2.pb};
    std::vector<const Matrix*> gs = {&tape.grad(L1.pa), &tape.grad(L1.pb),
                                     &tape.grad(L2.pa), &tape.grad(L2.pb)};
    if (gated) {
      ps.insert(ps.end(), {&params1.pg1t, &params1.pg2t, &params2.pg1t, &params2.pg2t});
      gs.insert(gs.end(), {&tape.grad(L1.pg1), &tape.grad(L1.pg2), &tape.grad(L2.pg1),
                           &tape.grad(L2.pg2)});
    }
    opt.step(ps, gs);

    trace.losses.push_back(fit_value);
    detail::record_masks(tape, {L1, L2}, cfg.rank, cfg.gate_threshold, trace);
  }

  AdapterLayer layer1 = detail::export_layer(problem.w0_1, params1, cfg);
  AdapterLayer layer2 = detail::export_layer(problem.w0_2, params2, cfg);
  if (cfg.gate_mode == GateChoice::Frozen) {
    Rng rcal(substream(cfg.seed, detail::kStreamEval) ^ 0x5bd1e995u);
    std::vector<Matrix> calib1;
    for (int i = 0; i < 8; ++i) {
      const std::size_t t = 1 + static_cast<std::size_t>(rcal.next_u64() %
                                                         detail::kDenoiseSteps);
      Matrix y = detail::sample_clean(problem, rcal, cfg.batch);
      for (double& v : y.data()) v += detail::noise_level(t) * rcal.gaussian();
      calib1.push_back(detail::concat_temb(y, t));
    }
    freeze_gate(layer1, calib1);
    std::vector<Matrix> calib2;
    for (const Matrix& z : calib1) calib2.push_back(adapter_forward(layer1, z).first);
    freeze_gate(layer2, calib2);
  }

  const DenoiseEval ev = run_denoise_eval({layer1, layer2}, cfg.seed, cfg.eval_batch,
                                          cfg.target_id);
  trace.timesteps = ev.timesteps;
  trace.timestep_ranks = ev.ranks;
  trace.timestep_soft_means = ev.soft_means;
  trace.final_layers.push_back(std::move(layer1));
  trace.final_layers.push_back(std::move(layer2));
  return trace;
}

// Max relative disagreement between tape gradients and central finite
// differences of the scalar loss |forward(z)|_F^2 / 2 over every trainable
// scalar of the layer. Soft or ungated layers only.
inline double grad_check(const AdapterLayer& layer, const Matrix& z_in, double eps) {
  validate_layer(layer);
  if (eps < 1e-7 || eps > 1e-3) throw InvalidInput("grad_check: eps outside [1e-7, 1e-3]");
  if (layer.gate && layer.gate->mode != GateMode::Soft) {
    throw NonDifferentiable("grad_check requires a soft (or absent) gate");
  }

  detail::LayerParams params;
  params.pa = layer.a.transposed();
  params.pb = layer.b.transposed();
  params.gated = layer.gate.has_value();
  if (layer.gate) {
    params.pg1t = layer.gate->g1.transposed();
    params.pg2t = layer.gate->g2.transposed();
  }
  detail::LayerGraphSpec spec;
  spec.w0 = &layer.w0;
  spec.params = &params;
  spec.alpha = layer.alpha;
  spec.transform = layer.transform;
  spec.axis = layer.axis;

  ad::Tape tape;
  const int z_id = tape.leaf(z_in);
  const detail::TapeLayer L = detail::build_layer(tape, z_id, spec);
  const Matrix& out = tape.value(L.out);
  const int zeros = tape.leaf(Matrix(out.rows(), out.cols()));
  const int loss = tape.scale(tape.mse_loss(L.out, zeros),
                              static_cast<double>(out.size()) / 2.0);
  tape.backward(loss);

  const auto loss_at = [&](const AdapterLayer& l) {
    const Matrix o = adapter_forward(l, z_in).first;
    double acc = 0.0;
    for (double v : o.data()) acc += v * v;
    return acc / 2.0;
  };

  // (tape grad node, pointer-to-member selecting the layer matrix, transpose flag)
  struct Slot {
    int node;
    Matrix AdapterLayer::* direct;
    bool gate1;
    bool gate2;
  };
  std::vector<Slot> slots = {{L.pa, &AdapterLayer::a, false, false},
                             {L.pb, &AdapterLayer::b, false, false}};
  if (layer.gate) {
    slots.push_back({L.pg1, nullptr, true, false});
    slots.push_back({L.pg2, nullptr, false, true});
  }

  double worst = 0.0;
  for (const Slot& s : slots) {
    AdapterLayer probe = layer;
    Matrix* target = s.gate1   ? &probe.gate->g1
                     : s.gate2 ? &probe.gate->g2
                               : &(probe.*(s.direct));
    const Matrix& gt = tape.grad(s.node);  // tape orientation = target transposed
    for (std::size_t i = 0; i < target->rows(); ++i) {
      for (std::size_t j = 0; j < target->cols(); ++j) {
        const double saved = (*target)(i, j);
        (*target)(i, j) = saved + eps;
        const double lp = loss_at(probe);
        (*target)(i, j) = saved - eps;
        const double lm = loss_at(probe);
        (*target)(i, j) = saved;
        const double fd = (lp - lm) / (2.0 * eps);
        const double g = gt(j, i);
        const double rel = std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)});
        worst = std::max(worst, rel);
      }
    }
  }
  return worst;
}

}  // namespace foura
