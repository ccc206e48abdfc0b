#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "foura/errors.hpp"
#include "foura/matrix.hpp"
#include "foura/svd.hpp"
#include "foura/trainer.hpp"

namespace foura {

// Singular-value spread of a materialized adapter update.
struct SpreadReport {
  std::vector<double> sigmas;  // descending

  // Fraction of squared singular-value mass beyond rank r; 0 for the zero
  // matrix by convention.
  double tail_energy_ratio(std::size_t r) const {
    double total = 0.0;
    double tail = 0.0;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      const double s2 = sigmas[i] * sigmas[i];
      total += s2;
      if (i >= r) tail += s2;
    }
    if (total == 0.0) return 0.0;
    return tail / total;
  }

  double top_r_error(std::size_t r, NormKind norm) const {
    if (r >= sigmas.size()) {
      throw InvalidRank("top_r_error: rank leaves no residual");
    }
    if (norm == NormKind::Spectral) return sigmas[r];
    double acc = 0.0;
    for (std::size_t i = r; i < sigmas.size(); ++i) acc += sigmas[i] * sigmas[i];
    return std::sqrt(acc);
  }
};

inline SpreadReport spread_report(const Matrix& delta_w) {
  if (!delta_w.is_finite()) throw InvalidInput("spread_report: non-finite input");
  SpreadReport rep;
  rep.sigmas = svd(delta_w).sigma;
  return rep;
}

// Inputs of the pointwise-hypothesis-stability generalization bound.
struct BoundParams {
  double c = 1.0;
  double rho = 1.0;
  double lambda_min = 0.0;
  double p = 0.5;      // effective-rank ratio in (0, 1]
  double n = 100.0;    // training-set size
  double delta = 0.1;  // confidence
  double r_hat = 0.0;  // empirical error
};

// R_hat + sqrt((C^2 + 24*C*rho^2 / (lambda_min + 2(1-p))) / (2*n*delta)).
inline double generalization_bound(const BoundParams& bp) {
  if (!(bp.n >= 1.0)) throw InvalidInput("generalization_bound: n must be >= 1");
  if (!(bp.delta > 0.0 && bp.delta < 1.0)) {
    throw InvalidInput("generalization_bound: delta must lie in (0,1)");
  }
  if (!(bp.p > 0.0 && bp.p <= 1.0)) {
    throw InvalidInput("generalization_bound: p must lie in (0,1]");
  }
  if (bp.c <= 0.0 || bp.rho < 0.0 || bp.lambda_min < 0.0 || bp.r_hat < 0.0) {
    throw InvalidInput("generalization_bound: C > 0, rho/lambda_min/r_hat >= 0 required");
  }
  const double denom = bp.lambda_min + 2.0 * (1.0 - bp.p);
  if (denom <= 0.0) {
    throw DegenerateBound("generalization_bound: lambda_min + 2(1-p) must be > 0");
  }
  const double inner = (bp.c * bp.c + 24.0 * bp.c * bp.rho * bp.rho / denom) /
                       (2.0 * bp.n * bp.delta);
  return bp.r_hat + std::sqrt(inner);
}

namespace detail {

// Top-r singular-vector slices of m as (k1 x r, k2 x r).
inline std::pair<Matrix, Matrix> top_r_slices(const Matrix& m, std::size_t r) {
  const std::size_t kmin = std::min(m.rows(), m.cols());
  if (r < 1 || r > kmin) {
    throw InvalidRank("top-r slice: rank " + std::to_string(r) + " outside [1, " +
                      std::to_string(kmin) + "]");
  }
  const SvdResult s = svd(m);
  Matrix u(m.rows(), r);
  Matrix v(m.cols(), r);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < r; ++j) u(i, j) = s.u(i, j);
  for (std::size_t i = 0; i < m.cols(); ++i)
    for (std::size_t j = 0; j < r; ++j) v(i, j) = s.v(i, j);
  return {std::move(u), std::move(v)};
}

}  // namespace detail

struct AmplificationReport {
  double dw_norm = 0.0;    // |delta_w|_F
  double proj_norm = 0.0;  // |U^T W0 V|_F over delta_w's top-r subspaces
  double factor = 0.0;     // dw_norm / proj_norm
};

// How strongly the adapter emphasises directions the base weights do not
// already express: large factors mean decorrelated updates.
inline AmplificationReport amplification_factor(const Matrix& w0, const Matrix& delta_w,
                                                std::size_t r) {
  if (!w0.same_shape(delta_w)) {
    throw ShapeError("amplification_factor: w0 " + w0.shape_str() + " vs delta_w " +
                     delta_w.shape_str());
  }
  const auto [u, v] = detail::top_r_slices(delta_w, r);
  const Matrix proj = Matrix::matmul(u.transposed(), Matrix::matmul(w0, v));
  AmplificationReport rep;
  rep.dw_norm = frobenius_norm(delta_w);
  rep.proj_norm = frobenius_norm(proj);
  if (rep.proj_norm < 1e-12) {
    throw DegenerateProjection("amplification_factor: base weights vanish on the adapter subspace");
  }
  rep.factor = rep.dw_norm / rep.proj_norm;
  return rep;
}

// |U2^T dW1 V2|_F with U2/V2 the top-r singular vectors of dW2; the
// normalized variant divides by |dW1|_F.
inline double projection_norm(const Matrix& delta_w1, const Matrix& delta_w2, std::size_t r,
                              bool normalized = false) {
  if (!delta_w1.same_shape(delta_w2)) {
    throw ShapeError("projection_norm: shapes " + delta_w1.shape_str() + " vs " +
                     delta_w2.shape_str());
  }
  if (frobenius_norm(delta_w2) == 0.0) {
    throw DegenerateSubspace("projection_norm: delta_w2 is zero");
  }
  const auto [u2, v2] = detail::top_r_slices(delta_w2, r);
  const Matrix proj = Matrix::matmul(u2.transposed(), Matrix::matmul(delta_w1, v2));
  const double norm = frobenius_norm(proj);
  if (!normalized) return norm;
  const double dw1 = frobenius_norm(delta_w1);
  if (dw1 == 0.0) throw DegenerateSubspace("projection_norm: delta_w1 is zero");
  return norm / dw1;
}

// The three-term expansion of the output autocorrelation
// R = z (W0 + dW)(W0 + dW)^T z^T split into base, adapter and cross parts.
struct AutocorrReport {
  Matrix base_term;     // z W0 W0^T z^T
  Matrix adapter_term;  // z dW dW^T z^T
  Matrix cross_term;    // z (W0 dW^T + dW W0^T) z^T
  double off_diag_ratio = 0.0;
};

inline AutocorrReport autocorrelation_decomposition(const Matrix& w0, const Matrix& delta_w,
                                                    const Matrix& z_in) {
  if (!w0.same_shape(delta_w)) {
    throw ShapeError("autocorrelation: w0 " + w0.shape_str() + " vs delta_w " +
                     delta_w.shape_str());
  }
  if (z_in.cols() != w0.rows()) {
    throw ShapeError("autocorrelation: z_in " + z_in.shape_str() + " incompatible with w0 " +
                     w0.shape_str());
  }
  const Matrix zw = Matrix::matmul(z_in, w0);
  const Matrix zd = Matrix::matmul(z_in, delta_w);
  AutocorrReport rep;
  rep.base_term = Matrix::matmul(zw, zw.transposed());
  rep.adapter_term = Matrix::matmul(zd, zd.transposed());
  const Matrix cross = Matrix::matmul(zw, zd.transposed());
  rep.cross_term = cross + cross.transposed();

  double off = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < rep.adapter_term.rows(); ++i)
    for (std::size_t j = 0; j < rep.adapter_term.cols(); ++j) {
      const double v2 = rep.adapter_term(i, j) * rep.adapter_term(i, j);
      total += v2;
      if (i != j) off += v2;
    }
  rep.off_diag_ratio = total == 0.0 ? 0.0 : std::sqrt(off) / std::sqrt(total);
  return rep;
}

// Flattened effective-rank table: per training step for matrix-fit runs, per
// denoising timestep for toy-denoise runs.
struct RankTraceRow {
  std::size_t index = 0;  // step or timestep
  std::size_t layer = 0;
  std::size_t effective_rank = 0;
  double soft_mask_mean = 0.0;
};

inline std::vector<RankTraceRow> effective_rank_trace(const TrainTrace& trace) {
  std::vector<RankTraceRow> rows;
  if (!trace.timestep_ranks.empty()) {
    for (std::size_t i = 0; i < trace.timestep_ranks.size(); ++i) {
      for (std::size_t l = 0; l < trace.timestep_ranks[i].size(); ++l) {
        rows.push_back({trace.timesteps[i], l, trace.timestep_ranks[i][l],
                        trace.timestep_soft_means[i][l]});
      }
    }
    return rows;
  }
  if (trace.effective_ranks.empty()) throw InvalidInput("effective_rank_trace: empty trace");
  for (std::size_t i = 0; i < trace.effective_ranks.size(); ++i) {
    for (std::size_t l = 0; l < trace.effective_ranks[i].size(); ++l) {
      rows.push_back({i, l, trace.effective_ranks[i][l], trace.soft_mask_means[i][l]});
    }
  }
  return rows;
}

}  // namespace foura
