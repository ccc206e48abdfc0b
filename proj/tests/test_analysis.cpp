#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "foura/analysis.hpp"
#include "foura/matrix.hpp"
#include "foura/rng.hpp"
#include "foura/svd.hpp"
#include "support/oracles.hpp"

using namespace foura;

TEST_CASE("spread report closed forms") {
  const SpreadReport zero = spread_report(Matrix(4, 4));
  for (double s : zero.sigmas) REQUIRE(s == 0.0);
  REQUIRE(zero.tail_energy_ratio(1) == 0.0);

  const Matrix d = Matrix::from_rows(
      {{2, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  const SpreadReport rep = spread_report(d);
  REQUIRE(rep.tail_energy_ratio(1) == Catch::Approx(0.2).margin(1e-12));
  REQUIRE(rep.top_r_error(1, NormKind::Spectral) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(rep.top_r_error(1, NormKind::Frobenius) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE_THROWS_AS(rep.top_r_error(4, NormKind::Spectral), InvalidRank);

  Matrix bad(2, 2);
  bad(0, 0) = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(spread_report(bad), InvalidInput);
}

TEST_CASE("generalization bound reproduces the hand value") {
  BoundParams bp;
  bp.c = 1.0;
  bp.rho = 1.0;
  bp.lambda_min = 0.0;
  bp.p = 0.5;
  bp.n = 100.0;
  bp.delta = 0.1;
  bp.r_hat = 0.0;
  REQUIRE(generalization_bound(bp) == Catch::Approx(1.118034).margin(1e-6));

  // rho = 0 removes the middle term
  BoundParams flat = bp;
  flat.rho = 0.0;
  flat.r_hat = 0.25;
  REQUIRE(generalization_bound(flat) ==
          Catch::Approx(0.25 + std::sqrt(1.0 / (2.0 * 100.0 * 0.1))).margin(1e-12));
}

TEST_CASE("generalization bound monotonicity") {
  BoundParams bp;
  bp.c = 1.0;
  bp.rho = 1.0;
  bp.lambda_min = 0.0;
  bp.n = 50.0;
  bp.delta = 0.05;
  bp.r_hat = 0.0;

  // decreasing in sparsity (1-p): evaluate p = 0.9, 0.5, 0.1
  bp.p = 0.9;
  const double high_p = generalization_bound(bp);
  bp.p = 0.5;
  const double mid_p = generalization_bound(bp);
  bp.p = 0.1;
  const double low_p = generalization_bound(bp);
  REQUIRE(high_p > mid_p);
  REQUIRE(mid_p > low_p);

  // strictly increasing in p across a sweep (lambda_min = 0)
  double prev = 0.0;
  for (int i = 1; i <= 20; ++i) {
    bp.p = 0.045 * i;
    const double val = generalization_bound(bp);
    if (i > 1) REQUIRE(val > prev);
    prev = val;
  }

  // strictly increasing in the empirical error and in 1/delta
  bp.p = 0.5;
  bp.r_hat = 0.0;
  const double base = generalization_bound(bp);
  bp.r_hat = 0.3;
  REQUIRE(generalization_bound(bp) == Catch::Approx(base + 0.3).margin(1e-12));
  bp.r_hat = 0.0;
  bp.delta = 0.025;
  REQUIRE(generalization_bound(bp) > base);
}

TEST_CASE("generalization bound degenerate and invalid inputs") {
  BoundParams bp;
  bp.p = 1.0;
  bp.lambda_min = 0.0;
  REQUIRE_THROWS_AS(generalization_bound(bp), DegenerateBound);
  bp.lambda_min = 0.5;
  REQUIRE_NOTHROW(generalization_bound(bp));

  bp = BoundParams{};
  bp.delta = 1.5;
  REQUIRE_THROWS_AS(generalization_bound(bp), InvalidInput);
  bp = BoundParams{};
  bp.n = 0.0;
  REQUIRE_THROWS_AS(generalization_bound(bp), InvalidInput);
}

TEST_CASE("amplification factor closed forms") {
  const std::size_t n = 4;
  const Matrix eye = Matrix::identity(n);
  const AmplificationReport rep = amplification_factor(eye, eye, n);
  REQUIRE(rep.dw_norm == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(rep.proj_norm == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(rep.factor == Catch::Approx(1.0).margin(1e-12));

  // orthogonal subspaces degenerate: w0 = e1 e1^T, dw = e2 e2^T
  Matrix w0(3, 3);
  w0(0, 0) = 1.0;
  Matrix dw(3, 3);
  dw(1, 1) = 1.0;
  REQUIRE_THROWS_AS(amplification_factor(w0, dw, 1), DegenerateProjection);

  REQUIRE_THROWS_AS(amplification_factor(Matrix(2, 2), Matrix(3, 3), 1), ShapeError);
}

TEST_CASE("amplification factor agrees with a brute-force slice of the full svd") {
  Rng rng(44);
  const Matrix w0 = rng.gaussian_matrix(9, 6);
  const Matrix dw = rng.gaussian_matrix(9, 6);
  const std::size_t r = 3;
  const AmplificationReport rep = amplification_factor(w0, dw, r);

  const SvdResult s = svd(dw);
  Matrix proj(r, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < 9; ++a)
        for (std::size_t b = 0; b < 6; ++b) acc += s.u(a, i) * w0(a, b) * s.v(b, j);
      proj(i, j) = acc;
    }
  REQUIRE(rep.proj_norm == Catch::Approx(frobenius_norm(proj)).margin(1e-10));
  REQUIRE(rep.factor ==
          Catch::Approx(frobenius_norm(dw) / frobenius_norm(proj)).margin(1e-10));
}

TEST_CASE("projection norm closed forms") {
  Rng rng(45);
  // self projection at full rank recovers the Frobenius norm
  const Matrix dw = rng.gaussian_matrix(6, 5);
  REQUIRE(projection_norm(dw, dw, 5) == Catch::Approx(frobenius_norm(dw)).margin(1e-10));

  // low-rank self projection is exactly 1 after normalization
  const Matrix low = low_rank_approx(dw, 2);
  REQUIRE(projection_norm(low, low, 3, true) == Catch::Approx(1.0).margin(1e-10));

  // disjoint singular subspaces project to zero
  Matrix e1(4, 4);
  e1(0, 0) = 1.0;
  Matrix e2(4, 4);
  e2(1, 1) = 1.0;
  REQUIRE(projection_norm(e1, e2, 1) == Catch::Approx(0.0).margin(1e-12));

  REQUIRE_THROWS_AS(projection_norm(dw, Matrix(6, 5), 2), DegenerateSubspace);
  REQUIRE_THROWS_AS(projection_norm(Matrix(6, 5), dw, 2, true), DegenerateSubspace);
  REQUIRE_THROWS_AS(projection_norm(dw, rng.gaussian_matrix(5, 5), 2), ShapeError);
}

TEST_CASE("autocorrelation decomposition sums to the direct product") {
  Rng rng(46);
  const Matrix w0 = rng.gaussian_matrix(5, 4);
  const Matrix dw = rng.gaussian_matrix(5, 4, 0.3);
  const Matrix z = rng.gaussian_matrix(6, 5);
  const AutocorrReport rep = autocorrelation_decomposition(w0, dw, z);

  const Matrix zw = Matrix::matmul(z, w0 + dw);
  const Matrix direct = Matrix::matmul(zw, zw.transposed());
  REQUIRE(max_abs_diff(rep.base_term + rep.adapter_term + rep.cross_term, direct) < 1e-10);
}

TEST_CASE("autocorrelation decomposition closed forms") {
  Rng rng(47);
  const Matrix w0 = rng.gaussian_matrix(4, 4);
  const Matrix z = rng.gaussian_matrix(3, 4);

  const AutocorrReport zero = autocorrelation_decomposition(w0, Matrix(4, 4), z);
  REQUIRE(max_abs(zero.adapter_term) == 0.0);
  REQUIRE(max_abs(zero.cross_term) == 0.0);
  REQUIRE(zero.off_diag_ratio == 0.0);

  // z = I, w0 = 0: R is exactly dw dw^T
  const Matrix dw = rng.gaussian_matrix(4, 4);
  const AutocorrReport pure =
      autocorrelation_decomposition(Matrix(4, 4), dw, Matrix::identity(4));
  REQUIRE(max_abs_diff(pure.adapter_term, Matrix::matmul(dw, dw.transposed())) < 1e-12);
  REQUIRE(max_abs(pure.base_term) == 0.0);

  REQUIRE_THROWS_AS(autocorrelation_decomposition(w0, dw, Matrix(3, 5)), ShapeError);
}

TEST_CASE("equal norms order frobenius truncation error by tail ratio") {
  Rng rng(48);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 6;
    const std::size_t r = 2;
    const SvdResult basis = svd(rng.gaussian_matrix(n, n));
    // two spectra with identical total energy, one more compact than the other
    std::vector<double> s1{2.0, 1.5, 0.1, 0.08, 0.05, 0.02};
    std::vector<double> s2 = s1;
    // move tail mass into the head for s1, preserving the total energy
    double tail_energy = 0.0;
    for (std::size_t i = r; i < n; ++i) tail_energy += s1[i] * s1[i];
    const double shift = 0.5 * tail_energy;
    s1[0] = std::sqrt(s1[0] * s1[0] + shift);
    for (std::size_t i = r; i < n; ++i) s1[i] *= std::sqrt(1.0 - shift / tail_energy);

    Matrix w1(n, n), w2(n, n);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          w1(i, j) += s1[t] * basis.u(i, t) * basis.v(j, t);
          w2(i, j) += s2[t] * basis.u(i, t) * basis.v(j, t);
        }
    REQUIRE(frobenius_norm(w1) == Catch::Approx(frobenius_norm(w2)).margin(1e-9));
    const SpreadReport r1 = spread_report(w1);
    const SpreadReport r2 = spread_report(w2);
    REQUIRE(r1.tail_energy_ratio(r) < r2.tail_energy_ratio(r));
    REQUIRE(reconstruction_error(w1, r, NormKind::Frobenius) <
            reconstruction_error(w2, r, NormKind::Frobenius));
    // exact algebraic identity: err^2 = ratio * |W|_F^2
    const double err = reconstruction_error(w1, r, NormKind::Frobenius);
    const double fro = frobenius_norm(w1);
    REQUIRE(err * err ==
            Catch::Approx(r1.tail_energy_ratio(r) * fro * fro).epsilon(1e-9));
  }
}

TEST_CASE("effective rank trace flattens training and eval records") {
  TrainTrace trace;
  trace.effective_ranks = {{3, 4}, {2, 4}};
  trace.soft_mask_means = {{0.4, 0.6}, {0.3, 0.5}};
  const auto rows = effective_rank_trace(trace);
  REQUIRE(rows.size() == 4);
  REQUIRE(rows[0].index == 0);
  REQUIRE(rows[1].layer == 1);
  REQUIRE(rows[2].effective_rank == 2);

  TrainTrace eval = trace;
  eval.timesteps = {20, 19};
  eval.timestep_ranks = {{5, 5}, {4, 4}};
  eval.timestep_soft_means = {{0.9, 0.9}, {0.8, 0.8}};
  const auto erows = effective_rank_trace(eval);
  REQUIRE(erows.size() == 4);
  REQUIRE(erows[0].index == 20);
  REQUIRE(erows[3].effective_rank == 4);

  REQUIRE_THROWS_AS(effective_rank_trace(TrainTrace{}), InvalidInput);
}
