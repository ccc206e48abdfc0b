#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "foura/matrix.hpp"
#include "foura/rng.hpp"
#include "foura/svd.hpp"
#include "support/oracles.hpp"

using namespace foura;

namespace {

void check_svd_invariants(const Matrix& m, const SvdResult& s) {
  const std::size_t k1 = m.rows();
  const std::size_t k2 = m.cols();
  REQUIRE(s.u.rows() == k1);
  REQUIRE(s.u.cols() == k1);
  REQUIRE(s.v.rows() == k2);
  REQUIRE(s.v.cols() == k2);
  REQUIRE(s.sigma.size() == std::min(k1, k2));

  const Matrix utu = Matrix::matmul(s.u.transposed(), s.u);
  const Matrix vtv = Matrix::matmul(s.v.transposed(), s.v);
  REQUIRE(max_abs_diff(utu, Matrix::identity(k1)) < 1e-9);
  REQUIRE(max_abs_diff(vtv, Matrix::identity(k2)) < 1e-9);

  for (std::size_t i = 0; i + 1 < s.sigma.size(); ++i) {
    REQUIRE(s.sigma[i] >= s.sigma[i + 1]);
  }
  for (double sv : s.sigma) REQUIRE(sv >= 0.0);

  Matrix rec(k1, k2);
  for (std::size_t t = 0; t < s.sigma.size(); ++t)
    for (std::size_t i = 0; i < k1; ++i)
      for (std::size_t j = 0; j < k2; ++j) rec(i, j) += s.sigma[t] * s.u(i, t) * s.v(j, t);
  REQUIRE(max_abs_diff(rec, m) < 1e-9);
}

}  // namespace

TEST_CASE("svd of a diagonal matrix") {
  const Matrix m = Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  const SvdResult s = svd(m);
  REQUIRE(s.sigma[0] == Catch::Approx(3.0).margin(1e-12));
  REQUIRE(s.sigma[1] == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(s.sigma[2] == Catch::Approx(1.0).margin(1e-12));
  // U and V equal the identity up to sign; the sign convention pins them
  REQUIRE(max_abs_diff(s.u, Matrix::identity(3)) < 1e-12);
  REQUIRE(max_abs_diff(s.v, Matrix::identity(3)) < 1e-12);
  check_svd_invariants(m, s);
}

TEST_CASE("svd of the identity") {
  const Matrix m = Matrix::identity(4);
  const SvdResult s = svd(m);
  for (double sv : s.sigma) REQUIRE(sv == Catch::Approx(1.0).margin(1e-12));
  check_svd_invariants(m, s);
}

TEST_CASE("svd singular values match Gram-matrix eigenvalues") {
  Rng rng(42);
  const Matrix m = rng.gaussian_matrix(8, 6);
  const SvdResult s = svd(m);
  check_svd_invariants(m, s);

  const Matrix gram = Matrix::matmul(m.transposed(), m);
  const std::vector<double> ev = oracles::symmetric_eigenvalues(gram);
  for (std::size_t i = 0; i < s.sigma.size(); ++i) {
    const double expected = std::sqrt(std::max(0.0, ev[i]));
    REQUIRE(s.sigma[i] == Catch::Approx(expected).epsilon(1e-8));
  }
}

TEST_CASE("svd invariants over seeded shapes") {
  Rng rng(7);
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{1, 1},
                      {5, 3},
                      {3, 5},
                      {12, 12},
                      {17, 4},
                      {4, 17}}) {
    const Matrix m = rng.gaussian_matrix(r, c);
    check_svd_invariants(m, svd(m));
  }
}

TEST_CASE("svd handles rank-deficient and zero matrices") {
  Matrix zero(5, 3);
  const SvdResult sz = svd(zero);
  for (double sv : sz.sigma) REQUIRE(sv == 0.0);
  check_svd_invariants(zero, sz);

  // rank-1 outer product
  Rng rng(9);
  const Matrix u = rng.gaussian_matrix(6, 1);
  const Matrix v = rng.gaussian_matrix(1, 4);
  const Matrix m = Matrix::matmul(u, v);
  const SvdResult s = svd(m);
  REQUIRE(s.sigma[0] > 0.0);
  for (std::size_t i = 1; i < s.sigma.size(); ++i) REQUIRE(s.sigma[i] < 1e-12 * s.sigma[0]);
  check_svd_invariants(m, s);
}

TEST_CASE("svd is deterministic and sign-fixed") {
  Rng rng(13);
  const Matrix m = rng.gaussian_matrix(7, 5);
  const SvdResult a = svd(m);
  const SvdResult b = svd(m);
  REQUIRE(a.u == b.u);
  REQUIRE(a.v == b.v);
  REQUIRE(a.sigma == b.sigma);
  for (std::size_t j = 0; j < a.u.cols(); ++j) {
    double best = 0.0;
    for (std::size_t i = 0; i < a.u.rows(); ++i)
      best = std::max(best, std::abs(a.u(i, j)));
    bool found_nonneg_max = false;
    for (std::size_t i = 0; i < a.u.rows(); ++i) {
      if (std::abs(a.u(i, j)) == best && a.u(i, j) >= 0.0) found_nonneg_max = true;
    }
    REQUIRE(found_nonneg_max);
  }
}

TEST_CASE("svd rejects non-finite input") {
  Matrix m(2, 2);
  m(0, 0) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(svd(m), InvalidInput);
  m(0, 0) = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(svd(m), InvalidInput);
  REQUIRE_THROWS_AS(spectral_norm(m), InvalidInput);
  REQUIRE_THROWS_AS(frobenius_norm(m), InvalidInput);
}

TEST_CASE("low_rank_approx truncates the spectrum") {
  const Matrix m = Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  REQUIRE(max_abs_diff(low_rank_approx(m, 3), m) < 1e-12);
  const Matrix r2 = low_rank_approx(m, 2);
  REQUIRE(max_abs_diff(r2, Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 0}})) < 1e-12);

  REQUIRE_THROWS_AS(low_rank_approx(m, 0), InvalidRank);
  REQUIRE_THROWS_AS(low_rank_approx(m, 4), InvalidRank);
}

TEST_CASE("low_rank_approx frobenius error equals trailing sigma mass") {
  Rng rng(21);
  const Matrix m = rng.gaussian_matrix(10, 10);
  const SvdResult s = svd(m);
  const Matrix approx = low_rank_approx(m, 4);
  double expected = 0.0;
  for (std::size_t i = 4; i < 10; ++i) expected += s.sigma[i] * s.sigma[i];
  expected = std::sqrt(expected);
  REQUIRE(frobenius_norm(m - approx) == Catch::Approx(expected).margin(1e-9));
}

TEST_CASE("reconstruction_error closed forms") {
  const Matrix m = Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
  REQUIRE(reconstruction_error(m, 2, NormKind::Spectral) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(reconstruction_error(m, 1, NormKind::Frobenius) ==
          Catch::Approx(std::sqrt(5.0)).margin(1e-12));
  REQUIRE_THROWS_AS(reconstruction_error(m, 3, NormKind::Spectral), InvalidRank);
  REQUIRE_THROWS_AS(reconstruction_error(m, 0, NormKind::Spectral), InvalidRank);
}

TEST_CASE("reconstruction_error spectral mode matches power iteration on the residual") {
  Rng rng(33);
  const Matrix m = rng.gaussian_matrix(12, 8);
  const Matrix residual = m - low_rank_approx(m, 3);
  const double oracle = oracles::power_iteration_spectral_norm(residual);
  REQUIRE(reconstruction_error(m, 3, NormKind::Spectral) ==
          Catch::Approx(oracle).epsilon(1e-7));
}

TEST_CASE("norms: closed forms and svd consistency") {
  REQUIRE(frobenius_norm(Matrix::from_rows({{3, 4}})) == Catch::Approx(5.0).margin(1e-12));
  REQUIRE(spectral_norm(Matrix::identity(6)) == Catch::Approx(1.0).margin(1e-12));

  Rng rng(55);
  const Matrix m = rng.gaussian_matrix(9, 7);
  REQUIRE(spectral_norm(m) == Catch::Approx(svd(m).sigma[0]).epsilon(1e-9));
}

TEST_CASE("Eckart-Young property over seeded matrices") {
  Rng rng(101);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t r = 2 + rng.next_u64() % 31;
    const std::size_t c = 2 + rng.next_u64() % 31;
    const Matrix m = rng.gaussian_matrix(r, c);
    const SvdResult s = svd(m);
    const std::size_t kmin = std::min(r, c);
    for (std::size_t rank = 1; rank < kmin; ++rank) {
      const Matrix residual = m - low_rank_approx(m, rank);
      REQUIRE(spectral_norm(residual) == Catch::Approx(s.sigma[rank]).margin(1e-8));
    }
  }
}

TEST_CASE("dominated trailing spectra give lower truncation error") {
  Rng rng(202);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 6;
    const std::size_t r = 2;
    // shared singular bases, shared top-r values, dominated tails
    const SvdResult basis = svd(rng.gaussian_matrix(n, n));
    std::vector<double> s1(n), s2(n);
    double prev1 = 4.0, prev2 = 4.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i < r) {
        s1[i] = s2[i] = prev1 = prev2 = prev1 * (0.7 + 0.2 * rng.uniform());
      } else {
        s2[i] = prev2 = std::min(prev2, s2[i - 1]) * (0.5 + 0.3 * rng.uniform());
        s1[i] = prev1 = s2[i] * (0.2 + 0.5 * rng.uniform());  // strictly smaller tail
      }
    }
    Matrix w1(n, n), w2(n, n);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          w1(i, j) += s1[t] * basis.u(i, t) * basis.v(j, t);
          w2(i, j) += s2[t] * basis.u(i, t) * basis.v(j, t);
        }
    REQUIRE(reconstruction_error(w1, r, NormKind::Spectral) <
            reconstruction_error(w2, r, NormKind::Spectral));
  }
}

TEST_CASE("matrix shape validation") {
  REQUIRE_THROWS_AS(Matrix(0, 3), InvalidInput);
  REQUIRE_THROWS_AS(Matrix(2, 2, std::vector<double>{1.0}), ShapeError);
  const Matrix a(2, 3);
  const Matrix b(3, 3);
  REQUIRE_THROWS_AS(a + b, ShapeError);
  REQUIRE_THROWS_AS(Matrix::matmul(a, a), ShapeError);
}
