#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "foura/errors.hpp"
#include "foura/matrix.hpp"

namespace foura {

// Full SVD of a k1 x k2 matrix: u is k1 x k1, v is k2 x k2, sigma holds the
// min(k1,k2) singular values in descending order.
struct SvdResult {
  Matrix u;
  std::vector<double> sigma;
  Matrix v;
};

enum class NormKind { Spectral, Frobenius };

namespace detail {

inline double column_dot(const Matrix& m, std::size_t p, std::size_t q) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, p) * m(i, q);
  return s;
}

inline void rotate_columns(Matrix& m, std::size_t p, std::size_t q, double cs, double sn) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double vp = m(i, p);
    const double vq = m(i, q);
    m(i, p) = cs * vp - sn * vq;
    m(i, q) = sn * vp + cs * vq;
  }
}

// One-sided Jacobi: orthogonalize the columns of b in place, accumulating the
// right-hand rotations into v. Runs sweeps until the largest normalized
// off-diagonal Gram entry drops below 1e-12.
inline void jacobi_orthogonalize(Matrix& b, Matrix& v) {
  const std::size_t n = b.cols();
  constexpr double kTol = 1e-12;
  constexpr int kMaxSweeps = 128;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double app = column_dot(b, p, p);
        const double aqq = column_dot(b, q, q);
        const double apq = column_dot(b, p, q);
        const double denom = std::sqrt(app * aqq);
        if (denom <= 0.0 || std::abs(apq) <= kTol * denom) continue;
        off = std::max(off, std::abs(apq) / denom);
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        rotate_columns(b, p, q, cs, sn);
        rotate_columns(v, p, q, cs, sn);
      }
    }
    if (off < kTol) break;
  }
}

// Fill every still-empty column of u with unit vectors orthogonal to the
// columns already present. Each slot takes the standard basis vector with the
// largest residual against the current columns (deterministic; the residual of
// e_c is 1 - sum over filled columns j of u(c,j)^2), Gram-Schmidt twice.
inline void complete_orthonormal_basis(Matrix& u, const std::vector<bool>& filled) {
  const std::size_t m = u.rows();
  std::vector<std::size_t> have;
  std::vector<std::size_t> need;
  for (std::size_t j = 0; j < u.cols(); ++j) {
    (filled[j] ? have : need).push_back(j);
  }
  for (std::size_t slot : need) {
    std::size_t best_c = 0;
    double best_res = -1.0;
    for (std::size_t c = 0; c < m; ++c) {
      double proj2 = 0.0;
      for (std::size_t j : have) proj2 += u(c, j) * u(c, j);
      const double res = 1.0 - proj2;
      if (res > best_res) {
        best_res = res;
        best_c = c;
      }
    }
    std::vector<double> w(m, 0.0);
    w[best_c] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j : have) {
        double proj = 0.0;
        for (std::size_t i = 0; i < m; ++i) proj += u(i, j) * w[i];
        for (std::size_t i = 0; i < m; ++i) w[i] -= proj * u(i, j);
      }
    }
    double norm2 = 0.0;
    for (double x : w) norm2 += x * x;
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t i = 0; i < m; ++i) u(i, slot) = w[i] * inv;
    have.push_back(slot);
  }
}

// Sign convention: the largest-magnitude entry of each left singular vector is
// made non-negative, flipping the paired right singular vector along with it.
inline void fix_signs(Matrix& u, Matrix& v, std::size_t paired) {
  for (std::size_t j = 0; j < u.cols(); ++j) {
    double best = 0.0;
    std::size_t at = 0;
    for (std::size_t i = 0; i < u.rows(); ++i) {
      const double a = std::abs(u(i, j));
      if (a > best) {
        best = a;
        at = i;
      }
    }
    if (u(at, j) < 0.0) {
      for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
      if (j < paired) {
        for (std::size_t i = 0; i < v.rows(); ++i) v(i, j) = -v(i, j);
      }
    }
  }
}

}  // namespace detail

// One-sided Jacobi SVD. Deterministic for a fixed input; accurate to ~1e-12
// relative at the dense sizes this workbench handles.
inline SvdResult svd(const Matrix& m) {
  if (m.empty()) throw InvalidInput("svd: empty matrix");
  if (!m.is_finite()) throw InvalidInput("svd: non-finite input");

  const bool transposed = m.rows() < m.cols();
  Matrix b = transposed ? m.transposed() : m;
  const std::size_t big = b.rows();
  const std::size_t small = b.cols();

  Matrix vb = Matrix::identity(small);
  detail::jacobi_orthogonalize(b, vb);

  std::vector<double> norms(small);
  for (std::size_t j = 0; j < small; ++j)
    norms[j] = std::sqrt(detail::column_dot(b, j, j));
  std::vector<std::size_t> order(small);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return norms[a] > norms[c]; });

  const double sigma_max = norms.empty() ? 0.0 : norms[order[0]];
  const double rank_tol = sigma_max * static_cast<double>(big) * 1e-15;

  std::vector<double> sigma(small);
  Matrix ub(big, big);
  Matrix vfull(small, small);
  std::vector<bool> filled(big, false);
  for (std::size_t j = 0; j < small; ++j) {
    const std::size_t src = order[j];
    sigma[j] = norms[src];
    for (std::size_t i = 0; i < small; ++i) vfull(i, j) = vb(i, src);
    if (sigma[j] > rank_tol && sigma[j] > 0.0) {
      const double inv = 1.0 / sigma[j];
      for (std::size_t i = 0; i < big; ++i) ub(i, j) = b(i, src) * inv;
      filled[j] = true;
    }
    // otherwise the direction is numerically void; completion fills it below
  }
  detail::complete_orthonormal_basis(ub, filled);

  SvdResult r;
  if (transposed) {
    r.u = std::move(vfull);
    r.v = std::move(ub);
  } else {
    r.u = std::move(ub);
    r.v = std::move(vfull);
  }
  r.sigma = std::move(sigma);
  detail::fix_signs(r.u, r.v, r.sigma.size());
  return r;
}

// U * diag(sigma_1..sigma_r, 0..) * V^T.
inline Matrix low_rank_approx(const Matrix& m, std::size_t r) {
  const std::size_t k = std::min(m.rows(), m.cols());
  if (r < 1 || r > k) {
    throw InvalidRank("low_rank_approx: rank " + std::to_string(r) +
                      " outside [1, " + std::to_string(k) + "]");
  }
  const SvdResult s = svd(m);
  Matrix out(m.rows(), m.cols());
  for (std::size_t t = 0; t < r; ++t) {
    const double sv = s.sigma[t];
    if (sv == 0.0) continue;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      const double ui = s.u(i, t) * sv;
      if (ui == 0.0) continue;
      for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) += ui * s.v(j, t);
    }
  }
  return out;
}

// Eckart-Young residual of the best rank-r approximation: sigma_{r+1} in the
// spectral norm, sqrt(sum of squared trailing singular values) in Frobenius.
inline double reconstruction_error(const Matrix& m, std::size_t r, NormKind norm) {
  const std::size_t k = std::min(m.rows(), m.cols());
  if (r < 1 || r >= k) {
    throw InvalidRank("reconstruction_error: rank " + std::to_string(r) +
                      " leaves no residual for min dim " + std::to_string(k));
  }
  const SvdResult s = svd(m);
  if (norm == NormKind::Spectral) return s.sigma[r];
  double acc = 0.0;
  for (std::size_t i = r; i < k; ++i) acc += s.sigma[i] * s.sigma[i];
  return std::sqrt(acc);
}

inline double spectral_norm(const Matrix& m) {
  if (!m.is_finite()) throw InvalidInput("spectral_norm: non-finite input");
  return svd(m).sigma.front();
}

}  // namespace foura
