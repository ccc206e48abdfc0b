#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "foura/errors.hpp"
#include "foura/matrix.hpp"

namespace foura {

enum class TransformKind { None, Dft, Dct };
enum class Axis { Embedding, Token };

// Frequency-domain image of a real activation matrix. For the DCT the
// imaginary plane is exactly zero.
struct Spectrum {
  TransformKind kind = TransformKind::Dft;
  Axis axis = Axis::Embedding;
  Matrix re;
  Matrix im;
};

namespace detail {

constexpr double kPi = 3.14159265358979323846264338327950288;

// Unitary DFT kernel pair: c[f][k] = cos(2*pi*f*k/K)/sqrt(K) and
// s[f][k] = sin(2*pi*f*k/K)/sqrt(K). Both are symmetric in (f, k).
struct DftKernel {
  Matrix c;
  Matrix s;
};

inline DftKernel dft_kernel(std::size_t k) {
  DftKernel kr{Matrix(k, k), Matrix(k, k)};
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(k));
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t n = 0; n < k; ++n) {
      const double angle = 2.0 * kPi * static_cast<double>(f) * static_cast<double>(n) /
                           static_cast<double>(k);
      kr.c(f, n) = std::cos(angle) * inv_sqrt;
      kr.s(f, n) = std::sin(angle) * inv_sqrt;
    }
  }
  return kr;
}

// Orthonormal DCT-II kernel: t[f][k] = s(f) * cos(pi*f*(2k+1)/(2K)) with
// s(0) = sqrt(1/K) and s(f>=1) = sqrt(2/K). Used for the inverse path; the
// forward path goes through the double-length even extension.
inline Matrix dct_kernel(std::size_t k) {
  Matrix t(k, k);
  const double kd = static_cast<double>(k);
  for (std::size_t f = 0; f < k; ++f) {
    const double scale = (f == 0) ? std::sqrt(1.0 / kd) : std::sqrt(2.0 / kd);
    for (std::size_t n = 0; n < k; ++n) {
      t(f, n) = scale * std::cos(kPi * static_cast<double>(f) *
                                 (2.0 * static_cast<double>(n) + 1.0) / (2.0 * kd));
    }
  }
  return t;
}

// Orthonormal DCT-II of one length-K sequence, computed by building the
// double-length even extension, taking its DFT, and peeling the phase off the
// first K bins.
inline void dct_via_even_extension(const std::vector<double>& in, std::vector<double>& out) {
  const std::size_t k = in.size();
  const std::size_t k2 = 2 * k;
  std::vector<double> ext(k2);
  for (std::size_t n = 0; n < k; ++n) {
    ext[n] = in[n];
    ext[k2 - 1 - n] = in[n];
  }
  out.resize(k);
  const double kd = static_cast<double>(k);
  for (std::size_t f = 0; f < k; ++f) {
    double yre = 0.0;
    double yim = 0.0;
    for (std::size_t n = 0; n < k2; ++n) {
      const double angle = 2.0 * kPi * static_cast<double>(f) * static_cast<double>(n) /
                           static_cast<double>(k2);
      yre += ext[n] * std::cos(angle);
      yim -= ext[n] * std::sin(angle);
    }
    // Y(f) = exp(j*pi*f/2K) * 2 * C(f) with C the raw cosine sum; recover C
    // and apply the orthonormal scaling.
    const double phase = kPi * static_cast<double>(f) / (2.0 * kd);
    const double craw = 0.5 * (yre * std::cos(phase) + yim * std::sin(phase));
    const double scale = (f == 0) ? std::sqrt(1.0 / kd) : std::sqrt(2.0 / kd);
    out[f] = scale * craw;
  }
}

// Apply kernel along the embedding axis (rows transformed): out = z * t^T.
inline Matrix apply_rows(const Matrix& z, const Matrix& t) {
  Matrix out(z.rows(), t.rows());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t f = 0; f < t.rows(); ++f) {
      double acc = 0.0;
      for (std::size_t n = 0; n < z.cols(); ++n) acc += z(i, n) * t(f, n);
      out(i, f) = acc;
    }
  return out;
}

// Apply kernel along the token axis (columns transformed): out = t * z.
inline Matrix apply_cols(const Matrix& t, const Matrix& z) {
  return Matrix::matmul(t, z);
}

inline std::size_t axis_length(const Matrix& z, Axis axis) {
  return axis == Axis::Embedding ? z.cols() : z.rows();
}

}  // namespace detail

// Normalized forward transform along the chosen axis of a token x embedding
// matrix. The DFT uses the unitary 1/sqrt(K) convention; the DCT is the
// orthonormal DCT-II obtained from the double-length even extension.
inline Spectrum forward(const Matrix& z, TransformKind kind, Axis axis) {
  if (z.empty()) throw InvalidInput("forward: empty input");
  if (!z.is_finite()) throw InvalidInput("forward: non-finite input");
  if (kind == TransformKind::None) throw InvalidInput("forward: no transform kind");

  Spectrum sp;
  sp.kind = kind;
  sp.axis = axis;
  const std::size_t k = detail::axis_length(z, axis);

  if (kind == TransformKind::Dft) {
    const detail::DftKernel kr = detail::dft_kernel(k);
    if (axis == Axis::Embedding) {
      sp.re = detail::apply_rows(z, kr.c);
      sp.im = detail::apply_rows(z, kr.s) * -1.0;
    } else {
      sp.re = detail::apply_cols(kr.c, z);
      sp.im = detail::apply_cols(kr.s, z) * -1.0;
    }
    return sp;
  }

  // DCT path: transform each 1-D slice through the even extension.
  sp.re = Matrix(z.rows(), z.cols());
  sp.im = Matrix(z.rows(), z.cols());
  std::vector<double> slice(k);
  std::vector<double> coeff;
  if (axis == Axis::Embedding) {
    for (std::size_t i = 0; i < z.rows(); ++i) {
      for (std::size_t n = 0; n < k; ++n) slice[n] = z(i, n);
      detail::dct_via_even_extension(slice, coeff);
      for (std::size_t f = 0; f < k; ++f) sp.re(i, f) = coeff[f];
    }
  } else {
    for (std::size_t j = 0; j < z.cols(); ++j) {
      for (std::size_t n = 0; n < k; ++n) slice[n] = z(n, j);
      detail::dct_via_even_extension(slice, coeff);
      for (std::size_t f = 0; f < k; ++f) sp.re(f, j) = coeff[f];
    }
  }
  return sp;
}

// Inverse transform. The DFT path returns the real part of the complex
// inverse; a spectrum with conjugate symmetry inverts to its source exactly.
inline Matrix inverse(const Spectrum& s) {
  if (s.re.empty()) throw InvalidInput("inverse: empty spectrum");
  if (!s.re.same_shape(s.im)) {
    throw InvalidInput("inverse: re/im shape mismatch " + s.re.shape_str() + " vs " +
                       s.im.shape_str());
  }
  if (s.kind == TransformKind::Dct) {
    if (max_abs(s.im) != 0.0) throw InvalidInput("inverse: dct spectrum has nonzero im");
    const std::size_t k = detail::axis_length(s.re, s.axis);
    const Matrix t = detail::dct_kernel(k);
    // forward was X = T z (token) or z T^T (embedding); invert with T^T.
    return s.axis == Axis::Embedding ? detail::apply_rows(s.re, t.transposed())
                                     : detail::apply_cols(t.transposed(), s.re);
  }
  if (s.kind != TransformKind::Dft) throw InvalidInput("inverse: bad spectrum kind");
  const std::size_t k = detail::axis_length(s.re, s.axis);
  const detail::DftKernel kr = detail::dft_kernel(k);
  // Re(F^-1 X) = Xre * C - Xim * S (kernels symmetric).
  if (s.axis == Axis::Embedding) {
    return detail::apply_rows(s.re, kr.c) - detail::apply_rows(s.im, kr.s);
  }
  return detail::apply_cols(kr.c, s.re) - detail::apply_cols(kr.s, s.im);
}

// Stacked representation used by the adapter pipeline and the autodiff tape:
// the DCT result is a plain real matrix, the DFT result stacks the real plane
// on top of the imaginary plane (2d x k). Right-multiplications then act on
// both planes at once, which is exactly "real weights applied independently
// to the real and imaginary parts". None passes the input through.
inline Matrix stacked_forward(const Matrix& z, TransformKind kind, Axis axis) {
  if (kind == TransformKind::None) return z;
  const Spectrum sp = forward(z, kind, axis);
  if (kind == TransformKind::Dct) return sp.re;
  Matrix out(2 * sp.re.rows(), sp.re.cols());
  for (std::size_t i = 0; i < sp.re.rows(); ++i)
    for (std::size_t j = 0; j < sp.re.cols(); ++j) {
      out(i, j) = sp.re(i, j);
      out(sp.re.rows() + i, j) = sp.im(i, j);
    }
  return out;
}

// Inverse of the stacked representation, returning the real part on the DFT
// path. stacked_forward and stacked_inverse are mutual adjoints as linear
// maps (both transforms are unitary), which the tape relies on.
inline Matrix stacked_inverse(const Matrix& x, TransformKind kind, Axis axis) {
  if (kind == TransformKind::None) return x;
  Spectrum sp;
  sp.kind = kind;
  sp.axis = axis;
  if (kind == TransformKind::Dct) {
    sp.re = x;
    sp.im = Matrix(x.rows(), x.cols());
    return inverse(sp);
  }
  if (x.rows() % 2 != 0) {
    throw InvalidInput("stacked_inverse: dft input must stack re over im");
  }
  const std::size_t d = x.rows() / 2;
  sp.re = Matrix(d, x.cols());
  sp.im = Matrix(d, x.cols());
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      sp.re(i, j) = x(i, j);
      sp.im(i, j) = x(d + i, j);
    }
  return inverse(sp);
}

}  // namespace foura
