#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "foura/errors.hpp"
#include "foura/matrix.hpp"
#include "foura/transforms.hpp"

namespace foura {

enum class GateMode { Soft, HardAdaptive, Frozen };

// Learned rank gate: a two-layer r->r->r MLP followed by a sigmoid produces a
// soft mask over the low-rank channels; thresholding gives the hard mask.
struct GateState {
  Matrix g1;
  Matrix g2;
  double threshold = 0.5;
  GateMode mode = GateMode::Soft;
  std::vector<double> frozen_mask;  // present iff mode == Frozen
  double entropy_weight = 1e-3;
};

struct MaskReport {
  std::vector<double> soft_mask;
  std::vector<int> hard_mask;
  std::size_t effective_rank = 0;
};

// One adapted linear layer: frozen base weights plus a trainable low-rank
// branch, optionally operating in a frequency domain with a rank gate.
struct AdapterLayer {
  Matrix w0;  // k1 x k2, frozen
  Matrix a;   // r x k1, down projection
  Matrix b;   // k2 x r, up projection
  std::size_t rank = 0;
  double alpha = 1.0;
  TransformKind transform = TransformKind::None;
  Axis axis = Axis::Embedding;
  std::optional<GateState> gate;

  std::size_t k1() const { return w0.rows(); }
  std::size_t k2() const { return w0.cols(); }
};

inline void validate_layer(const AdapterLayer& l) {
  if (l.a.rows() != l.rank || l.a.cols() != l.k1()) {
    throw ShapeError("adapter a must be rank x k1, got " + l.a.shape_str());
  }
  if (l.b.rows() != l.k2() || l.b.cols() != l.rank) {
    throw ShapeError("adapter b must be k2 x rank, got " + l.b.shape_str());
  }
  if (!std::isfinite(l.alpha)) throw InvalidInput("adapter alpha must be finite");
  if (l.transform == TransformKind::None && l.gate.has_value()) {
    throw InvalidGateState("plain LoRA layer cannot carry a gate");
  }
  if (l.gate) {
    const GateState& g = *l.gate;
    if (g.g1.rows() != l.rank || g.g1.cols() != l.rank ||
        g.g2.rows() != l.rank || g.g2.cols() != l.rank) {
      throw ShapeError("gate MLP weights must be rank x rank");
    }
    if (!(g.threshold > 0.0 && g.threshold < 1.0)) {
      throw InvalidGateState("gate threshold must lie in (0,1)");
    }
    if (g.mode == GateMode::Frozen) {
      if (g.frozen_mask.size() != l.rank) {
        throw InvalidGateState("frozen gate needs a frozen_mask of length rank");
      }
      for (double v : g.frozen_mask) {
        if (v != 0.0 && v != 1.0) throw InvalidGateState("frozen_mask entries must be 0 or 1");
      }
    }
  }
}

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Low-rank representation of the input in the layer's working domain,
// in the stacked re/im form (d x r for dct/none, 2d x r for dft).
inline Matrix stacked_zlr(const AdapterLayer& l, const Matrix& z_in) {
  const Matrix x = stacked_forward(z_in, l.transform, l.axis);
  return Matrix::matmul(x, l.a.transposed());
}

// The low-rank branch z -> F^-1(B diag(scale) A F(z)) at explicit per-channel
// scales (already including alpha).
inline Matrix adapter_branch(const AdapterLayer& l, const Matrix& z_in,
                             const std::vector<double>& scale) {
  Matrix zlr = stacked_zlr(l, z_in);
  for (std::size_t i = 0; i < zlr.rows(); ++i)
    for (std::size_t j = 0; j < zlr.cols(); ++j) zlr(i, j) *= scale[j];
  const Matrix y = Matrix::matmul(zlr, l.b.transposed());
  return stacked_inverse(y, l.transform, l.axis);
}

}  // namespace detail

// Evaluate the gate on a low-rank representation. Tokens are mean-pooled, the
// pooled vector runs through the gate MLP, and the sigmoid output is
// thresholded into the hard mask. Frozen gates ignore the input entirely.
inline MaskReport gate(const GateState& gs, const Matrix& z_lr) {
  const std::size_t r = gs.g1.rows();
  if (gs.g1.cols() != r || gs.g2.rows() != r || gs.g2.cols() != r) {
    throw ShapeError("gate MLP weights must be square and equally sized");
  }
  MaskReport rep;
  if (gs.mode == GateMode::Frozen) {
    if (gs.frozen_mask.size() != r) {
      throw InvalidGateState("frozen gate evaluated without frozen_mask");
    }
    rep.soft_mask = gs.frozen_mask;
    rep.hard_mask.reserve(r);
    for (double v : gs.frozen_mask) rep.hard_mask.push_back(v > gs.threshold ? 1 : 0);
  } else {
    if (z_lr.cols() != r) {
      throw ShapeError("gate input has " + std::to_string(z_lr.cols()) +
                       " channels, expected " + std::to_string(r));
    }
    std::vector<double> v(r, 0.0);
    for (std::size_t i = 0; i < z_lr.rows(); ++i)
      for (std::size_t j = 0; j < r; ++j) v[j] += z_lr(i, j);
    const double inv_rows = 1.0 / static_cast<double>(z_lr.rows());
    for (double& x : v) x *= inv_rows;

    std::vector<double> h(r, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < r; ++j) acc += gs.g1(i, j) * v[j];
      h[i] = std::tanh(acc);
    }
    rep.soft_mask.resize(r);
    rep.hard_mask.resize(r);
    for (std::size_t i = 0; i < r; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < r; ++j) acc += gs.g2(i, j) * h[j];
      rep.soft_mask[i] = detail::sigmoid(acc);
      rep.hard_mask[i] = rep.soft_mask[i] > gs.threshold ? 1 : 0;
    }
  }
  rep.effective_rank = 0;
  for (int m : rep.hard_mask) rep.effective_rank += static_cast<std::size_t>(m);
  return rep;
}

// z_in * W0 + alpha * (z_in * A^T) * B^T, tokens as rows. No transform, no gate.
inline Matrix lora_forward(const AdapterLayer& layer, const Matrix& z_in) {
  validate_layer(layer);
  if (layer.transform != TransformKind::None) {
    throw InvalidInput("lora_forward requires transform = none");
  }
  if (z_in.cols() != layer.k1()) {
    throw ShapeError("lora_forward: input is " + z_in.shape_str() + ", layer expects k1 = " +
                     std::to_string(layer.k1()));
  }
  Matrix out = Matrix::matmul(z_in, layer.w0);
  const Matrix lr = Matrix::matmul(Matrix::matmul(z_in, layer.a.transposed()),
                                   layer.b.transposed());
  out += layer.alpha * lr;
  return out;
}

// Gated frequency-domain forward pass. The gate sees the low-rank
// representation (both re/im planes for the DFT); the channel scaling folds
// alpha with the mask selected by the gate mode.
inline std::pair<Matrix, MaskReport> foura_forward(const AdapterLayer& layer,
                                                   const Matrix& z_in) {
  validate_layer(layer);
  if (layer.transform == TransformKind::None) {
    throw InvalidInput("foura_forward requires a frequency transform");
  }
  if (z_in.cols() != layer.k1()) {
    throw ShapeError("foura_forward: input is " + z_in.shape_str() + ", layer expects k1 = " +
                     std::to_string(layer.k1()));
  }
  const Matrix zlr = detail::stacked_zlr(layer, z_in);

  MaskReport rep;
  std::vector<double> scale(layer.rank, layer.alpha);
  if (layer.gate) {
    rep = gate(*layer.gate, zlr);
    switch (layer.gate->mode) {
      case GateMode::Soft:
        for (std::size_t j = 0; j < layer.rank; ++j) scale[j] *= rep.soft_mask[j];
        break;
      case GateMode::HardAdaptive:
        for (std::size_t j = 0; j < layer.rank; ++j) scale[j] *= rep.hard_mask[j];
        break;
      case GateMode::Frozen:
        for (std::size_t j = 0; j < layer.rank; ++j) scale[j] *= layer.gate->frozen_mask[j];
        break;
    }
  } else {
    rep.soft_mask.assign(layer.rank, 1.0);
    rep.hard_mask.assign(layer.rank, 1);
    rep.effective_rank = layer.rank;
  }

  Matrix zlr_scaled = zlr;
  for (std::size_t i = 0; i < zlr_scaled.rows(); ++i)
    for (std::size_t j = 0; j < layer.rank; ++j) zlr_scaled(i, j) *= scale[j];
  const Matrix y = Matrix::matmul(zlr_scaled, layer.b.transposed());
  Matrix out = Matrix::matmul(z_in, layer.w0) + stacked_inverse(y, layer.transform, layer.axis);
  return {std::move(out), std::move(rep)};
}

// Assemble the k1 x k2 matrix of the masked low-rank branch by applying it to
// every basis row. For transform = none this reproduces alpha * A^T diag(m) B^T.
inline Matrix materialize_delta_w(const AdapterLayer& layer, const std::vector<double>& mask) {
  validate_layer(layer);
  if (mask.size() != layer.rank) {
    throw ShapeError("materialize_delta_w: mask length " + std::to_string(mask.size()) +
                     " != rank " + std::to_string(layer.rank));
  }
  std::vector<double> scale(layer.rank);
  for (std::size_t j = 0; j < layer.rank; ++j) scale[j] = layer.alpha * mask[j];

  Matrix dw(layer.k1(), layer.k2());
  Matrix basis(1, layer.k1());
  for (std::size_t i = 0; i < layer.k1(); ++i) {
    for (double& v : basis.data()) v = 0.0;
    basis(0, i) = 1.0;
    const Matrix row = detail::adapter_branch(layer, basis, scale);
    for (std::size_t j = 0; j < layer.k2(); ++j) dw(i, j) = row(0, j);
  }
  return dw;
}

// Binary entropy of the soft mask, summed over channels; drives masks toward
// 0/1 when added to the training loss.
inline double gate_entropy_penalty(const std::vector<double>& soft_mask) {
  double acc = 0.0;
  for (double m : soft_mask) {
    if (m < 0.0 || m > 1.0) {
      throw InvalidInput("gate_entropy_penalty: mask entry outside [0,1]");
    }
    if (m > 0.0) acc -= m * std::log(m);
    if (m < 1.0) acc -= (1.0 - m) * std::log(1.0 - m);
  }
  return acc;
}

// Capture a frozen mask as the elementwise majority of hard masks over a
// calibration batch (ties round up to keep the channel). Switches the gate to
// frozen mode.
inline void freeze_gate(AdapterLayer& layer, std::span<const Matrix> calibration) {
  validate_layer(layer);
  if (!layer.gate) throw InvalidGateState("freeze_gate: layer has no gate");
  if (calibration.empty()) throw InvalidInput("freeze_gate: empty calibration batch");
  std::vector<std::size_t> votes(layer.rank, 0);
  for (const Matrix& z : calibration) {
    const MaskReport rep = gate(*layer.gate, detail::stacked_zlr(layer, z));
    for (std::size_t j = 0; j < layer.rank; ++j)
      votes[j] += static_cast<std::size_t>(rep.hard_mask[j]);
  }
  std::vector<double> frozen(layer.rank, 0.0);
  for (std::size_t j = 0; j < layer.rank; ++j) {
    frozen[j] = (2 * votes[j] >= calibration.size()) ? 1.0 : 0.0;
  }
  layer.gate->mode = GateMode::Frozen;
  layer.gate->frozen_mask = std::move(frozen);
}

}  // namespace foura
