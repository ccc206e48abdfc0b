#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "foura/errors.hpp"
#include "foura/matrix.hpp"
#include "foura/transforms.hpp"

namespace foura {
namespace ad {

enum class Op {
  Leaf,
  MatMul,
  Add,
  Scale,
  Tanh,
  Sigmoid,
  Diag,
  MeanPoolRows,
  TransformFwd,
  TransformInv,
  HardMaskSte,
  MseLoss,
  EntropyPenalty,
};

struct Node {
  Op op = Op::Leaf;
  int a = -1;
  int b = -1;
  double scalar = 0.0;  // Scale factor or STE threshold
  TransformKind kind = TransformKind::None;
  Axis axis = Axis::Embedding;
  Matrix value;
  bool trainable = false;
};

// Define-by-run reverse-mode tape over dense matrices. Values are computed
// eagerly when nodes are recorded; backward() walks the recording in reverse.
class Tape {
 public:
  int leaf(Matrix value, bool trainable = false) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.trainable = trainable;
    return push(std::move(n));
  }

  int matmul(int a, int b) {
    Node n;
    n.op = Op::MatMul;
    n.a = a;
    n.b = b;
    n.value = Matrix::matmul(val(a), val(b));
    return push(std::move(n));
  }

  int add(int a, int b) {
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.value = val(a) + val(b);
    return push(std::move(n));
  }

  int scale(int a, double s) {
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.scalar = s;
    n.value = val(a) * s;
    return push(std::move(n));
  }

  int tanh(int a) {
    Node n;
    n.op = Op::Tanh;
    n.a = a;
    n.value = val(a);
    for (double& v : n.value.data()) v = std::tanh(v);
    return push(std::move(n));
  }

  int sigmoid(int a) {
    Node n;
    n.op = Op::Sigmoid;
    n.a = a;
    n.value = val(a);
    for (double& v : n.value.data()) v = stable_sigmoid(v);
    return push(std::move(n));
  }

  // Row vector (1 x r) -> diagonal matrix (r x r).
  int diag(int a) {
    const Matrix& m = val(a);
    if (m.rows() != 1) throw ShapeError("diag expects a 1 x r row vector");
    Node n;
    n.op = Op::Diag;
    n.a = a;
    n.value = Matrix(m.cols(), m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) n.value(j, j) = m(0, j);
    return push(std::move(n));
  }

  // Column means: d x r -> 1 x r.
  int mean_pool_rows(int a) {
    const Matrix& m = val(a);
    Node n;
    n.op = Op::MeanPoolRows;
    n.a = a;
    n.value = Matrix(1, m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) n.value(0, j) += m(i, j);
    const double inv = 1.0 / static_cast<double>(m.rows());
    for (double& v : n.value.data()) v *= inv;
    return push(std::move(n));
  }

  int transform_fwd(int a, TransformKind kind, Axis axis) {
    Node n;
    n.op = Op::TransformFwd;
    n.a = a;
    n.kind = kind;
    n.axis = axis;
    n.value = stacked_forward(val(a), kind, axis);
    return push(std::move(n));
  }

  int transform_inv(int a, TransformKind kind, Axis axis) {
    Node n;
    n.op = Op::TransformInv;
    n.a = a;
    n.kind = kind;
    n.axis = axis;
    n.value = stacked_inverse(val(a), kind, axis);
    return push(std::move(n));
  }

  // Straight-through threshold: forward emits the binary mask, backward
  // passes the incoming gradient unchanged.
  int hard_mask_ste(int a, double tau) {
    Node n;
    n.op = Op::HardMaskSte;
    n.a = a;
    n.scalar = tau;
    n.value = val(a);
    for (double& v : n.value.data()) v = v > tau ? 1.0 : 0.0;
    return push(std::move(n));
  }

  // Mean squared error over all elements, as a 1 x 1 node.
  int mse_loss(int a, int target) {
    const Matrix& x = val(a);
    const Matrix& t = val(target);
    if (!x.same_shape(t)) {
      throw ShapeError("mse_loss shape mismatch: " + x.shape_str() + " vs " + t.shape_str());
    }
    Node n;
    n.op = Op::MseLoss;
    n.a = a;
    n.b = target;
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x.data()[i] - t.data()[i];
      acc += d * d;
    }
    n.value = Matrix(1, 1);
    n.value(0, 0) = acc / static_cast<double>(x.size());
    return push(std::move(n));
  }

  // Binary entropy summed over all entries, as a 1 x 1 node. Inputs are
  // expected in [0,1] (sigmoid outputs).
  int entropy_penalty(int a) {
    const Matrix& m = val(a);
    Node n;
    n.op = Op::EntropyPenalty;
    n.a = a;
    double acc = 0.0;
    for (double v : m.data()) {
      if (v > 0.0) acc -= v * std::log(v);
      if (v < 1.0) acc -= (1.0 - v) * std::log(1.0 - v);
    }
    n.value = Matrix(1, 1);
    n.value(0, 0) = acc;
    return push(std::move(n));
  }

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  const Matrix& grad(int id) const { return grads_[static_cast<std::size_t>(id)]; }

  bool trainable(int id) const { return nodes_[static_cast<std::size_t>(id)].trainable; }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss node; gradients of every node are
  // available via grad() afterwards.
  void backward(int loss_id) {
    const Matrix& loss = val(loss_id);
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw InvalidInput("backward expects a 1 x 1 loss node");
    }
    grads_.assign(nodes_.size(), Matrix());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      grads_[i] = Matrix(nodes_[i].value.rows(), nodes_[i].value.cols());
    }
    grads_[static_cast<std::size_t>(loss_id)](0, 0) = 1.0;

    for (std::size_t idx = nodes_.size(); idx-- > 0;) {
      const Node& n = nodes_[idx];
      const Matrix& g = grads_[idx];
      switch (n.op) {
        case Op::Leaf:
          break;
        case Op::MatMul: {
          grads_[n.a] += Matrix::matmul(g, val(n.b).transposed());
          grads_[n.b] += Matrix::matmul(val(n.a).transposed(), g);
          break;
        }
        case Op::Add:
          grads_[n.a] += g;
          grads_[n.b] += g;
          break;
        case Op::Scale:
          grads_[n.a] += g * n.scalar;
          break;
        case Op::Tanh: {
          Matrix gx = g;
          for (std::size_t i = 0; i < gx.size(); ++i) {
            const double y = n.value.data()[i];
            gx.data()[i] *= 1.0 - y * y;
          }
          grads_[n.a] += gx;
          break;
        }
        case Op::Sigmoid: {
          Matrix gx = g;
          for (std::size_t i = 0; i < gx.size(); ++i) {
            const double y = n.value.data()[i];
            gx.data()[i] *= y * (1.0 - y);
          }
          grads_[n.a] += gx;
          break;
        }
        case Op::Diag: {
          Matrix gx(1, n.value.cols());
          for (std::size_t j = 0; j < n.value.cols(); ++j) gx(0, j) = g(j, j);
          grads_[n.a] += gx;
          break;
        }
        case Op::MeanPoolRows: {
          const Matrix& in = val(n.a);
          Matrix gx(in.rows(), in.cols());
          const double inv = 1.0 / static_cast<double>(in.rows());
          for (std::size_t i = 0; i < in.rows(); ++i)
            for (std::size_t j = 0; j < in.cols(); ++j) gx(i, j) = g(0, j) * inv;
          grads_[n.a] += gx;
          break;
        }
        case Op::TransformFwd:
          // forward and inverse of a unitary transform are mutual adjoints
          grads_[n.a] += stacked_inverse(g, n.kind, n.axis);
          break;
        case Op::TransformInv:
          grads_[n.a] += stacked_forward(g, n.kind, n.axis);
          break;
        case Op::HardMaskSte:
          grads_[n.a] += g;
          break;
        case Op::MseLoss: {
          const Matrix& x = val(n.a);
          const Matrix& t = val(n.b);
          const double coeff = 2.0 * g(0, 0) / static_cast<double>(x.size());
          Matrix gx(x.rows(), x.cols());
          Matrix gt(x.rows(), x.cols());
          for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = coeff * (x.data()[i] - t.data()[i]);
            gx.data()[i] = d;
            gt.data()[i] = -d;
          }
          grads_[n.a] += gx;
          grads_[n.b] += gt;
          break;
        }
        case Op::EntropyPenalty: {
          const Matrix& m = val(n.a);
          Matrix gx(m.rows(), m.cols());
          for (std::size_t i = 0; i < m.size(); ++i) {
            const double v = std::min(1.0 - 1e-12, std::max(1e-12, m.data()[i]));
            gx.data()[i] = g(0, 0) * std::log((1.0 - v) / v);
          }
          grads_[n.a] += gx;
          break;
        }
      }
    }
  }

 private:
  static double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

  const Matrix& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
};

}  // namespace ad
}  // namespace foura
