#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "hgrec/matrix.hpp"

// Tape-based reverse-mode differentiation over Matrix values. The operation set is closed:
// matmul, add, bias broadcast, scale, ReLU, tanh, sigmoid, row softmax, row LayerNorm, row mean,
// sum, row concatenation and row gather. Model-specific fused ops (hyperedge aggregation,
// cross-agent attention, binary cross-entropy) are recorded with Tape::record by their modules.
namespace hgrec::ad {

class Tape;

/// Handle to one node of a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Refers to `value` without copying; it must outlive the tape.
  Var constant_view(const Matrix& value);
  /// Leaf whose gradient is accumulated straight into `grad_sink` (same shape as value).
  /// A null sink makes the leaf frozen.
  Var parameter(const Matrix& value, Matrix* grad_sink);
  /// Records an op result. `backward` is dropped when requires_grad is false.
  Var record(Matrix value, bool requires_grad, Backward backward);

  const Matrix& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient accumulator of a node, zero-initialised on first access.
  Matrix& grad(std::size_t id);
  bool has_grad(std::size_t id) const;

  /// Seeds d(root)/d(root) with `seed` (broadcast over the root's shape) and runs the tape
  /// backwards. Parameter sinks accumulate; call again on a fresh tape for another sample.
  void backward(Var root, double seed = 1.0);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    Matrix* grad_sink = nullptr;
    bool grad_ready = false;
    bool requires_grad = false;
    Backward backward;
  };

  // deque keeps references to earlier nodes stable while recording.
  std::deque<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Adds a 1 x c row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
/// Per-row LayerNorm with affine gain/bias rows (1 x c), population variance.
Var layer_norm_rows(Var x, Var gain, Var bias, double epsilon);
/// 1 x c mean over rows.
Var mean_rows(Var a);
/// 1 x 1 sum of all entries.
Var sum(Var a);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> rows);
/// Same value, no gradient flows back through it.
Var stop_gradient(Var a);

/// While alive, records the sign of every ReLU input evaluated on this thread, in evaluation
/// order. Two forward passes with different sign patterns straddle a kink.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  const std::vector<bool>& signs() const noexcept { return signs_; }
  static void record(const Matrix& input);

 private:
  std::vector<bool> signs_;
  KinkProbe* previous_;
};

}  // namespace hgrec::ad
