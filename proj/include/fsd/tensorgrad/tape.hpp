#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "fsd/tensorgrad/tensor.hpp"

namespace fsd::tg {

class Tape;

enum class OpKind : std::uint8_t {
  Variable,
  Constant,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Silu,
  Sqrt,
  Conv2d,
  Rfft2,
  Irfft2,
  SpectralConv,
  ModeFilter,
  Sum,
  Mean,
  SquaredError,
  GroupNorm,
  ChannelAffine,
  Linear,
  AvgPool2,
  Upsample2,
  Concat,
  Slice,
  Reshape,
  Custom,
};

std::string_view op_name(OpKind kind);

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Accumulators for the input gradients of one node; entries are null for
/// inputs that do not require gradients.
using GradSlots = std::span<Tensor* const>;
using BackwardFn = std::function<void(const Tensor& grad_out, GradSlots grads_in)>;

struct TapeNode {
  OpKind kind = OpKind::Constant;
  std::vector<std::int32_t> inputs;
  Tensor value;
  BackwardFn backward;  // captures whatever forward activations the rule needs
  bool requires_grad = false;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order of the expression DAG; backward sweeps it once in reverse.
/// A tape is single threaded; independent tapes share no mutable state.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Tensor value);
  Var constant(Tensor value);

  /// Appends an op result. `backward` is dropped when no input requires grad.
  Var record(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;
  const TapeNode& node(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradients of scalar `output` with respect to each of `wrt`.
  std::vector<Tensor> vjp(Var output, std::span<const Var> wrt) const;
  /// Vector-Jacobian product with an explicit cotangent shaped like `output`.
  std::vector<Tensor> vjp(Var output, const Tensor& cotangent,
                          std::span<const Var> wrt) const;

  Tensor gradient(Var output, Var wrt) const {
    return std::move(vjp(output, std::span<const Var>(&wrt, 1)).front());
  }

  /// Non-finite values raise NumericalError at the op that produced them.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  void check_owned(Var v, const char* what) const;

  std::vector<TapeNode> nodes_;
  bool check_finite_ = true;
};

}  // namespace fsd::tg
