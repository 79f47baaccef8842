#include "fsd/tensorgrad/tape.hpp"

#include <optional>
#include <string>

namespace fsd::tg {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Variable: return "variable";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Silu: return "silu";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Rfft2: return "rfft2";
    case OpKind::Irfft2: return "irfft2";
    case OpKind::SpectralConv: return "spectral_conv";
    case OpKind::ModeFilter: return "mode_filter";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SquaredError: return "squared_error";
    case OpKind::GroupNorm: return "group_norm";
    case OpKind::ChannelAffine: return "channel_affine";
    case OpKind::Linear: return "linear";
    case OpKind::AvgPool2: return "avg_pool2";
    case OpKind::Upsample2: return "upsample2";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Reshape: return "reshape";
    case OpKind::Custom: return "custom";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->value(*this); }

void Tape::check_owned(Var v, const char* what) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw std::invalid_argument(std::string(what) + ": variable is not on this tape");
}

Var Tape::variable(Tensor value) {
  if (check_finite_ && !value.all_finite())
    throw NumericalError("tape: non-finite variable");
  nodes_.push_back({OpKind::Variable, {}, std::move(value), nullptr, true});
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back({OpKind::Constant, {}, std::move(value), nullptr, false});
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::record(OpKind kind, std::vector<Var> inputs, Tensor value,
                 BackwardFn backward) {
  if (check_finite_ && !value.all_finite())
    throw NumericalError("tape: non-finite output from " + std::string(op_name(kind)));
  TapeNode node;
  node.kind = kind;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check_owned(in, op_name(kind).data());
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  check_owned(v, "value");
  return nodes_[v.id].value;
}

const TapeNode& Tape::node(Var v) const {
  check_owned(v, "node");
  return nodes_[v.id];
}

std::vector<Tensor> Tape::vjp(Var output, std::span<const Var> wrt) const {
  check_owned(output, "vjp");
  if (nodes_[output.id].value.size() != 1)
    throw ShapeError("vjp: output is not scalar, shape " +
                     to_string(nodes_[output.id].value.shape()));
  return vjp(output, Tensor(nodes_[output.id].value.shape(), 1.0), wrt);
}

std::vector<Tensor> Tape::vjp(Var output, const Tensor& cotangent,
                              std::span<const Var> wrt) const {
  check_owned(output, "vjp");
  require_same_shape(nodes_[output.id].value, cotangent, "vjp cotangent");
  for (const Var& w : wrt) {
    check_owned(w, "vjp wrt");
    if (!nodes_[w.id].requires_grad)
      throw std::invalid_argument("vjp: wrt variable does not require grad");
  }

  std::vector<std::optional<Tensor>> grads(output.id + 1);
  std::vector<bool> keep(output.id + 1, false);
  for (const Var& w : wrt)
    if (w.id <= output.id) keep[w.id] = true;
  grads[output.id] = cotangent;
  std::vector<Tensor*> slots;
  for (std::int32_t id = output.id; id >= 0; --id) {
    const TapeNode& node = nodes_[id];
    if (!grads[id] || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::int32_t in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (!grads[in]) grads[in].emplace(nodes_[in].value.shape());
      slots[k] = &*grads[in];
    }
    node.backward(*grads[id], slots);
    // Interior cotangents are not needed once propagated.
    if (!keep[id]) grads[id].reset();
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id <= output.id && grads[w.id])
      out.push_back(*grads[w.id]);
    else
      out.emplace_back(nodes_[w.id].value.shape());
  }
  return out;
}

}  // namespace fsd::tg
