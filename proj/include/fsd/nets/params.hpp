#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "fsd/core/io.hpp"
#include "fsd/core/rng.hpp"
#include "fsd/tensorgrad/tape.hpp"

namespace fsd::nets {

using tg::Shape;
using tg::Tape;
using tg::Tensor;
using tg::Var;

/// Named parameter tensors, iterated in name order. Buffers are stored and
/// serialized like parameters but never receive gradients.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor value, bool buffer = false);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  bool is_buffer(const std::string& name) const { return buffers_.count(name) != 0; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::map<std::string, Tensor>& tensors() { return tensors_; }
  std::size_t parameter_count() const;  // trainable scalars
  bool operator==(const ParamSet& other) const {
    return tensors_ == other.tensors_ && buffers_ == other.buffers_;
  }

 private:
  std::map<std::string, Tensor> tensors_;
  std::set<std::string> buffers_;
};

/// Parameters placed on a tape, as variables (trainable) or constants.
class ParamVars {
 public:
  ParamVars(Tape& tape, const ParamSet& params, bool trainable);
  Var operator[](const std::string& name) const;
  /// Rebinds one parameter to an existing tape value.
  void bind(const std::string& name, Var v);
  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

/// Gradients of `loss` for every trainable parameter, by name.
std::map<std::string, Tensor> parameter_gradients(const Tape& tape, Var loss, const ParamVars& vars,
                                                  const ParamSet& params);

/// Fan-in scaled normal initialization.
Tensor init_normal(Shape shape, double fan_in, Rng& rng, double gain = 1.0);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint: "FSDC", u32 spec length, spec JSON, u32 count, then per tensor
/// (u32 name length, name, u8 buffer flag, FSDT record), then 64 hex chars of
/// SHA-256 over all preceding bytes. `extra` carries optimizer or training state.
struct Checkpoint {
  Json spec;
  ParamSet params;
  std::map<std::string, Tensor> extra;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Validates the content hash; throws CheckpointError on corruption.
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also rejects a spec different from `expected_spec` (compared by hash).
Checkpoint load_checkpoint(const std::filesystem::path& path, const Json& expected_spec);

std::string spec_hash(const Json& spec);

}  // namespace fsd::nets
