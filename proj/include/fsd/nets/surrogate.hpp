#pragma once

#include "fsd/grf/grf.hpp"
#include "fsd/nets/params.hpp"

namespace fsd::nets {

struct SurrogateSpec {
  grf::Grid grid;
  std::size_t layers = 4;
  std::size_t modes = 12;  // retained frequencies per direction
  std::size_t width = 32;
  std::size_t kernel = 3;  // odd local convolution size

  void validate() const;
  Json to_json() const;
  static SurrogateSpec from_json(const Json& j);
};

/// Forward-map emulator m [ny, nx] -> s [ny, nx]: lifting, `layers` blocks of
/// SiLU(spectral + local convolution), two-layer pointwise projection whose
/// last layer starts at zero. Inputs are standardized by stored buffers.
class Surrogate {
 public:
  Surrogate(SurrogateSpec spec, ParamSet params);

  static ParamSet init_params(const SurrogateSpec& spec, Rng& rng);
  /// Sets the input shift/scale buffers.
  static void set_input_normalization(ParamSet& params, double shift, double scale);

  Var forward(Tape& tape, Var m, const ParamVars& p) const;
  Var apply(Tape& tape, Var m) const;
  Tensor apply(const Tensor& m) const;

  const SurrogateSpec& spec() const { return spec_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

 private:
  SurrogateSpec spec_;
  ParamSet params_;
};

}  // namespace fsd::nets
