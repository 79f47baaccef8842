#include "fsd/nets/surrogate.hpp"

#include "fsd/tensorgrad/ops.hpp"

namespace fsd::nets {

using namespace tg;

void SurrogateSpec::validate() const {
  grid.validate();
  if (layers < 1 || width < 1) throw std::invalid_argument("surrogate spec: layers and width must be >= 1");
  if (modes < 2 || modes % 2 != 0 || modes > grid.ny || modes > grid.nx)
    throw std::invalid_argument("surrogate spec: modes must be even and within the grid half-extent");
  if (kernel % 2 != 1) throw std::invalid_argument("surrogate spec: kernel must be odd");
}

Json SurrogateSpec::to_json() const {
  return {{"model", "surrogate"},
          {"grid", {{"nx", grid.nx}, {"ny", grid.ny}, {"lx", grid.lx}, {"ly", grid.ly}}},
          {"layers", layers},
          {"modes", modes},
          {"width", width},
          {"kernel", kernel}};
}

SurrogateSpec SurrogateSpec::from_json(const Json& j) {
  if (j.value("model", "") != "surrogate") throw std::invalid_argument("surrogate spec: wrong model");
  SurrogateSpec s;
  const Json& g = j.at("grid");
  s.grid = {g.at("nx").get<std::size_t>(), g.at("ny").get<std::size_t>(), g.at("lx").get<double>(),
            g.at("ly").get<double>()};
  s.layers = j.at("layers").get<std::size_t>();
  s.modes = j.at("modes").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.kernel = j.at("kernel").get<std::size_t>();
  s.validate();
  return s;
}

ParamSet Surrogate::init_params(const SurrogateSpec& spec, Rng& rng) {
  spec.validate();
  ParamSet p;
  const std::size_t w = spec.width, k = spec.kernel, m = spec.modes / 2;
  p.add("in.shift", Tensor({1}), true);
  p.add("in.scale", Tensor({1}, 1.0), true);
  p.add("lift.w", init_normal({w, 3, 1, 1}, 3, rng));
  p.add("lift.b", Tensor({w}));
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::string n = "layer" + std::to_string(l);
    p.add(n + ".spec.w", init_normal({w, w, 2 * m, m, 2}, 2.0 * w, rng));
    p.add(n + ".local.w", init_normal({w, w, k, k}, 2.0 * w * k * k, rng));
    p.add(n + ".local.b", Tensor({w}));
  }
  p.add("proj.w", init_normal({w, w, 1, 1}, w, rng));
  p.add("proj.b", Tensor({w}));
  p.add("out.w", Tensor({1, w, 1, 1}));
  p.add("out.b", Tensor({1}));
  return p;
}

void Surrogate::set_input_normalization(ParamSet& params, double shift, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("surrogate: input scale must be positive");
  params.at("in.shift")[0] = shift;
  params.at("in.scale")[0] = scale;
}

Surrogate::Surrogate(SurrogateSpec spec, ParamSet params) : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  Rng rng(0);
  const ParamSet reference = init_params(spec_, rng);
  for (const auto& [name, t] : reference.tensors())
    if (!params_.contains(name) || params_.at(name).shape() != t.shape())
      throw CheckpointError("surrogate: parameter " + name + " missing or misshapen");
  if (params_.tensors().size() != reference.tensors().size())
    throw CheckpointError("surrogate: unexpected extra parameters");
}

Var Surrogate::forward(Tape& tape, Var m, const ParamVars& p) const {
  const std::size_t ny = spec_.grid.ny, nx = spec_.grid.nx;
  if (m.shape() != Shape{ny, nx})
    throw ShapeError("surrogate: input shape " + to_string(m.shape()) + ", expected " + to_string({ny, nx}));
  const double shift = p["in.shift"].value()[0], scl = p["in.scale"].value()[0];
  Var x = reshape(scale(add_scalar(m, -shift), 1.0 / scl), {1, ny, nx});
  Tensor coords({2, ny, nx});
  for (std::size_t r = 0; r < ny; ++r)
    for (std::size_t q = 0; q < nx; ++q) {
      coords[r * nx + q] = (q + 0.5) / static_cast<double>(nx);
      coords[ny * nx + r * nx + q] = (r + 0.5) / static_cast<double>(ny);
    }
  std::vector<Var> parts{x, tape.constant(std::move(coords))};
  Var h = conv2d(concat(parts), p["lift.w"], p["lift.b"]);
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    const std::string n = "layer" + std::to_string(l);
    h = silu(add(spectral_conv(h, p[n + ".spec.w"]), conv2d(h, p[n + ".local.w"], p[n + ".local.b"])));
  }
  h = silu(conv2d(h, p["proj.w"], p["proj.b"]));
  return reshape(conv2d(h, p["out.w"], p["out.b"]), {ny, nx});
}

Var Surrogate::apply(Tape& tape, Var m) const {
  const ParamVars p(tape, params_, false);
  return forward(tape, m, p);
}

Tensor Surrogate::apply(const Tensor& m) const {
  Tape tape;
  return apply(tape, tape.constant(m)).value();
}

}  // namespace fsd::nets
