#include "fsd/nets/denoiser.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "fsd/tensorgrad/ops.hpp"

namespace fsd::nets {

using namespace tg;

namespace {

bool sigma_in_range(double sigma, double lo, double hi) {
  const double slack = 1e-9;
  return sigma >= lo * (1 - slack) && sigma <= hi * (1 + slack);
}

}  // namespace

ChannelStandardization ChannelStandardization::identity(std::size_t channels) {
  return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
}

namespace {

Tensor channel_map(const Tensor& x, const std::vector<double>& a, const std::vector<double>& b) {
  if (x.rank() == 0 || x.dim(0) != a.size())
    throw ShapeError("standardization: " + std::to_string(a.size()) + " channels, input " + to_string(x.shape()));
  Tensor out(x.shape());
  const std::size_t n = x.size() / a.size();
  for (std::size_t c = 0; c < a.size(); ++c)
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = x[c * n + i] * a[c] + b[c];
  return out;
}

}  // namespace

Tensor ChannelStandardization::to_physical(const Tensor& x) const { return channel_map(x, scale, shift); }

Tensor ChannelStandardization::to_working(const Tensor& x) const {
  std::vector<double> a(channels()), b(channels());
  for (std::size_t c = 0; c < channels(); ++c) {
    a[c] = 1.0 / scale[c];
    b[c] = -shift[c] / scale[c];
  }
  return channel_map(x, a, b);
}

Var ChannelStandardization::to_physical(Tape& tape, Var x) const {
  return channel_affine(x, tape.constant(Tensor({channels()}, scale)), tape.constant(Tensor({channels()}, shift)));
}

Tensor Denoiser::denoise(const Tensor& z, double sigma) const {
  Tape tape;
  return denoise(tape, tape.constant(z), sigma).value();
}

void Denoiser::check_input(const Shape& shape, double sigma) const {
  const Shape expected{channels(), grid().ny, grid().nx};
  if (shape != expected)
    throw ShapeError("denoiser: input shape " + to_string(shape) + ", expected " + to_string(expected));
  if (!std::isfinite(sigma) || !sigma_in_range(sigma, sigma_min(), sigma_max()))
    throw std::out_of_range("denoiser: sigma " + std::to_string(sigma) + " outside [" +
                            std::to_string(sigma_min()) + ", " + std::to_string(sigma_max()) + "]");
}

AnalyticGaussianDenoiser::AnalyticGaussianDenoiser(grf::CovarianceSpectrum prior,
                                                   grf::CovarianceSpectrum noise)
    : prior_(std::move(prior)), noise_(std::move(noise)) {
  if (!(prior_.grid == noise_.grid)) throw std::invalid_argument("analytic denoiser: grid mismatch");
}

double AnalyticGaussianDenoiser::sigma_max() const { return std::numeric_limits<double>::infinity(); }

Tensor AnalyticGaussianDenoiser::shrinkage(double sigma) const {
  Tensor m(prior_.eigenvalues.shape());
  const double s2 = sigma * sigma;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double p = prior_.eigenvalues[i];
    const double denom = p + s2 * noise_.eigenvalues[i];
    m[i] = p > 0.0 ? p / denom : 0.0;
  }
  return m;
}

Var AnalyticGaussianDenoiser::denoise(Tape& tape, Var z, double sigma) const {
  check_input(z.shape(), sigma);
  (void)tape;
  return mode_filter(z, shrinkage(sigma));
}

EdmScaling edm_scaling(double sigma, double sigma_data) {
  const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
  const double root = std::sqrt(s2 + d2);
  return {d2 / (s2 + d2), sigma * sigma_data / root, 1.0 / root, 0.25 * std::log(sigma)};
}

double edm_weight(double sigma, double sigma_data) {
  const double sd = sigma * sigma_data;
  return (sigma * sigma + sigma_data * sigma_data) / (sd * sd);
}

std::vector<double> sigma_features(double sigma, std::size_t dim) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma_features: sigma must be positive");
  if (dim < 4 || dim % 2 != 0) throw std::invalid_argument("sigma_features: dim must be even and >= 4");
  const double c = 0.25 * std::log(sigma);
  const std::size_t half = dim / 2;
  std::vector<double> f(dim);
  for (std::size_t j = 0; j < half; ++j) {
    // Frequencies log-spaced over [0.5, 32].
    const double freq = 0.5 * std::exp(std::log(64.0) * static_cast<double>(j) / static_cast<double>(half - 1));
    f[j] = std::cos(freq * c);
    f[half + j] = std::sin(freq * c);
  }
  return f;
}

void DenoiserSpec::validate() const {
  grid.validate();
  if (channels < 1) throw std::invalid_argument("denoiser spec: channels must be >= 1");
  if (levels < 1 || multipliers.size() != levels)
    throw std::invalid_argument("denoiser spec: need one multiplier per level");
  const std::size_t div = std::size_t{1} << (levels - 1);
  if (grid.nx % div != 0 || grid.ny % div != 0 || (grid.nx / div) % 2 != 0 || (grid.ny / div) % 2 != 0)
    throw std::invalid_argument("denoiser spec: grid not divisible by 2^(levels-1) with even coarsest level");
  if (!(mode_fraction > 0.0 && mode_fraction <= 1.0))
    throw std::invalid_argument("denoiser spec: mode_fraction must be in (0, 1]");
  if (base_width < 1 || groups < 1 || embed_dim < 4 || embed_dim % 2 != 0)
    throw std::invalid_argument("denoiser spec: invalid widths");
  if (!(0.0 < sigma_min && sigma_min < sigma_max) || !(sigma_data > 0.0))
    throw std::invalid_argument("denoiser spec: invalid sigma range");
}

std::pair<std::size_t, std::size_t> DenoiserSpec::modes(std::size_t level) const {
  const std::size_t h = grid.ny >> level, w = grid.nx >> level;
  auto half_extent = [&](std::size_t r) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(mode_fraction * r / 2.0)));
  };
  return {std::min(half_extent(h), h / 2), std::min(half_extent(w), w / 2 + 1)};
}

Json DenoiserSpec::to_json() const {
  return {{"model", "uno"},
          {"grid", {{"nx", grid.nx}, {"ny", grid.ny}, {"lx", grid.lx}, {"ly", grid.ly}}},
          {"channels", channels},
          {"levels", levels},
          {"base_width", base_width},
          {"multipliers", multipliers},
          {"mode_fraction", mode_fraction},
          {"embed_dim", embed_dim},
          {"groups", groups},
          {"sigma_data", sigma_data},
          {"sigma_min", sigma_min},
          {"sigma_max", sigma_max}};
}

DenoiserSpec DenoiserSpec::from_json(const Json& j) {
  if (j.value("model", "") != "uno") throw std::invalid_argument("denoiser spec: not a uno model");
  DenoiserSpec s;
  const Json& g = j.at("grid");
  s.grid = {g.at("nx").get<std::size_t>(), g.at("ny").get<std::size_t>(), g.at("lx").get<double>(),
            g.at("ly").get<double>()};
  s.channels = j.at("channels").get<std::size_t>();
  s.levels = j.at("levels").get<std::size_t>();
  s.base_width = j.at("base_width").get<std::size_t>();
  s.multipliers = j.at("multipliers").get<std::vector<std::size_t>>();
  s.mode_fraction = j.at("mode_fraction").get<double>();
  s.embed_dim = j.at("embed_dim").get<std::size_t>();
  s.groups = j.at("groups").get<std::size_t>();
  s.sigma_data = j.at("sigma_data").get<double>();
  s.sigma_min = j.at("sigma_min").get<double>();
  s.sigma_max = j.at("sigma_max").get<double>();
  s.validate();
  return s;
}

namespace {

// Two coordinate channels with cell-centre positions in [0, 1].
Tensor coordinate_channels(std::size_t h, std::size_t w) {
  Tensor c({2, h, w});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t q = 0; q < w; ++q) {
      c[r * w + q] = (q + 0.5) / static_cast<double>(w);
      c[h * w + r * w + q] = (r + 0.5) / static_cast<double>(h);
    }
  return c;
}

struct BlockShape {
  std::string name;
  std::size_t cin, cout, level;
};

std::vector<BlockShape> block_shapes(const DenoiserSpec& s) {
  std::vector<BlockShape> out;
  std::size_t c = s.width(0);
  for (std::size_t l = 0; l < s.levels; ++l) {
    out.push_back({"down" + std::to_string(l), c, s.width(l), l});
    c = s.width(l);
  }
  for (std::size_t l = s.levels - 1; l-- > 0;) {
    out.push_back({"up" + std::to_string(l), c + s.width(l), s.width(l), l});
    c = s.width(l);
  }
  return out;
}

}  // namespace

ParamSet UnoDenoiser::init_params(const DenoiserSpec& spec, Rng& rng) {
  spec.validate();
  ParamSet p;
  const std::size_t cin = spec.channels + 2, w0 = spec.width(0), e = spec.embed_dim;
  p.add("lift.w", init_normal({w0, cin, 1, 1}, cin, rng));
  p.add("lift.b", Tensor({w0}));
  p.add("embed.w", init_normal({e, e}, e, rng));
  p.add("embed.b", Tensor({e}));
  for (const BlockShape& b : block_shapes(spec)) {
    const auto [mh, mw] = spec.modes(b.level);
    p.add(b.name + ".film.w", init_normal({2 * b.cin, e}, e, rng, 0.1));
    p.add(b.name + ".film.b", Tensor({2 * b.cin}));
    // Spectral weights scaled so the layer roughly preserves variance.
    p.add(b.name + ".spec.w", init_normal({b.cin, b.cout, 2 * mh, mw, 2}, 2.0 * b.cin, rng));
    p.add(b.name + ".pw.w", init_normal({b.cout, b.cin, 1, 1}, b.cin, rng));
    p.add(b.name + ".pw.b", Tensor({b.cout}));
    if (b.cin != b.cout) p.add(b.name + ".skip.w", init_normal({b.cout, b.cin, 1, 1}, b.cin, rng));
  }
  p.add("norm.shift", Tensor({spec.channels}), true);
  p.add("norm.scale", Tensor({spec.channels}, 1.0), true);
  p.add("out.w", Tensor({spec.channels, w0, 1, 1}));
  p.add("out.b", Tensor({spec.channels}));
  return p;
}

UnoDenoiser::UnoDenoiser(DenoiserSpec spec, ParamSet params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  const ParamSet reference = [&] {
    Rng rng(0);
    return init_params(spec_, rng);
  }();
  for (const auto& [name, t] : reference.tensors())
    if (!params_.contains(name) || params_.at(name).shape() != t.shape())
      throw CheckpointError("uno denoiser: parameter " + name + " missing or misshapen");
  if (params_.tensors().size() != reference.tensors().size())
    throw CheckpointError("uno denoiser: unexpected extra parameters");
}

ChannelStandardization UnoDenoiser::standardization() const {
  const auto shift = params_.at("norm.shift").values(), scale = params_.at("norm.scale").values();
  return {{shift.begin(), shift.end()}, {scale.begin(), scale.end()}};
}

void UnoDenoiser::set_standardization(ParamSet& params, const ChannelStandardization& s) {
  Tensor& shift = params.at("norm.shift");
  if (s.channels() != shift.size()) throw ShapeError("standardization: channel count mismatch");
  for (std::size_t c = 0; c < s.channels(); ++c) {
    if (!(s.scale[c] > 0.0)) throw std::invalid_argument("standardization: scale must be positive");
    shift[c] = s.shift[c];
    params.at("norm.scale")[c] = s.scale[c];
  }
}

Var UnoDenoiser::embedding(Tape& tape, double sigma, const ParamVars& p) const {
  const std::vector<double> f = sigma_features(sigma, spec_.embed_dim);
  Var feat = tape.constant(Tensor({spec_.embed_dim}, f));
  return silu(linear(feat, p["embed.w"], p["embed.b"]));
}

Var UnoDenoiser::block(Tape& tape, Var x, Var emb, const std::string& name, const ParamVars& p) const {
  const std::size_t cin = x.shape()[0];
  Var h = group_norm(x, std::gcd(spec_.groups, cin));
  Var film = linear(emb, p[name + ".film.w"], p[name + ".film.b"]);
  Var scale_v = add_scalar(slice(film, 0, cin), 1.0);
  Var shift_v = slice(film, cin, cin);
  h = silu(channel_affine(h, scale_v, shift_v));
  h = add(spectral_conv(h, p[name + ".spec.w"]), conv2d(h, p[name + ".pw.w"], p[name + ".pw.b"]));
  const std::string skip = name + ".skip.w";
  Var residual = params_.contains(skip) ? conv2d(x, p[skip]) : x;
  (void)tape;
  return add(residual, h);
}

Var UnoDenoiser::forward(Tape& tape, Var z, double sigma, const ParamVars& p) const {
  check_input(z.shape(), sigma);
  const EdmScaling sc = edm_scaling(sigma, spec_.sigma_data);
  const std::size_t ny = spec_.grid.ny, nx = spec_.grid.nx;
  std::vector<Var> inputs{scale(z, sc.in), tape.constant(coordinate_channels(ny, nx))};
  Var h = conv2d(concat(inputs), p["lift.w"], p["lift.b"]);
  Var emb = embedding(tape, sigma, p);
  std::vector<Var> skips;
  for (std::size_t l = 0; l < spec_.levels; ++l) {
    h = block(tape, h, emb, "down" + std::to_string(l), p);
    if (l + 1 < spec_.levels) {
      skips.push_back(h);
      h = avg_pool2(h);
    }
  }
  for (std::size_t l = spec_.levels - 1; l-- > 0;) {
    std::vector<Var> parts{upsample2(h), skips[l]};
    h = block(tape, concat(parts), emb, "up" + std::to_string(l), p);
  }
  h = silu(group_norm(h, std::gcd(spec_.groups, spec_.width(0))));
  Var net = conv2d(h, p["out.w"], p["out.b"]);
  return add(scale(z, sc.skip), scale(net, sc.out));
}

Var UnoDenoiser::denoise(Tape& tape, Var z, double sigma) const {
  const ParamVars p(tape, params_, false);
  return forward(tape, z, sigma, p);
}

}  // namespace fsd::nets
