#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include "fsd/core/rng.hpp"
#include "fsd/tensorgrad/fft.hpp"
#include "fsd/tensorgrad/fsdt.hpp"
#include "fsd/tensorgrad/gradcheck.hpp"
#include "fsd/tensorgrad/ops.hpp"

using namespace fsd::tg;
using fsd::Rng;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

// Projects an op output onto a fixed random direction to get a scalar.
Var project(Var y, const Tensor& r) {
  Tape& tape = *y.tape;
  return sum(mul(y, tape.constant(r)));
}

// Brute-force DFT low-pass oracle for an all-ones spectral weight block.
Tensor brute_force_lowpass(const Tensor& x, std::size_t mh, std::size_t mw) {
  const std::size_t h = x.dim(1), w = x.dim(2);
  const std::size_t hw = w / 2 + 1;
  auto retained_half = [&](long kx, long ky) {
    // (kx, ky) given as non-negative indices into the half spectrum
    if (ky < 0 || ky >= long(mw) || ky >= long(hw)) return 0.0;
    return (kx < long(mh) || kx >= long(h - mh)) ? 1.0 : 0.0;
  };
  auto filter = [&](std::size_t kx, std::size_t ky) {
    const std::size_t nkx = (h - kx) % h, nky = (w - ky) % w;
    const bool self_conj_col = ky == 0 || 2 * ky == w;
    if (self_conj_col) return 0.5 * (retained_half(long(kx), long(ky)) + retained_half(long(nkx), long(nky)));
    if (ky < hw) return retained_half(long(kx), long(ky));
    return retained_half(long(nkx), long(nky));
  };
  using cplx = std::complex<double>;
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<cplx> spec(h * w);
  for (std::size_t kx = 0; kx < h; ++kx)
    for (std::size_t ky = 0; ky < w; ++ky) {
      cplx acc = 0;
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
          acc += x[r * w + c] * std::polar(1.0, -two_pi * (double(kx * r) / h + double(ky * c) / w));
      spec[kx * w + ky] = acc * filter(kx, ky);
    }
  Tensor y(x.shape());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      cplx acc = 0;
      for (std::size_t kx = 0; kx < h; ++kx)
        for (std::size_t ky = 0; ky < w; ++ky)
          acc += spec[kx * w + ky] * std::polar(1.0, two_pi * (double(kx * r) / h + double(ky * c) / w));
      y[r * w + c] = acc.real() / double(h * w);
    }
  return y;
}

}  // namespace

TEST(Fft, RoundTripIsIdentity) {
  Rng rng(11);
  for (auto [h, w] : {std::pair{8, 8}, {32, 32}, {16, 8}, {6, 10}}) {
    Tensor x = random_tensor({std::size_t(h), std::size_t(w)}, rng);
    std::vector<std::complex<double>> spec(h * (w / 2 + 1));
    fft::rfft2(x.data(), h, w, spec.data());
    Tensor back(x.shape());
    fft::irfft2(spec.data(), h, w, back.data());
    EXPECT_LE(norm2(back - x) / norm2(x), 1e-10);
  }
}

TEST(Fft, ParsevalWithColumnWeights) {
  Rng rng(12);
  const std::size_t h = 16, w = 12, hw = w / 2 + 1;
  Tensor x = random_tensor({h, w}, rng);
  std::vector<std::complex<double>> spec(h * hw);
  fft::rfft2(x.data(), h, w, spec.data());
  double energy = 0.0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t q = 0; q < hw; ++q) energy += fft::column_weight(q, w) * std::norm(spec[r * hw + q]);
  energy /= double(h * w);
  EXPECT_NEAR(energy, dot(x, x), 1e-10 * dot(x, x));
}

TEST(Fft, InverseOfForwardSpectrumIsReal) {
  // The forward spectrum is Hermitian on the self-conjugate columns, so the
  // projection inside the inverse does not alter it.
  Rng rng(13);
  Tape tape;
  Var x = tape.variable(random_tensor({2, 8, 8}, rng));
  Var back = irfft2(rfft2(x), 8);
  EXPECT_LE(norm2(back.value() - x.value()) / norm2(x.value()), 1e-10);
}

TEST(Ops, DeltaKernelConvolutionIsIdentity) {
  Rng rng(1);
  Tape tape;
  Var x = tape.constant(random_tensor({3, 6, 6}, rng));
  Tensor k({3, 3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) k[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
  Var y = conv2d(x, tape.constant(k));
  EXPECT_EQ(y.value(), x.value());
}

TEST(Ops, SpectralConvOnesIsBruteForceLowPass) {
  Rng rng(2);
  const std::size_t mh = 2, mw = 3;
  Tape tape;
  Tensor xv = random_tensor({1, 8, 8}, rng);
  Tensor wv({1, 1, 2 * mh, mw, 2});
  for (std::size_t i = 0; i < wv.size(); i += 2) wv[i] = 1.0;
  Var y = spectral_conv(tape.constant(xv), tape.constant(wv));
  Tensor oracle = brute_force_lowpass(xv, mh, mw);
  EXPECT_LE(max_abs(y.value().reshaped({8, 8}) - oracle.reshaped({8, 8})), 1e-12);
}

TEST(Ops, SpectralConvRejectsExcessTruncation) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 8, 8}));
  EXPECT_THROW(spectral_conv(x, tape.constant(Tensor({1, 1, 10, 3, 2}))), ShapeError);
  EXPECT_THROW(spectral_conv(x, tape.constant(Tensor({1, 1, 4, 6, 2}))), ShapeError);
}

TEST(Ops, ShapeMismatchIsRejected) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({3, 2}));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(conv2d(tape.constant(Tensor({1, 4, 4})), tape.constant(Tensor({1, 2, 3, 3}))),
               ShapeError);
}

TEST(Ops, NonFiniteOutputIsSurfaced) {
  Tape tape;
  Var a = tape.variable(Tensor({2}, 1e308));
  EXPECT_THROW(scale(a, 10.0), NumericalError);
}

TEST(Ops, SqrtRejectsNonPositiveInput) {
  Tape tape;
  EXPECT_THROW(sqrt(tape.constant(Tensor({2}, 0.0))), std::domain_error);
}

TEST(Vjp, SumGivesOnes) {
  Tape tape;
  Rng rng(3);
  Var x = tape.variable(random_tensor({4, 5}, rng));
  Tensor g = tape.gradient(sum(x), x);
  EXPECT_EQ(g, Tensor({4, 5}, 1.0));
}

TEST(Vjp, QuadraticMinimumHasZeroGradient) {
  Tape tape;
  Rng rng(4);
  Tensor y = random_tensor({3, 3}, rng);
  Var x = tape.variable(y);
  Tensor g = tape.gradient(squared_error(x, y), x);
  EXPECT_EQ(max_abs(g), 0.0);
}

TEST(Vjp, RejectsNonScalarOutputAndForeignVariables) {
  Tape tape, other;
  Var x = tape.variable(Tensor({3}, 1.0));
  Var y = scale(x, 2.0);
  EXPECT_THROW(tape.vjp(y, std::span<const Var>(&x, 1)), ShapeError);
  Var z = other.variable(Tensor({3}, 1.0));
  EXPECT_THROW(tape.vjp(sum(y), std::span<const Var>(&z, 1)), std::invalid_argument);
}

TEST(Vjp, ConvSiluMaskedMseMatchesCentralDifferences) {
  Rng rng(5);
  Tensor w = random_tensor({2, 1, 3, 3}, rng, 0.5);
  Tensor b = random_tensor({2}, rng, 0.1);
  Tensor target = random_tensor({2, 4, 4}, rng);
  Tensor mask({2, 4, 4});
  for (double& m : mask.values()) m = rng.uniform() < 0.5 ? 1.0 : 0.0;
  ScalarFn f = [&](Tape& t, Var x) {
    return squared_error(silu(conv2d(x, t.constant(w), t.constant(b))), target, &mask);
  };
  Tensor x = random_tensor({1, 4, 4}, rng);
  EXPECT_LE(grad_check(f, x, 1e-5), 1e-5);
}

TEST(GradCheck, HalfSquaredNormIsNearlyExact) {
  Rng rng(6);
  // Central differences are exact on a quadratic up to roundoff.
  ScalarFn f = [](Tape&, Var x) { return scale(squared_error(x, Tensor(x.shape())), 0.5); };
  EXPECT_LE(grad_check(f, random_tensor({5, 5}, rng), 1e-3), 1e-9);
}

// Every primitive against central differences, several seeds and shapes.
class PrimitiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
  Rng rng(seed);
  const std::size_t h = 4 + 2 * (seed % 3), w = 8;  // 4x8, 6x8, 8x8
  const std::size_t hw = w / 2 + 1;
  constexpr double kTol = 1e-5;
  // Larger step keeps roundoff below tolerance on near-zero gradient coordinates.
  constexpr double kStep = 1e-4;

  struct Case {
    const char* name;
    Shape in_shape;
    std::function<Var(Tape&, Var)> op;
  };
  Tensor other = random_tensor({2, h, w}, rng);
  Tensor w3 = random_tensor({3, 2, 3, 3}, rng, 0.3);
  Tensor w1 = random_tensor({3, 2, 1, 1}, rng, 0.3);
  Tensor bias = random_tensor({3}, rng, 0.1);
  Tensor wspec = random_tensor({2, 3, 4, 3, 2}, rng, 0.3);
  Tensor mult = random_tensor({h, hw}, rng);
  Tensor target = random_tensor({2, h, w}, rng);
  Tensor mask({2, h, w});
  for (double& m : mask.values()) m = rng.uniform() < 0.6 ? 1.0 : 0.0;
  Tensor cscale = random_tensor({2}, rng);
  Tensor cshift = random_tensor({2}, rng);
  Tensor lin_w = random_tensor({5, 2 * h * w}, rng, 0.1);
  Tensor lin_b = random_tensor({5}, rng);

  std::vector<Case> cases = {
      {"add", {2, h, w}, [&](Tape& t, Var x) { return add(x, t.constant(other)); }},
      {"sub", {2, h, w}, [&](Tape& t, Var x) { return sub(t.constant(other), x); }},
      {"mul", {2, h, w}, [&](Tape& t, Var x) { return mul(x, t.constant(other)); }},
      {"mul_self", {2, h, w}, [&](Tape&, Var x) { return mul(x, x); }},
      {"scale", {2, h, w}, [&](Tape&, Var x) { return scale(x, -1.7); }},
      {"add_scalar", {2, h, w}, [&](Tape&, Var x) { return add_scalar(x, 0.3); }},
      {"silu", {2, h, w}, [&](Tape&, Var x) { return silu(x); }},
      {"sqrt", {2, h, w}, [&](Tape&, Var x) { return sqrt(add_scalar(mul(x, x), 0.5)); }},
      {"conv3x3_x", {2, h, w}, [&](Tape& t, Var x) { return conv2d(x, t.constant(w3), t.constant(bias)); }},
      {"conv3x3_w", {3, 2, 3, 3}, [&](Tape& t, Var k) { return conv2d(t.constant(other), k, t.constant(bias)); }},
      {"conv3x3_b", {3}, [&](Tape& t, Var b) { return conv2d(t.constant(other), t.constant(w3), b); }},
      {"conv1x1_x", {2, h, w}, [&](Tape& t, Var x) { return conv2d(x, t.constant(w1)); }},
      {"conv1x1_w", {3, 2, 1, 1}, [&](Tape& t, Var k) { return conv2d(t.constant(other), k); }},
      {"rfft2", {2, h, w}, [&](Tape&, Var x) { return rfft2(x); }},
      {"irfft2", {2, h, hw, 2}, [&](Tape&, Var s) { return irfft2(s, w); }},
      {"spectral_x", {2, h, w}, [&](Tape& t, Var x) { return spectral_conv(x, t.constant(wspec)); }},
      {"spectral_w", {2, 3, 4, 3, 2}, [&](Tape& t, Var k) { return spectral_conv(t.constant(other), k); }},
      {"mode_filter", {2, h, w}, [&](Tape&, Var x) { return mode_filter(x, mult); }},
      {"group_norm", {2, h, w}, [&](Tape&, Var x) { return group_norm(x, 2); }},
      {"group_norm_1", {2, h, w}, [&](Tape&, Var x) { return group_norm(x, 1); }},
      {"affine_x", {2, h, w}, [&](Tape& t, Var x) { return channel_affine(x, t.constant(cscale), t.constant(cshift)); }},
      {"affine_scale", {2}, [&](Tape& t, Var a) { return channel_affine(t.constant(other), a, t.constant(cshift)); }},
      {"affine_shift", {2}, [&](Tape& t, Var b) { return channel_affine(t.constant(other), t.constant(cscale), b); }},
      {"linear_x", {2 * h * w}, [&](Tape& t, Var x) { return linear(x, t.constant(lin_w), t.constant(lin_b)); }},
      {"linear_w", {5, 2 * h * w}, [&](Tape& t, Var m) { return linear(t.constant(other.reshaped({2 * h * w})), m, t.constant(lin_b)); }},
      {"avg_pool2", {2, h, w}, [&](Tape&, Var x) { return avg_pool2(x); }},
      {"upsample2", {2, h, w}, [&](Tape&, Var x) { return upsample2(x); }},
      {"concat", {2, h, w}, [&](Tape& t, Var x) { std::vector<Var> p{x, t.constant(other), x}; return concat(p); }},
      {"slice", {2, h, w}, [&](Tape&, Var x) { return slice(x, 1, 1); }},
      {"reshape", {2, h, w}, [&](Tape&, Var x) { return reshape(x, {h, 2 * w}); }},
  };
  for (const Case& c : cases) {
    Tensor x = random_tensor(c.in_shape, rng);
    Tensor proj;
    {
      Tape probe;
      proj = random_tensor(c.op(probe, probe.constant(x)).shape(), rng);
    }
    ScalarFn f = [&](Tape& t, Var v) { return project(c.op(t, v), proj); };
    const GradCheckResult r = grad_check_report(f, x, kStep);
    EXPECT_LE(r.max_rel_error, kTol) << c.name << " at index " << r.worst_index;
  }
  // Reductions and the masked squared error are scalar already.
  const std::vector<std::pair<const char*, ScalarFn>> scalar_cases = {
      {"sum", [](Tape&, Var x) { return sum(x); }},
      {"mean", [](Tape&, Var x) { return mean(x); }},
      {"squared_error", [&](Tape&, Var x) { return squared_error(x, target, &mask); }},
  };
  for (const auto& [name, f] : scalar_cases) {
    Tensor x = random_tensor({2, h, w}, rng);
    EXPECT_LE(grad_check(f, x, kStep), kTol) << name;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGradient, ::testing::Range(100, 120));

TEST(Vjp, LinearInCotangent) {
  Rng rng(7);
  Tensor wspec = random_tensor({1, 2, 4, 3, 2}, rng, 0.3);
  Tensor w3 = random_tensor({2, 2, 3, 3}, rng, 0.3);
  Tape tape;
  Var x = tape.variable(random_tensor({1, 8, 8}, rng));
  Var y = silu(conv2d(spectral_conv(x, tape.constant(wspec)), tape.constant(w3)));
  Tensor u = random_tensor(y.shape(), rng), v = random_tensor(y.shape(), rng);
  const double a = 0.7, b = -1.3;
  Tensor combo = a * u + b * v;
  std::span<const Var> wrt(&x, 1);
  Tensor lhs = tape.vjp(y, combo, wrt)[0];
  Tensor rhs = a * tape.vjp(y, u, wrt)[0] + b * tape.vjp(y, v, wrt)[0];
  EXPECT_LE(max_abs(lhs - rhs), 1e-12);
}

TEST(Fsdt, RoundTripIsBitExact) {
  Rng rng(8);
  Tensor t = random_tensor({3, 4, 5}, rng);
  std::stringstream buf;
  write_fsdt(buf, t);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 4), "FSDT");
  EXPECT_EQ(bytes.size(), 4 + 4 + 3 * 4 + t.size() * 8);
  Tensor back = read_fsdt(buf);
  EXPECT_EQ(back, t);
}

TEST(Fsdt, RejectsBadMagicAndTruncation) {
  std::stringstream bad("XXXX0000");
  EXPECT_THROW(read_fsdt(bad), FormatError);
  std::stringstream buf;
  write_fsdt(buf, Tensor({4}, 1.0));
  std::string s = buf.str();
  std::stringstream cut(s.substr(0, s.size() - 3));
  EXPECT_THROW(read_fsdt(cut), FormatError);
}
