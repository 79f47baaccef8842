#pragma once

#include <optional>
#include <span>

#include "fsd/tensorgrad/tape.hpp"

// Differentiable primitives. Fields are laid out as [channels, height, width];
// complex spectra as [channels, height, width/2 + 1, 2] (real, imaginary).
// Element-wise ops require identical shapes; there is no implicit broadcasting.
namespace fsd::tg {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var silu(Var a);
/// Elementwise square root; requires strictly positive input.
Var sqrt(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

/// Zero-padded "same" convolution (cross-correlation). x: [Cin, H, W],
/// weight: [Cout, Cin, k, k] with odd k, bias: [Cout].
Var conv2d(Var x, Var weight, std::optional<Var> bias = std::nullopt);

/// Real 2D FFT per channel: [C, H, W] -> [C, H, W/2+1, 2], unnormalized.
Var rfft2(Var x);
/// Inverse of rfft2: [C, H, W/2+1, 2] -> [C, H, width].
Var irfft2(Var spectrum, std::size_t width);

/// Fourier layer with a truncated dense complex weight block.
/// weight: [Cin, Cout, 2*mh, mw, 2] acting on frequency rows 0..mh-1 and
/// H-mh..H-1 and columns 0..mw-1; all other modes are zeroed.
Var spectral_conv(Var x, Var weight);

/// Fixed real per-mode multiplier: irfft2(multipliers * rfft2(x)) per channel.
/// multipliers: [H, W/2+1].
Var mode_filter(Var x, const Tensor& multipliers);

Var sum(Var a);
Var mean(Var a);
/// sum(mask * (x - target)^2); a null mask means all ones.
Var squared_error(Var x, const Tensor& target, const Tensor* mask = nullptr);

/// Group normalization without affine parameters. x: [C, ...].
Var group_norm(Var x, std::size_t groups, double eps = 1e-5);
/// y[c, ...] = x[c, ...] * scale[c] + shift[c].
Var channel_affine(Var x, Var scale, Var shift);
/// y = W x + b with x: [n], W: [m, n], b: [m].
Var linear(Var x, Var weight, std::optional<Var> bias = std::nullopt);

/// 2x2 average pooling on [C, H, W] with even H, W.
Var avg_pool2(Var x);
/// 2x nearest-neighbour upsampling on [C, H, W].
Var upsample2(Var x);

/// Concatenation / slicing along the leading axis.
Var concat(std::span<const Var> parts);
Var slice(Var x, std::size_t begin, std::size_t count);
Var reshape(Var x, Shape shape);

}  // namespace fsd::tg
