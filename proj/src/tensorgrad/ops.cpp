#include "fsd/tensorgrad/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <complex>
#include <memory>
#include <string>

#include "fsd/tensorgrad/fft.hpp"

namespace fsd::tg {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using cplx = std::complex<double>;

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("op on invalid variable");
  return *a.tape;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

struct FieldDims {
  std::size_t c, h, w;
};

FieldDims field_dims(const Tensor& t, const char* op) {
  require(t.rank() == 3, std::string(op) + ": expected [C,H,W], got " + to_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2)};
}

// Per-channel forward transforms of a [C,H,W] buffer.
std::vector<cplx> rfft_channels(const double* x, FieldDims d) {
  const std::size_t hw = fft::half_width(d.w);
  std::vector<cplx> out(d.c * d.h * hw);
  for (std::size_t c = 0; c < d.c; ++c)
    fft::rfft2(x + c * d.h * d.w, d.h, d.w, out.data() + c * d.h * hw);
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  return tape_of(a).record(OpKind::Add, {a, b}, a.value() + b.value(),
                           [](const Tensor& g, GradSlots in) {
                             if (in[0]) *in[0] += g;
                             if (in[1]) *in[1] += g;
                           });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  return tape_of(a).record(OpKind::Sub, {a, b}, a.value() - b.value(),
                           [](const Tensor& g, GradSlots in) {
                             if (in[0]) *in[0] += g;
                             if (in[1]) *in[1] -= g;
                           });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape_of(a).record(OpKind::Mul, {a, b}, std::move(out),
                           [ap = av.data(), bp = bv.data()](const Tensor& g, GradSlots in) {
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               if (in[0]) (*in[0])[i] += g[i] * bp[i];
                               if (in[1]) (*in[1])[i] += g[i] * ap[i];
                             }
                           });
}

Var scale(Var a, double s) {
  return tape_of(a).record(OpKind::Scale, {a}, s * a.value(),
                           [s](const Tensor& g, GradSlots in) { in[0]->axpy(s, g); });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  return tape_of(a).record(OpKind::AddScalar, {a}, std::move(out),
                           [](const Tensor& g, GradSlots in) { *in[0] += g; });
}

Var silu(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  Tensor dydx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-x[i]));
    out[i] = x[i] * sig;
    dydx[i] = sig * (1.0 + x[i] * (1.0 - sig));
  }
  return tape_of(a).record(OpKind::Silu, {a}, std::move(out),
                           [dydx = std::move(dydx)](const Tensor& g, GradSlots in) {
                             for (std::size_t i = 0; i < g.size(); ++i)
                               (*in[0])[i] += g[i] * dydx[i];
                           });
}

Var sqrt(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) throw std::domain_error("sqrt: non-positive input");
    out[i] = std::sqrt(x[i]);
  }
  return tape_of(a).record(OpKind::Sqrt, {a}, out, [out](const Tensor& g, GradSlots in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += 0.5 * g[i] / out[i];
  });
}

Var conv2d(Var x, Var weight, std::optional<Var> bias) {
  const FieldDims d = field_dims(x.value(), "conv2d");
  const Tensor& w = weight.value();
  require(w.rank() == 4 && w.dim(1) == d.c && w.dim(2) == w.dim(3) && w.dim(2) % 2 == 1,
          "conv2d: weight " + to_string(w.shape()) + " incompatible with input " +
              to_string(x.shape()));
  const std::size_t cout = w.dim(0), k = w.dim(2), pad = k / 2;
  const std::size_t hw = d.h * d.w, kk = d.c * k * k;
  if (bias) require(bias->value().shape() == Shape{cout}, "conv2d: bias shape");

  // im2col; for 1x1 kernels the input already is the column matrix.
  auto col = std::make_shared<Tensor>(Shape{kk, hw});
  if (k == 1) {
    *col = x.value().reshaped({kk, hw});
  } else {
    const double* xv = x.value().data();
    double* cv = col->data();
    for (std::size_t ci = 0; ci < d.c; ++ci)
      for (std::size_t di = 0; di < k; ++di)
        for (std::size_t dj = 0; dj < k; ++dj) {
          double* row = cv + ((ci * k + di) * k + dj) * hw;
          for (std::size_t yy = 0; yy < d.h; ++yy) {
            const long sy = long(yy) + long(di) - long(pad);
            if (sy < 0 || sy >= long(d.h)) continue;
            for (std::size_t xx = 0; xx < d.w; ++xx) {
              const long sx = long(xx) + long(dj) - long(pad);
              if (sx < 0 || sx >= long(d.w)) continue;
              row[yy * d.w + xx] = xv[(ci * d.h + sy) * d.w + sx];
            }
          }
        }
  }

  Tensor out({cout, d.h, d.w});
  MapMat om(out.data(), cout, hw);
  om.noalias() = ConstMapMat(w.data(), cout, kk) * ConstMapMat(col->data(), kk, hw);
  if (bias) {
    const Tensor& b = bias->value();
    for (std::size_t o = 0; o < cout; ++o) om.row(o).array() += b[o];
  }

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  // Tape values are immutable and their buffers survive node relocation.
  const double* wv = w.data();
  return tape_of(x).record(
      OpKind::Conv2d, std::move(inputs), std::move(out),
      [col, wv, d, cout, k, pad, hw, kk](const Tensor& g, GradSlots in) {
        ConstMapMat gm(g.data(), cout, hw);
        if (in[1]) MapMat(in[1]->data(), cout, kk).noalias() += gm * ConstMapMat(col->data(), kk, hw).transpose();
        if (in.size() > 2 && in[2])
          for (std::size_t o = 0; o < cout; ++o) (*in[2])[o] += gm.row(o).sum();
        if (!in[0]) return;
        if (k == 1) {
          MapMat(in[0]->data(), kk, hw).noalias() += ConstMapMat(wv, cout, kk).transpose() * gm;
          return;
        }
        RowMat dcol = ConstMapMat(wv, cout, kk).transpose() * gm;
        double* gx = in[0]->data();
        for (std::size_t ci = 0; ci < d.c; ++ci)
          for (std::size_t di = 0; di < k; ++di)
            for (std::size_t dj = 0; dj < k; ++dj) {
              const double* row = dcol.data() + ((ci * k + di) * k + dj) * hw;
              for (std::size_t yy = 0; yy < d.h; ++yy) {
                const long sy = long(yy) + long(di) - long(pad);
                if (sy < 0 || sy >= long(d.h)) continue;
                for (std::size_t xx = 0; xx < d.w; ++xx) {
                  const long sx = long(xx) + long(dj) - long(pad);
                  if (sx < 0 || sx >= long(d.w)) continue;
                  gx[(ci * d.h + sy) * d.w + sx] += row[yy * d.w + xx];
                }
              }
            }
      });
}

Var rfft2(Var x) {
  const FieldDims d = field_dims(x.value(), "rfft2");
  const std::size_t hw = fft::half_width(d.w);
  std::vector<cplx> spec = rfft_channels(x.value().data(), d);
  Tensor out({d.c, d.h, hw, 2});
  std::copy_n(reinterpret_cast<const double*>(spec.data()), out.size(), out.data());
  return tape_of(x).record(OpKind::Rfft2, {x}, std::move(out),
                           [d, hw](const Tensor& g, GradSlots in) {
                             // adjoint: x_bar = Re sum_k g_k e^{+ikx}
                             std::vector<cplx> buf(d.h * hw);
                             std::vector<double> tmp(d.h * d.w);
                             const cplx* gc = reinterpret_cast<const cplx*>(g.data());
                             for (std::size_t c = 0; c < d.c; ++c) {
                               for (std::size_t r = 0; r < d.h; ++r)
                                 for (std::size_t q = 0; q < hw; ++q)
                                   buf[r * hw + q] = gc[(c * d.h + r) * hw + q] / fft::column_weight(q, d.w);
                               fft::irfft2_raw(buf.data(), d.h, d.w, tmp.data());
                               double* gx = in[0]->data() + c * d.h * d.w;
                               for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
                             }
                           });
}

Var irfft2(Var spectrum, std::size_t width) {
  const Tensor& s = spectrum.value();
  require(s.rank() == 4 && s.dim(3) == 2 && s.dim(2) == fft::half_width(width),
          "irfft2: spectrum " + to_string(s.shape()) + " incompatible with width " +
              std::to_string(width));
  const FieldDims d{s.dim(0), s.dim(1), width};
  const std::size_t hw = s.dim(2);
  Tensor out({d.c, d.h, d.w});
  const cplx* sc = reinterpret_cast<const cplx*>(s.data());
  for (std::size_t c = 0; c < d.c; ++c)
    fft::irfft2(sc + c * d.h * hw, d.h, d.w, out.data() + c * d.h * d.w);
  return tape_of(spectrum).record(
      OpKind::Irfft2, {spectrum}, std::move(out), [d, hw](const Tensor& g, GradSlots in) {
        std::vector<cplx> spec = rfft_channels(g.data(), d);
        const double inv_n = 1.0 / double(d.h * d.w);
        cplx* gs = reinterpret_cast<cplx*>(in[0]->data());
        for (std::size_t c = 0; c < d.c; ++c)
          for (std::size_t r = 0; r < d.h; ++r)
            for (std::size_t q = 0; q < hw; ++q) {
              const std::size_t i = (c * d.h + r) * hw + q;
              gs[i] += spec[i] * (fft::column_weight(q, d.w) * inv_n);
            }
      });
}

Var spectral_conv(Var x, Var weight) {
  const FieldDims d = field_dims(x.value(), "spectral_conv");
  const Tensor& w = weight.value();
  require(w.rank() == 5 && w.dim(0) == d.c && w.dim(4) == 2 && w.dim(2) % 2 == 0,
          "spectral_conv: weight " + to_string(w.shape()) + " incompatible with input " +
              to_string(x.shape()));
  const std::size_t cout = w.dim(1), mh = w.dim(2) / 2, mw = w.dim(3);
  const std::size_t hw = fft::half_width(d.w);
  if (2 * mh > d.h || mw > hw)
    throw ShapeError("spectral_conv: truncation (" + std::to_string(mh) + "," +
                     std::to_string(mw) + ") exceeds spectrum of " + to_string(x.shape()));
  const std::size_t nmodes = 2 * mh * mw;
  auto row_of = [=](std::size_t rr) { return rr < mh ? rr : d.h - 2 * mh + rr; };

  auto xs = std::make_shared<std::vector<cplx>>(rfft_channels(x.value().data(), d));
  const cplx* wc = reinterpret_cast<const cplx*>(w.data());
  std::vector<cplx> ys(cout * d.h * hw);
  for (std::size_t m = 0; m < nmodes; ++m) {
    const std::size_t r = row_of(m / mw), q = m % mw, off = r * hw + q;
    for (std::size_t i = 0; i < d.c; ++i) {
      const cplx xi = (*xs)[i * d.h * hw + off];
      const cplx* wi = wc + i * cout * nmodes + m;
      for (std::size_t o = 0; o < cout; ++o) ys[o * d.h * hw + off] += wi[o * nmodes] * xi;
    }
  }
  Tensor out({cout, d.h, d.w});
  for (std::size_t o = 0; o < cout; ++o)
    fft::irfft2(ys.data() + o * d.h * hw, d.h, d.w, out.data() + o * d.h * d.w);

  const double* wv = w.data();
  return tape_of(x).record(
      OpKind::SpectralConv, {x, weight}, std::move(out),
      [xs, wv, d, cout, mh, mw, hw, nmodes, row_of](const Tensor& g, GradSlots in) {
        const FieldDims gd{cout, d.h, d.w};
        std::vector<cplx> gs = rfft_channels(g.data(), gd);
        const double inv_n = 1.0 / double(d.h * d.w);
        const cplx* wc = reinterpret_cast<const cplx*>(wv);
        cplx* gw = in[1] ? reinterpret_cast<cplx*>(in[1]->data()) : nullptr;
        std::vector<cplx> gx(in[0] ? d.c * d.h * hw : 0);
        for (std::size_t m = 0; m < nmodes; ++m) {
          const std::size_t r = row_of(m / mw), q = m % mw, off = r * hw + q;
          const double scale = fft::column_weight(q, d.w) * inv_n;
          for (std::size_t i = 0; i < d.c; ++i) {
            const cplx xi = std::conj((*xs)[i * d.h * hw + off]);
            cplx acc = 0.0;
            for (std::size_t o = 0; o < cout; ++o) {
              const cplx go = gs[o * d.h * hw + off] * scale;
              const std::size_t widx = (i * cout + o) * nmodes + m;
              if (gw) gw[widx] += go * xi;
              acc += std::conj(wc[widx]) * go;
            }
            if (in[0]) gx[i * d.h * hw + off] = acc / fft::column_weight(q, d.w);
          }
        }
        if (!in[0]) return;
        std::vector<double> tmp(d.h * d.w);
        for (std::size_t i = 0; i < d.c; ++i) {
          fft::irfft2_raw(gx.data() + i * d.h * hw, d.h, d.w, tmp.data());
          double* dst = in[0]->data() + i * d.h * d.w;
          for (std::size_t p = 0; p < tmp.size(); ++p) dst[p] += tmp[p];
        }
      });
}

namespace {

Tensor apply_mode_filter(const Tensor& x, const Tensor& mult, FieldDims d) {
  const std::size_t hw = fft::half_width(d.w);
  std::vector<cplx> spec = rfft_channels(x.data(), d);
  Tensor out(x.shape());
  for (std::size_t c = 0; c < d.c; ++c) {
    cplx* sc = spec.data() + c * d.h * hw;
    for (std::size_t i = 0; i < d.h * hw; ++i) sc[i] *= mult[i];
    fft::irfft2(sc, d.h, d.w, out.data() + c * d.h * d.w);
  }
  return out;
}

}  // namespace

Var mode_filter(Var x, const Tensor& multipliers) {
  const FieldDims d = field_dims(x.value(), "mode_filter");
  require(multipliers.shape() == Shape{d.h, fft::half_width(d.w)},
          "mode_filter: multipliers " + to_string(multipliers.shape()) +
              " incompatible with input " + to_string(x.shape()));
  // Real multipliers make the filter self-adjoint under the Hermitian projection.
  return tape_of(x).record(OpKind::ModeFilter, {x}, apply_mode_filter(x.value(), multipliers, d),
                           [multipliers, d](const Tensor& g, GradSlots in) {
                             *in[0] += apply_mode_filter(g, multipliers, d);
                           });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return tape_of(a).record(OpKind::Sum, {a}, Tensor::scalar(s),
                           [](const Tensor& g, GradSlots in) {
                             const double gv = g[0];
                             for (double& v : in[0]->values()) v += gv;
                           });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return tape_of(a).record(OpKind::Mean, {a}, Tensor::scalar(s / n),
                           [n](const Tensor& g, GradSlots in) {
                             const double gv = g[0] / n;
                             for (double& v : in[0]->values()) v += gv;
                           });
}

Var squared_error(Var x, const Tensor& target, const Tensor* mask) {
  const Tensor& xv = x.value();
  require_same_shape(xv, target, "squared_error");
  if (mask) require_same_shape(xv, *mask, "squared_error mask");
  Tensor resid(xv.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double m = mask ? (*mask)[i] : 1.0;
    resid[i] = m * (xv[i] - target[i]);
    s += resid[i] * (xv[i] - target[i]);
  }
  return tape_of(x).record(OpKind::SquaredError, {x}, Tensor::scalar(s),
                           [resid = std::move(resid)](const Tensor& g, GradSlots in) {
                             in[0]->axpy(2.0 * g[0], resid);
                           });
}

Var group_norm(Var x, std::size_t groups, double eps) {
  const Tensor& xv = x.value();
  require(xv.rank() >= 1 && groups > 0 && xv.dim(0) % groups == 0,
          "group_norm: " + std::to_string(groups) + " groups incompatible with " +
              to_string(xv.shape()));
  const std::size_t n = xv.size() / groups;
  auto xhat = std::make_shared<Tensor>(xv.shape());
  std::vector<double> inv_std(groups);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* src = xv.data() + gi * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += src[i];
    mu /= double(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= double(n);
    inv_std[gi] = 1.0 / std::sqrt(var + eps);
    double* dst = xhat->data() + gi * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = (src[i] - mu) * inv_std[gi];
  }
  Tensor out = *xhat;
  return tape_of(x).record(
      OpKind::GroupNorm, {x}, std::move(out),
      [xhat, inv_std, groups, n](const Tensor& g, GradSlots in) {
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const double* gy = g.data() + gi * n;
          const double* yh = xhat->data() + gi * n;
          double mg = 0.0, mgy = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            mg += gy[i];
            mgy += gy[i] * yh[i];
          }
          mg /= double(n);
          mgy /= double(n);
          double* gx = in[0]->data() + gi * n;
          for (std::size_t i = 0; i < n; ++i)
            gx[i] += inv_std[gi] * (gy[i] - mg - yh[i] * mgy);
        }
      });
}

Var channel_affine(Var x, Var scale_v, Var shift_v) {
  const Tensor& xv = x.value();
  require(xv.rank() >= 1, "channel_affine: scalar input");
  const std::size_t c = xv.dim(0), n = xv.size() / c;
  require(scale_v.value().shape() == Shape{c} && shift_v.value().shape() == Shape{c},
          "channel_affine: scale/shift must have shape [" + std::to_string(c) + "]");
  const Tensor& a = scale_v.value();
  const Tensor& b = shift_v.value();
  Tensor out(xv.shape());
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < n; ++i) out[ci * n + i] = xv[ci * n + i] * a[ci] + b[ci];
  return tape_of(x).record(OpKind::ChannelAffine, {x, scale_v, shift_v}, std::move(out),
                           [xp = xv.data(), ap = a.data(), c, n](const Tensor& g, GradSlots in) {
                             for (std::size_t ci = 0; ci < c; ++ci) {
                               double sa = 0.0, sb = 0.0;
                               for (std::size_t i = 0; i < n; ++i) {
                                 const double gi = g[ci * n + i];
                                 if (in[0]) (*in[0])[ci * n + i] += gi * ap[ci];
                                 sa += gi * xp[ci * n + i];
                                 sb += gi;
                               }
                               if (in[1]) (*in[1])[ci] += sa;
                               if (in[2]) (*in[2])[ci] += sb;
                             }
                           });
}

Var linear(Var x, Var weight, std::optional<Var> bias) {
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  require(xv.rank() == 1 && w.rank() == 2 && w.dim(1) == xv.dim(0),
          "linear: weight " + to_string(w.shape()) + " incompatible with input " +
              to_string(xv.shape()));
  const std::size_t m = w.dim(0), n = w.dim(1);
  if (bias) require(bias->value().shape() == Shape{m}, "linear: bias shape");
  Tensor out({m});
  Eigen::Map<Eigen::VectorXd>(out.data(), m).noalias() =
      ConstMapMat(w.data(), m, n) * Eigen::Map<const Eigen::VectorXd>(xv.data(), n);
  if (bias)
    for (std::size_t i = 0; i < m; ++i) out[i] += bias->value()[i];
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape_of(x).record(OpKind::Linear, std::move(inputs), std::move(out),
                           [xp = xv.data(), wp = w.data(), m, n](const Tensor& g, GradSlots in) {
                             Eigen::Map<const Eigen::VectorXd> gv(g.data(), m);
                             if (in[0])
                               Eigen::Map<Eigen::VectorXd>(in[0]->data(), n).noalias() +=
                                   ConstMapMat(wp, m, n).transpose() * gv;
                             if (in[1])
                               MapMat(in[1]->data(), m, n).noalias() +=
                                   gv * Eigen::Map<const Eigen::VectorXd>(xp, n).transpose();
                             if (in.size() > 2 && in[2]) *in[2] += g;
                           });
}

Var avg_pool2(Var x) {
  const FieldDims d = field_dims(x.value(), "avg_pool2");
  require(d.h % 2 == 0 && d.w % 2 == 0, "avg_pool2: odd extent in " + to_string(x.shape()));
  const std::size_t h2 = d.h / 2, w2 = d.w / 2;
  const Tensor& xv = x.value();
  Tensor out({d.c, h2, w2});
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j) {
        const double* p = xv.data() + (c * d.h + 2 * i) * d.w + 2 * j;
        out[(c * h2 + i) * w2 + j] = 0.25 * (p[0] + p[1] + p[d.w] + p[d.w + 1]);
      }
  return tape_of(x).record(OpKind::AvgPool2, {x}, std::move(out),
                           [d, h2, w2](const Tensor& g, GradSlots in) {
                             for (std::size_t c = 0; c < d.c; ++c)
                               for (std::size_t i = 0; i < h2; ++i)
                                 for (std::size_t j = 0; j < w2; ++j) {
                                   const double gv = 0.25 * g[(c * h2 + i) * w2 + j];
                                   double* p = in[0]->data() + (c * d.h + 2 * i) * d.w + 2 * j;
                                   p[0] += gv;
                                   p[1] += gv;
                                   p[d.w] += gv;
                                   p[d.w + 1] += gv;
                                 }
                           });
}

Var upsample2(Var x) {
  const FieldDims d = field_dims(x.value(), "upsample2");
  const std::size_t h2 = 2 * d.h, w2 = 2 * d.w;
  const Tensor& xv = x.value();
  Tensor out({d.c, h2, w2});
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j)
        out[(c * h2 + i) * w2 + j] = xv[(c * d.h + i / 2) * d.w + j / 2];
  return tape_of(x).record(OpKind::Upsample2, {x}, std::move(out),
                           [d, h2, w2](const Tensor& g, GradSlots in) {
                             for (std::size_t c = 0; c < d.c; ++c)
                               for (std::size_t i = 0; i < h2; ++i)
                                 for (std::size_t j = 0; j < w2; ++j)
                                   (*in[0])[(c * d.h + i / 2) * d.w + j / 2] +=
                                       g[(c * h2 + i) * w2 + j];
                           });
}

Var concat(std::span<const Var> parts) {
  require(!parts.empty(), "concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t lead = 0;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    require(s.size() == tail.size() + 1 && Shape(s.begin() + 1, s.end()) == tail,
            "concat: incompatible part " + to_string(s));
    lead += s[0];
    sizes.push_back(p.value().size());
  }
  Shape shape{lead};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor out(shape);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off);
    off += p.value().size();
  }
  return tape_of(parts[0]).record(OpKind::Concat, {parts.begin(), parts.end()}, std::move(out),
                                  [sizes](const Tensor& g, GradSlots in) {
                                    std::size_t off = 0;
                                    for (std::size_t k = 0; k < sizes.size(); ++k) {
                                      if (in[k])
                                        for (std::size_t i = 0; i < sizes[k]; ++i)
                                          (*in[k])[i] += g[off + i];
                                      off += sizes[k];
                                    }
                                  });
}

Var slice(Var x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  require(!s.empty() && begin + count <= s[0] && count > 0,
          "slice: [" + std::to_string(begin) + ", +" + std::to_string(count) +
              ") out of range for " + to_string(s));
  const std::size_t inner = x.value().size() / s[0];
  Shape shape = s;
  shape[0] = count;
  Tensor out(shape);
  std::copy_n(x.value().data() + begin * inner, count * inner, out.data());
  return tape_of(x).record(OpKind::Slice, {x}, std::move(out),
                           [begin, inner](const Tensor& g, GradSlots in) {
                             double* dst = in[0]->data() + begin * inner;
                             for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                           });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return tape_of(x).record(OpKind::Reshape, {x}, std::move(out),
                           [](const Tensor& g, GradSlots in) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                           });
}

}  // namespace fsd::tg
