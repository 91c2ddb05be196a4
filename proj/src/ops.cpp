#include "nst/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nst {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::MaxPool: return "max_pool";
    case OpKind::AvgPool: return "avg_pool";
    case OpKind::Upsample: return "upsample";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Gram: return "gram";
    case OpKind::SoftmaxChannel: return "softmax_channels";
    case OpKind::SoftmaxSpatial: return "softmax_spatial";
    case OpKind::Tanh: return "tanh";
    case OpKind::Softsign: return "softsign";
    case OpKind::ChannelMean: return "channel_mean";
    case OpKind::ChannelStd: return "channel_std";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::L2Norm: return "l2_norm";
  }
  return "unknown";
}

Index window_extent(Index size, int kernel, int stride, int padding, const char* what) {
  if (kernel <= 0 || stride <= 0 || padding < 0) {
    throw GeometryError(std::string(what) + ": kernel and stride must be positive, padding "
                        "non-negative (kernel " + std::to_string(kernel) + ", stride " +
                        std::to_string(stride) + ", padding " + std::to_string(padding) + ")");
  }
  const Index padded = size + 2 * static_cast<Index>(padding);
  if (size <= 0 || padded < kernel) {
    throw GeometryError(std::string(what) + ": window " + std::to_string(kernel) +
                        " does not fit padded extent " + std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

namespace {

template <typename Scalar>
using TensorT = BasicTensor<Scalar>;

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

// First and last output column whose input column ox*stride - padding + k
// lies inside [0, width). Returns an empty range as lo > hi.
std::pair<Index, Index> valid_range(Index out_extent, Index in_extent, int stride, int padding,
                                    int k) {
  const Index shift = static_cast<Index>(padding) - k;
  Index lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
  const Index top = in_extent - 1 + shift;
  Index hi = top < 0 ? -1 : std::min(out_extent - 1, top / stride);
  return {lo, hi};
}

struct ConvGeometry {
  Shape in;
  Shape weight;
  Shape out;
  int stride;
  int padding;
};

template <typename Scalar>
ConvGeometry conv_geometry(const TensorT<Scalar>& input, const TensorT<Scalar>& weight,
                           const TensorT<Scalar>& bias, int stride, int padding) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.c != ws.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels but weight " +
                     ws.str() + " expects " + std::to_string(ws.c));
  }
  if (bias.size() != ws.n) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.size()) + " values for " +
                     std::to_string(ws.n) + " output channels");
  }
  const Index oh = window_extent(xs.h, static_cast<int>(ws.h), stride, padding, "conv2d");
  const Index ow = window_extent(xs.w, static_cast<int>(ws.w), stride, padding, "conv2d");
  return {xs, ws, Shape{xs.n, ws.n, oh, ow}, stride, padding};
}

template <typename Scalar>
void conv_backward_input(const ConvGeometry& g, const TensorT<Scalar>& weight,
                         const TensorT<Scalar>& grad_out, TensorT<Scalar>& grad_in) {
  for (Index n = 0; n < g.out.n; ++n) {
    for (Index oc = 0; oc < g.out.c; ++oc) {
      const Scalar* go = grad_out.plane(n, oc);
      for (Index ic = 0; ic < g.in.c; ++ic) {
        Scalar* gi = grad_in.plane(n, ic);
        for (Index kh = 0; kh < g.weight.h; ++kh) {
          for (Index kw = 0; kw < g.weight.w; ++kw) {
            const Scalar wv = weight(oc, ic, kh, kw);
            auto [xlo, xhi] = valid_range(g.out.w, g.in.w, g.stride, g.padding, int(kw));
            for (Index y = 0; y < g.out.h; ++y) {
              const Index iy = y * g.stride - g.padding + kh;
              if (iy < 0 || iy >= g.in.h) continue;
              const Scalar* go_row = go + y * g.out.w;
              Scalar* gi_row = gi + iy * g.in.w;
              if (g.stride == 1) {
                const Index shift = kw - g.padding;
                for (Index x = xlo; x <= xhi; ++x) gi_row[x + shift] += wv * go_row[x];
              } else {
                for (Index x = xlo; x <= xhi; ++x) {
                  gi_row[x * g.stride - g.padding + kw] += wv * go_row[x];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void conv_backward_weight(const ConvGeometry& g, const TensorT<Scalar>& input,
                          const TensorT<Scalar>& grad_out, TensorT<Scalar>& grad_w) {
  for (Index oc = 0; oc < g.out.c; ++oc) {
    for (Index ic = 0; ic < g.in.c; ++ic) {
      for (Index kh = 0; kh < g.weight.h; ++kh) {
        for (Index kw = 0; kw < g.weight.w; ++kw) {
          auto [xlo, xhi] = valid_range(g.out.w, g.in.w, g.stride, g.padding, int(kw));
          Scalar acc = 0;
          for (Index n = 0; n < g.out.n; ++n) {
            const Scalar* go = grad_out.plane(n, oc);
            const Scalar* xp = input.plane(n, ic);
            for (Index y = 0; y < g.out.h; ++y) {
              const Index iy = y * g.stride - g.padding + kh;
              if (iy < 0 || iy >= g.in.h) continue;
              const Scalar* go_row = go + y * g.out.w;
              const Scalar* x_row = xp + iy * g.in.w;
              for (Index x = xlo; x <= xhi; ++x) {
                acc += go_row[x] * x_row[x * g.stride - g.padding + kw];
              }
            }
          }
          grad_w(oc, ic, kh, kw) += acc;
        }
      }
    }
  }
}

// Shared shape for ops of the form y = f(x) whose backward needs x, y, dy.
template <typename Scalar, typename Fwd, typename Bwd>
BasicVar<Scalar> unary(BasicVar<Scalar> x, OpKind kind, Fwd fwd, Bwd bwd) {
  Tape<Scalar>& tape = x.tape();
  const TensorT<Scalar>& xv = x.value();
  TensorT<Scalar> out(xv.shape());
  out.array() = xv.array().unaryExpr(fwd);
  const NodeId self = tape.size();
  const NodeId in = x.id();
  return tape.record(kind, {in}, std::move(out),
                     [in, self, bwd](const Tape<Scalar>& t, const TensorT<Scalar>& g,
                                     std::span<TensorT<Scalar>* const> grads) {
                       const auto& xa = t.value(in).array();
                       const auto& ya = t.value(self).array();
                       auto& ga = grads[0]->array();
                       for (Index i = 0; i < ga.size(); ++i) ga[i] += bwd(xa[i], ya[i], g[i]);
                     });
}

}  // namespace

// ---------------------------------------------------------------------------
// Value kernels
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& weight,
                           const BasicTensor<Scalar>& bias, int stride, int padding) {
  const ConvGeometry g = conv_geometry(input, weight, bias, stride, padding);
  TensorT<Scalar> out(g.out);
  for (Index n = 0; n < g.out.n; ++n) {
    for (Index oc = 0; oc < g.out.c; ++oc) {
      Scalar* acc = out.plane(n, oc);
      for (Index ic = 0; ic < g.in.c; ++ic) {
        const Scalar* xp = input.plane(n, ic);
        for (Index kh = 0; kh < g.weight.h; ++kh) {
          for (Index kw = 0; kw < g.weight.w; ++kw) {
            const Scalar wv = weight(oc, ic, kh, kw);
            auto [xlo, xhi] = valid_range(g.out.w, g.in.w, stride, padding, int(kw));
            for (Index y = 0; y < g.out.h; ++y) {
              const Index iy = y * stride - padding + kh;
              if (iy < 0 || iy >= g.in.h) continue;
              Scalar* acc_row = acc + y * g.out.w;
              const Scalar* x_row = xp + iy * g.in.w;
              if (stride == 1) {
                const Index shift = kw - padding;
                for (Index x = xlo; x <= xhi; ++x) acc_row[x] += wv * x_row[x + shift];
              } else {
                for (Index x = xlo; x <= xhi; ++x) {
                  acc_row[x] += wv * x_row[x * stride - padding + kw];
                }
              }
            }
          }
        }
      }
      const Scalar b = bias[oc];
      for (Index p = 0; p < g.out.plane(); ++p) acc[p] += b;
    }
  }
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& input) {
  return BasicTensor<Scalar>(input.shape(), input.array().max(Scalar(0)));
}

namespace {

// Writes pooled values into `out` and, for max pooling, the flat input index
// of each selected element into `argmax`.
template <typename Scalar>
void pool_forward(const TensorT<Scalar>& input, PoolKind kind, int window, int stride,
                  TensorT<Scalar>& out, std::vector<Index>* argmax) {
  const Shape& s = input.shape();
  const Index oh = window_extent(s.h, window, stride, 0, "pool2d");
  const Index ow = window_extent(s.w, window, stride, 0, "pool2d");
  out = TensorT<Scalar>(Shape{s.n, s.c, oh, ow});
  if (argmax) argmax->assign(static_cast<std::size_t>(out.size()), 0);
  const Scalar inv_area = Scalar(1) / Scalar(window * window);
  Index o = 0;
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      for (Index y = 0; y < oh; ++y) {
        for (Index x = 0; x < ow; ++x, ++o) {
          if (kind == PoolKind::Max) {
            Index best = input.offset(n, c, y * stride, x * stride);
            Scalar best_v = input[best];
            for (Index dy = 0; dy < window; ++dy) {
              for (Index dx = 0; dx < window; ++dx) {
                const Index i = input.offset(n, c, y * stride + dy, x * stride + dx);
                if (input[i] > best_v) {
                  best_v = input[i];
                  best = i;
                }
              }
            }
            out[o] = best_v;
            if (argmax) (*argmax)[static_cast<std::size_t>(o)] = best;
          } else {
            Scalar acc = 0;
            for (Index dy = 0; dy < window; ++dy) {
              for (Index dx = 0; dx < window; ++dx) {
                acc += input(n, c, y * stride + dy, x * stride + dx);
              }
            }
            out[o] = acc * inv_area;
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
BasicTensor<Scalar> pool2d(const BasicTensor<Scalar>& input, PoolKind kind, int window,
                           int stride) {
  TensorT<Scalar> out;
  pool_forward(input, kind, window, stride, out, nullptr);
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> upsample_nearest(const BasicTensor<Scalar>& input, int factor) {
  if (factor <= 0) throw GeometryError("upsample: factor must be positive");
  const Shape& s = input.shape();
  TensorT<Scalar> out(Shape{s.n, s.c, s.h * factor, s.w * factor});
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c)
      for (Index y = 0; y < s.h * factor; ++y)
        for (Index x = 0; x < s.w * factor; ++x)
          out(n, c, y, x) = input(n, c, y / factor, x / factor);
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicVar<Scalar> conv2d(BasicVar<Scalar> input, BasicVar<Scalar> weight, BasicVar<Scalar> bias,
                        int stride, int padding) {
  Tape<Scalar>& tape = input.tape();
  const ConvGeometry g = conv_geometry(input.value(), weight.value(), bias.value(), stride,
                                       padding);
  TensorT<Scalar> out = conv2d(input.value(), weight.value(), bias.value(), stride, padding);
  const NodeId x = input.id(), w = weight.id();
  return tape.record(OpKind::Conv2d, {x, w, bias.id()}, std::move(out),
                     [g, x, w](const Tape<Scalar>& t, const TensorT<Scalar>& go,
                               std::span<TensorT<Scalar>* const> grads) {
                       if (grads[0]) conv_backward_input(g, t.value(w), go, *grads[0]);
                       if (grads[1]) conv_backward_weight(g, t.value(x), go, *grads[1]);
                       if (grads[2]) {
                         TensorT<Scalar>& gb = *grads[2];
                         for (Index oc = 0; oc < g.out.c; ++oc) {
                           Scalar acc = 0;
                           for (Index n = 0; n < g.out.n; ++n) {
                             const Scalar* p = go.plane(n, oc);
                             for (Index i = 0; i < g.out.plane(); ++i) acc += p[i];
                           }
                           gb[oc] += acc;
                         }
                       }
                     });
}

template <typename Scalar>
BasicVar<Scalar> relu(BasicVar<Scalar> x) {
  return unary(
      x, OpKind::Relu, [](Scalar v) { return v > Scalar(0) ? v : Scalar(0); },
      [](Scalar xv, Scalar, Scalar g) { return xv > Scalar(0) ? g : Scalar(0); });
}

template <typename Scalar>
BasicVar<Scalar> pool2d(BasicVar<Scalar> x, PoolKind kind, int window, int stride) {
  Tape<Scalar>& tape = x.tape();
  TensorT<Scalar> out;
  std::vector<Index> argmax;
  pool_forward(x.value(), kind, window, stride, out,
               kind == PoolKind::Max ? &argmax : nullptr);
  const Shape in_shape = x.shape();
  const Shape out_shape = out.shape();
  if (kind == PoolKind::Max) {
    return tape.record(OpKind::MaxPool, {x.id()}, std::move(out),
                       [argmax = std::move(argmax)](const Tape<Scalar>&,
                                                    const TensorT<Scalar>& g,
                                                    std::span<TensorT<Scalar>* const> grads) {
                         TensorT<Scalar>& gi = *grads[0];
                         for (std::size_t o = 0; o < argmax.size(); ++o) {
                           gi[argmax[o]] += g[static_cast<Index>(o)];
                         }
                       });
  }
  return tape.record(OpKind::AvgPool, {x.id()}, std::move(out),
                     [in_shape, out_shape, window, stride](
                         const Tape<Scalar>&, const TensorT<Scalar>& g,
                         std::span<TensorT<Scalar>* const> grads) {
                       TensorT<Scalar>& gi = *grads[0];
                       const Scalar inv_area = Scalar(1) / Scalar(window * window);
                       for (Index n = 0; n < out_shape.n; ++n)
                         for (Index c = 0; c < out_shape.c; ++c)
                           for (Index y = 0; y < out_shape.h; ++y)
                             for (Index xo = 0; xo < out_shape.w; ++xo) {
                               const Scalar share = g(n, c, y, xo) * inv_area;
                               for (Index dy = 0; dy < window; ++dy)
                                 for (Index dx = 0; dx < window; ++dx)
                                   gi(n, c, y * stride + dy, xo * stride + dx) += share;
                             }
                       (void)in_shape;
                     });
}

template <typename Scalar>
BasicVar<Scalar> upsample_nearest(BasicVar<Scalar> x, int factor) {
  TensorT<Scalar> out = upsample_nearest(x.value(), factor);
  return x.tape().record(
      OpKind::Upsample, {x.id()}, std::move(out),
      [factor](const Tape<Scalar>&, const TensorT<Scalar>& g,
               std::span<TensorT<Scalar>* const> grads) {
        TensorT<Scalar>& gi = *grads[0];
        const Shape& s = g.shape();
        for (Index n = 0; n < s.n; ++n)
          for (Index c = 0; c < s.c; ++c)
            for (Index y = 0; y < s.h; ++y)
              for (Index xo = 0; xo < s.w; ++xo) gi(n, c, y / factor, xo / factor) += g(n, c, y, xo);
      });
}

template <typename Scalar>
BasicVar<Scalar> residual_add(BasicVar<Scalar> a, BasicVar<Scalar> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  TensorT<Scalar> out(a.shape(), a.value().array() + b.value().array());
  return a.tape().record(OpKind::Add, {a.id(), b.id()}, std::move(out),
                         [](const Tape<Scalar>&, const TensorT<Scalar>& g,
                            std::span<TensorT<Scalar>* const> grads) {
                           if (grads[0]) grads[0]->array() += g.array();
                           if (grads[1]) grads[1]->array() += g.array();
                         });
}

template <typename Scalar>
BasicVar<Scalar> sub(BasicVar<Scalar> a, BasicVar<Scalar> b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  TensorT<Scalar> out(a.shape(), a.value().array() - b.value().array());
  return a.tape().record(OpKind::Sub, {a.id(), b.id()}, std::move(out),
                         [](const Tape<Scalar>&, const TensorT<Scalar>& g,
                            std::span<TensorT<Scalar>* const> grads) {
                           if (grads[0]) grads[0]->array() += g.array();
                           if (grads[1]) grads[1]->array() -= g.array();
                         });
}

template <typename Scalar>
BasicVar<Scalar> mul(BasicVar<Scalar> a, BasicVar<Scalar> b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  TensorT<Scalar> out(a.shape(), a.value().array() * b.value().array());
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record(OpKind::Mul, {ia, ib}, std::move(out),
                         [ia, ib](const Tape<Scalar>& t, const TensorT<Scalar>& g,
                                  std::span<TensorT<Scalar>* const> grads) {
                           if (grads[0]) grads[0]->array() += g.array() * t.value(ib).array();
                           if (grads[1]) grads[1]->array() += g.array() * t.value(ia).array();
                         });
}

template <typename Scalar>
BasicVar<Scalar> div(BasicVar<Scalar> a, BasicVar<Scalar> b) {
  require_same_shape(a.shape(), b.shape(), "div");
  TensorT<Scalar> out(a.shape(), a.value().array() / b.value().array());
  const NodeId ia = a.id(), ib = b.id();
  return a.tape().record(OpKind::Div, {ia, ib}, std::move(out),
                         [ia, ib](const Tape<Scalar>& t, const TensorT<Scalar>& g,
                                  std::span<TensorT<Scalar>* const> grads) {
                           const auto& av = t.value(ia).array();
                           const auto& bv = t.value(ib).array();
                           if (grads[0]) grads[0]->array() += g.array() / bv;
                           if (grads[1]) grads[1]->array() -= g.array() * av / (bv * bv);
                         });
}

template <typename Scalar>
BasicVar<Scalar> scale(BasicVar<Scalar> x, Scalar factor) {
  TensorT<Scalar> out(x.shape(), x.value().array() * factor);
  return x.tape().record(OpKind::Scale, {x.id()}, std::move(out),
                         [factor](const Tape<Scalar>&, const TensorT<Scalar>& g,
                                  std::span<TensorT<Scalar>* const> grads) {
                           grads[0]->array() += g.array() * factor;
                         });
}

template <typename Scalar>
BasicVar<Scalar> add_scalar(BasicVar<Scalar> x, Scalar offset) {
  TensorT<Scalar> out(x.shape(), x.value().array() + offset);
  return x.tape().record(OpKind::AddScalar, {x.id()}, std::move(out),
                         [](const Tape<Scalar>&, const TensorT<Scalar>& g,
                            std::span<TensorT<Scalar>* const> grads) {
                           grads[0]->array() += g.array();
                         });
}

template <typename Scalar>
BasicVar<Scalar> square(BasicVar<Scalar> x) {
  return unary(
      x, OpKind::Square, [](Scalar v) { return v * v; },
      [](Scalar xv, Scalar, Scalar g) { return Scalar(2) * xv * g; });
}

namespace {

template <typename Scalar>
Scalar ordered_sum(const TensorT<Scalar>& t) {
  Scalar acc = 0;
  for (Index i = 0; i < t.size(); ++i) acc += t[i];
  return acc;
}

}  // namespace

template <typename Scalar>
BasicVar<Scalar> sum(BasicVar<Scalar> x) {
  auto out = TensorT<Scalar>::scalar(ordered_sum(x.value()));
  return x.tape().record(OpKind::Sum, {x.id()}, std::move(out),
                         [](const Tape<Scalar>&, const TensorT<Scalar>& g,
                            std::span<TensorT<Scalar>* const> grads) {
                           grads[0]->array() += g[0];
                         });
}

template <typename Scalar>
BasicVar<Scalar> mean(BasicVar<Scalar> x) {
  const Index count = x.value().size();
  if (count == 0) throw ContractError("mean of an empty tensor");
  auto out = TensorT<Scalar>::scalar(ordered_sum(x.value()) / Scalar(count));
  return x.tape().record(OpKind::Mean, {x.id()}, std::move(out),
                         [count](const Tape<Scalar>&, const TensorT<Scalar>& g,
                                 std::span<TensorT<Scalar>* const> grads) {
                           grads[0]->array() += g[0] / Scalar(count);
                         });
}

template <typename Scalar>
BasicVar<Scalar> tanh(BasicVar<Scalar> x) {
  return unary(
      x, OpKind::Tanh, [](Scalar v) { return std::tanh(v); },
      [](Scalar, Scalar y, Scalar g) { return (Scalar(1) - y * y) * g; });
}

template <typename Scalar>
BasicVar<Scalar> softsign(BasicVar<Scalar> x) {
  return unary(
      x, OpKind::Softsign, [](Scalar v) { return v / (Scalar(1) + std::abs(v)); },
      [](Scalar xv, Scalar, Scalar g) {
        const Scalar d = Scalar(1) + std::abs(xv);
        return g / (d * d);
      });
}

namespace {

// Softmax over `count` elements spaced `step` apart, starting at `base`.
template <typename Scalar>
void softmax_strided(const Scalar* in, Scalar* out, Index count, Index step) {
  Scalar peak = in[0];
  for (Index k = 1; k < count; ++k) peak = std::max(peak, in[k * step]);
  Scalar total = 0;
  for (Index k = 0; k < count; ++k) {
    out[k * step] = std::exp(in[k * step] - peak);
    total += out[k * step];
  }
  for (Index k = 0; k < count; ++k) out[k * step] /= total;
}

template <typename Scalar>
void softmax_backward_strided(const Scalar* y, const Scalar* g, Scalar* gi, Index count,
                              Index step) {
  Scalar dot = 0;
  for (Index k = 0; k < count; ++k) dot += g[k * step] * y[k * step];
  for (Index k = 0; k < count; ++k) gi[k * step] += y[k * step] * (g[k * step] - dot);
}

}  // namespace

template <typename Scalar>
BasicVar<Scalar> softmax_channels(BasicVar<Scalar> x) {
  const TensorT<Scalar>& xv = x.value();
  const Shape s = xv.shape();
  TensorT<Scalar> out(s);
  for (Index n = 0; n < s.n; ++n)
    for (Index p = 0; p < s.plane(); ++p)
      softmax_strided(xv.plane(n, 0) + p, out.plane(n, 0) + p, s.c, s.plane());
  const NodeId self = x.tape().size();
  return x.tape().record(OpKind::SoftmaxChannel, {x.id()}, std::move(out),
                         [self, s](const Tape<Scalar>& t, const TensorT<Scalar>& g,
                                   std::span<TensorT<Scalar>* const> grads) {
                           const TensorT<Scalar>& y = t.value(self);
                           for (Index n = 0; n < s.n; ++n)
                             for (Index p = 0; p < s.plane(); ++p)
                               softmax_backward_strided(y.plane(n, 0) + p, g.plane(n, 0) + p,
                                                        grads[0]->plane(n, 0) + p, s.c,
                                                        s.plane());
                         });
}

template <typename Scalar>
BasicVar<Scalar> softmax_spatial(BasicVar<Scalar> x) {
  const TensorT<Scalar>& xv = x.value();
  const Shape s = xv.shape();
  TensorT<Scalar> out(s);
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) softmax_strided(xv.plane(n, c), out.plane(n, c), s.plane(), 1);
  const NodeId self = x.tape().size();
  return x.tape().record(OpKind::SoftmaxSpatial, {x.id()}, std::move(out),
                         [self, s](const Tape<Scalar>& t, const TensorT<Scalar>& g,
                                   std::span<TensorT<Scalar>* const> grads) {
                           const TensorT<Scalar>& y = t.value(self);
                           for (Index n = 0; n < s.n; ++n)
                             for (Index c = 0; c < s.c; ++c)
                               softmax_backward_strided(y.plane(n, c), g.plane(n, c),
                                                        grads[0]->plane(n, c), s.plane(), 1);
                         });
}

template <typename Scalar>
BasicVar<Scalar> channel_mean(BasicVar<Scalar> x) {
  const TensorT<Scalar>& xv = x.value();
  const Shape s = xv.shape();
  if (s.plane() == 0) throw ContractError("channel_mean: empty spatial extent");
  TensorT<Scalar> out(Shape{s.n, s.c, 1, 1});
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) {
      const Scalar* p = xv.plane(n, c);
      Scalar acc = 0;
      for (Index i = 0; i < s.plane(); ++i) acc += p[i];
      out(n, c, 0, 0) = acc / Scalar(s.plane());
    }
  return x.tape().record(OpKind::ChannelMean, {x.id()}, std::move(out),
                         [s](const Tape<Scalar>&, const TensorT<Scalar>& g,
                             std::span<TensorT<Scalar>* const> grads) {
                           for (Index n = 0; n < s.n; ++n)
                             for (Index c = 0; c < s.c; ++c) {
                               const Scalar share = g(n, c, 0, 0) / Scalar(s.plane());
                               Scalar* gi = grads[0]->plane(n, c);
                               for (Index i = 0; i < s.plane(); ++i) gi[i] += share;
                             }
                         });
}

template <typename Scalar>
BasicVar<Scalar> channel_std(BasicVar<Scalar> x, Scalar epsilon) {
  if (!(epsilon > Scalar(0))) throw ContractError("channel_std: epsilon must be positive");
  const TensorT<Scalar>& xv = x.value();
  const Shape s = xv.shape();
  if (s.plane() == 0) throw ContractError("channel_std: empty spatial extent");
  TensorT<Scalar> mu(Shape{s.n, s.c, 1, 1});
  TensorT<Scalar> out(Shape{s.n, s.c, 1, 1});
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) {
      const Scalar* p = xv.plane(n, c);
      Scalar acc = 0;
      for (Index i = 0; i < s.plane(); ++i) acc += p[i];
      const Scalar m = acc / Scalar(s.plane());
      Scalar var = 0;
      for (Index i = 0; i < s.plane(); ++i) var += (p[i] - m) * (p[i] - m);
      var /= Scalar(s.plane());
      mu(n, c, 0, 0) = m;
      out(n, c, 0, 0) = std::sqrt(var + epsilon * epsilon);
    }
  const NodeId in = x.id();
  const NodeId self = x.tape().size();
  return x.tape().record(
      OpKind::ChannelStd, {in}, std::move(out),
      [in, self, s, mu = std::move(mu)](const Tape<Scalar>& t, const TensorT<Scalar>& g,
                                        std::span<TensorT<Scalar>* const> grads) {
        const TensorT<Scalar>& xv = t.value(in);
        const TensorT<Scalar>& sd = t.value(self);
        for (Index n = 0; n < s.n; ++n)
          for (Index c = 0; c < s.c; ++c) {
            const Scalar coef = g(n, c, 0, 0) / (Scalar(s.plane()) * sd(n, c, 0, 0));
            const Scalar m = mu(n, c, 0, 0);
            const Scalar* p = xv.plane(n, c);
            Scalar* gi = grads[0]->plane(n, c);
            for (Index i = 0; i < s.plane(); ++i) gi[i] += coef * (p[i] - m);
          }
      });
}

template <typename Scalar>
BasicVar<Scalar> broadcast_to(BasicVar<Scalar> x, Shape shape) {
  const Shape s = x.shape();
  auto fits = [](Index from, Index to) { return from == to || from == 1; };
  if (!fits(s.n, shape.n) || !fits(s.c, shape.c) || !fits(s.h, shape.h) || !fits(s.w, shape.w)) {
    throw ShapeError("cannot broadcast " + s.str() + " to " + shape.str());
  }
  const TensorT<Scalar>& xv = x.value();
  TensorT<Scalar> out(shape);
  auto src = [s](Index n, Index c, Index h, Index w) {
    return ((std::min(n, s.n - 1) * s.c + std::min(c, s.c - 1)) * s.h + std::min(h, s.h - 1)) *
               s.w +
           std::min(w, s.w - 1);
  };
  for (Index n = 0; n < shape.n; ++n)
    for (Index c = 0; c < shape.c; ++c)
      for (Index h = 0; h < shape.h; ++h)
        for (Index w = 0; w < shape.w; ++w) out(n, c, h, w) = xv[src(n, c, h, w)];
  return x.tape().record(OpKind::Broadcast, {x.id()}, std::move(out),
                         [shape, src](const Tape<Scalar>&, const TensorT<Scalar>& g,
                                      std::span<TensorT<Scalar>* const> grads) {
                           TensorT<Scalar>& gi = *grads[0];
                           for (Index n = 0; n < shape.n; ++n)
                             for (Index c = 0; c < shape.c; ++c)
                               for (Index h = 0; h < shape.h; ++h)
                                 for (Index w = 0; w < shape.w; ++w)
                                   gi[src(n, c, h, w)] += g(n, c, h, w);
                         });
}

template <typename Scalar>
BasicVar<Scalar> l2_norm(BasicVar<Scalar> x) {
  const TensorT<Scalar>& xv = x.value();
  Scalar acc = 0;
  for (Index i = 0; i < xv.size(); ++i) acc += xv[i] * xv[i];
  const Scalar norm = std::sqrt(acc);
  const NodeId in = x.id();
  return x.tape().record(OpKind::L2Norm, {in}, TensorT<Scalar>::scalar(norm),
                         [in, norm](const Tape<Scalar>& t, const TensorT<Scalar>& g,
                                    std::span<TensorT<Scalar>* const> grads) {
                           if (norm == Scalar(0)) return;
                           grads[0]->array() += t.value(in).array() * (g[0] / norm);
                         });
}

#define NST_INSTANTIATE_OPS(S)                                                               \
  template BasicTensor<S> conv2d(const BasicTensor<S>&, const BasicTensor<S>&,               \
                                 const BasicTensor<S>&, int, int);                           \
  template BasicTensor<S> relu(const BasicTensor<S>&);                                       \
  template BasicTensor<S> pool2d(const BasicTensor<S>&, PoolKind, int, int);                 \
  template BasicTensor<S> upsample_nearest(const BasicTensor<S>&, int);                      \
  template BasicVar<S> conv2d(BasicVar<S>, BasicVar<S>, BasicVar<S>, int, int);              \
  template BasicVar<S> relu(BasicVar<S>);                                                    \
  template BasicVar<S> pool2d(BasicVar<S>, PoolKind, int, int);                              \
  template BasicVar<S> upsample_nearest(BasicVar<S>, int);                                   \
  template BasicVar<S> residual_add(BasicVar<S>, BasicVar<S>);                               \
  template BasicVar<S> sub(BasicVar<S>, BasicVar<S>);                                        \
  template BasicVar<S> mul(BasicVar<S>, BasicVar<S>);                                        \
  template BasicVar<S> div(BasicVar<S>, BasicVar<S>);                                        \
  template BasicVar<S> scale(BasicVar<S>, S);                                                \
  template BasicVar<S> add_scalar(BasicVar<S>, S);                                           \
  template BasicVar<S> square(BasicVar<S>);                                                  \
  template BasicVar<S> sum(BasicVar<S>);                                                     \
  template BasicVar<S> mean(BasicVar<S>);                                                    \
  template BasicVar<S> tanh(BasicVar<S>);                                                    \
  template BasicVar<S> softsign(BasicVar<S>);                                                \
  template BasicVar<S> softmax_channels(BasicVar<S>);                                        \
  template BasicVar<S> softmax_spatial(BasicVar<S>);                                         \
  template BasicVar<S> channel_mean(BasicVar<S>);                                            \
  template BasicVar<S> channel_std(BasicVar<S>, S);                                          \
  template BasicVar<S> broadcast_to(BasicVar<S>, Shape);                                     \
  template BasicVar<S> l2_norm(BasicVar<S>);

NST_INSTANTIATE_OPS(float)
NST_INSTANTIATE_OPS(double)

#undef NST_INSTANTIATE_OPS

}  // namespace nst
