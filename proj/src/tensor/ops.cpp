#include "catmouse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace catmouse::inline CATMOUSE_PRECISION {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

// Eight independent partial sums let the compiler vectorize the reduction
// while keeping a fixed summation order.
Real dot(const Real* a, const Real* b, std::size_t n) {
  Real acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  Real total = 0;
  for (; i < n; ++i) total += a[i] * b[i];
  for (int k = 0; k < 8; ++k) total += acc[k];
  return total;
}

void axpy(Real alpha, const Real* x, Real* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& a, std::string_view name, Forward f, Derivative df) {
  std::vector<Real> out(a.numel());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  const bool tracked = detail::any_requires_grad({&a});
  Tensor result = detail::make_result(a.shape(), std::move(out), tracked);
  if (tracked) {
    NodePtr x = a.node(), o = result.node();
    detail::record_op(name, {&a}, result, [x, o, df] {
      x->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        x->grad[i] += o->grad[i] * df(x->data[i], o->data[i]);
      }
    });
  }
  return result;
}

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, kh, kw, oh, ow;
  int stride, pad;
  std::size_t rows() const { return cin * kh * kw; }
  std::size_t cols() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d: expected input [B,Cin,H,W] and kernel [Cout,Cin,kh,kw], got " +
                         shape_string(input.shape()) + " and " + shape_string(kernel.shape()));
  }
  if (stride < 1 || padding < 0) {
    throw DimensionError("conv2d: stride must be >= 1 and padding >= 0");
  }
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (kernel.dim(1) != g.cin) {
    throw DimensionError("conv2d: input has " + std::to_string(g.cin) +
                         " channels but kernel expects " + std::to_string(kernel.dim(1)));
  }
  const std::size_t ph = g.h + 2 * static_cast<std::size_t>(padding);
  const std::size_t pw = g.w + 2 * static_cast<std::size_t>(padding);
  if (g.kh > ph || g.kw > pw) {
    throw DimensionError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                         " larger than padded input " + std::to_string(ph) + "x" +
                         std::to_string(pw));
  }
  g.oh = (ph - g.kh) / static_cast<std::size_t>(stride) + 1;
  g.ow = (pw - g.kw) / static_cast<std::size_t>(stride) + 1;
  return g;
}

void im2col(const ConvGeometry& g, const Real* image, Real* col) {
  const long s = g.stride, p = g.pad;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        Real* row = col + ((c * g.kh + ky) * g.kw + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky);
          Real* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, Real(0));
            continue;
          }
          const Real* src = image + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox) * s - p + static_cast<long>(kx);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? Real(0)
                                                               : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const Real* col, Real* image) {
  const long s = g.stride, p = g.pad;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const Real* row = col + ((c * g.kh + ky) * g.kw + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy) * s - p + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          Real* dst = image + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const Real* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox) * s - p + static_cast<long>(kx);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  const bool tracked = detail::any_requires_grad({&a, &b});
  Tensor result = detail::make_result(a.shape(), std::move(out), tracked);
  if (tracked) {
    NodePtr x = a.node(), y = b.node(), o = result.node();
    detail::record_op("add", {&a, &b}, result, [x, y, o] {
      for (NodePtr n : {x, y}) {
        if (!n->requires_grad) continue;
        n->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) n->grad[i] += o->grad[i];
      }
    });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  const bool tracked = detail::any_requires_grad({&a, &b});
  Tensor result = detail::make_result(a.shape(), std::move(out), tracked);
  if (tracked) {
    NodePtr x = a.node(), y = b.node(), o = result.node();
    detail::record_op("sub", {&a, &b}, result, [x, y, o] {
      if (x->requires_grad) {
        x->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) x->grad[i] += o->grad[i];
      }
      if (y->requires_grad) {
        y->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) y->grad[i] -= o->grad[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  const bool tracked = detail::any_requires_grad({&a, &b});
  Tensor result = detail::make_result(a.shape(), std::move(out), tracked);
  if (tracked) {
    NodePtr x = a.node(), y = b.node(), o = result.node();
    detail::record_op("mul", {&a, &b}, result, [x, y, o] {
      if (x->requires_grad) {
        x->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) x->grad[i] += o->grad[i] * y->data[i];
      }
      if (y->requires_grad) {
        y->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) y->grad[i] += o->grad[i] * x->data[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, Real factor) {
  return unary(
      a, "scale", [factor](Real x) { return x * factor; },
      [factor](Real, Real) { return factor; });
}

Tensor add_scalar(const Tensor& a, Real offset) {
  return unary(
      a, "add_scalar", [offset](Real x) { return x + offset; }, [](Real, Real) { return Real(1); });
}

Tensor sum(const Tensor& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  const bool tracked = detail::any_requires_grad({&a});
  Tensor result = detail::make_result(Shape{}, {total}, tracked);
  if (tracked) {
    NodePtr x = a.node(), o = result.node();
    detail::record_op("sum", {&a}, result, [x, o] {
      x->ensure_grad();
      for (auto& g : x->grad) g += o->grad[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), Real(1) / static_cast<Real>(a.numel()));
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](Real x) {
        return x >= 0 ? Real(1) / (Real(1) + std::exp(-x))
                      : std::exp(x) / (Real(1) + std::exp(x));
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor leaky_relu(const Tensor& a, Real negative_slope) {
  return unary(
      a, "leaky_relu", [negative_slope](Real x) { return x > 0 ? x : negative_slope * x; },
      [negative_slope](Real x, Real) { return x > 0 ? Real(1) : negative_slope; });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw DimensionError("linear: incompatible shapes " + shape_string(x.shape()) + " and " +
                         shape_string(weight.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) {
    throw DimensionError("linear: bias shape " + shape_string(bias.shape()) + " does not match " +
                         std::to_string(outf) + " outputs");
  }
  std::vector<Real> out(n * outf);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < outf; ++o) {
      out[i * outf + o] = dot(&x.data()[i * in], &weight.data()[o * in], in) +
                          (bias.defined() ? bias.data()[o] : Real(0));
    }
  }
  const bool tracked = detail::any_requires_grad({&x, &weight, &bias});
  Tensor result = detail::make_result({n, outf}, std::move(out), tracked);
  if (tracked) {
    NodePtr xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr,
            o = result.node();
    detail::record_op("linear", {&x, &weight, &bias}, result, [=] {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < outf; ++k) {
          const Real g = o->grad[i * outf + k];
          if (xn->requires_grad) {
            xn->ensure_grad();
            axpy(g, &wn->data[k * in], &xn->grad[i * in], in);
          }
          if (wn->requires_grad) {
            wn->ensure_grad();
            axpy(g, &xn->data[i * in], &wn->grad[k * in], in);
          }
          if (bn && bn->requires_grad) {
            bn->ensure_grad();
            bn->grad[k] += g;
          }
        }
      }
    });
  }
  return result;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  return conv2d(input, kernel, Tensor{}, stride, padding);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding) {
  const ConvGeometry g = conv_geometry(input, kernel, stride, padding);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw DimensionError("conv2d: bias shape " + shape_string(bias.shape()) +
                         " does not match " + std::to_string(g.cout) + " output channels");
  }
  const std::size_t rows = g.rows(), cols = g.cols();
  const std::size_t in_stride = g.cin * g.h * g.w, out_stride = g.cout * cols;
  std::vector<Real> out(g.batch * out_stride);
  std::vector<Real> col(rows * cols);
  const Real* k = kernel.data().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(g, input.data().data() + b * in_stride, col.data());
    for (std::size_t co = 0; co < g.cout; ++co) {
      Real* orow = out.data() + b * out_stride + co * cols;
      std::fill(orow, orow + cols, bias.defined() ? bias.data()[co] : Real(0));
      for (std::size_t r = 0; r < rows; ++r) axpy(k[co * rows + r], col.data() + r * cols, orow, cols);
    }
  }
  const bool tracked = detail::any_requires_grad({&input, &kernel, &bias});
  Tensor result = detail::make_result({g.batch, g.cout, g.oh, g.ow}, std::move(out), tracked);
  if (tracked) {
    NodePtr in = input.node(), kn = kernel.node(), bn = bias.defined() ? bias.node() : nullptr,
            o = result.node();
    detail::record_op("conv2d", {&input, &kernel, &bias}, result, [=] {
      std::vector<Real> colbuf(rows * cols);
      std::vector<Real> dcol;
      if (in->requires_grad) {
        in->ensure_grad();
        dcol.resize(rows * cols);
      }
      if (kn->requires_grad) kn->ensure_grad();
      if (bn && bn->requires_grad) bn->ensure_grad();
      for (std::size_t b = 0; b < g.batch; ++b) {
        const Real* gout = o->grad.data() + b * out_stride;
        if (kn->requires_grad) {
          im2col(g, in->data.data() + b * in_stride, colbuf.data());
          for (std::size_t co = 0; co < g.cout; ++co) {
            for (std::size_t r = 0; r < rows; ++r) {
              kn->grad[co * rows + r] += dot(gout + co * cols, colbuf.data() + r * cols, cols);
            }
          }
        }
        if (bn && bn->requires_grad) {
          for (std::size_t co = 0; co < g.cout; ++co) {
            Real s = 0;
            for (std::size_t p = 0; p < cols; ++p) s += gout[co * cols + p];
            bn->grad[co] += s;
          }
        }
        if (in->requires_grad) {
          std::fill(dcol.begin(), dcol.end(), Real(0));
          for (std::size_t co = 0; co < g.cout; ++co) {
            for (std::size_t r = 0; r < rows; ++r) {
              axpy(kn->data[co * rows + r], gout + co * cols, dcol.data() + r * cols, cols);
            }
          }
          col2im_add(g, dcol.data(), in->grad.data() + b * in_stride);
        }
      }
    });
  }
  return result;
}

Tensor total_variation(const Tensor& image) {
  if (image.rank() != 3) {
    throw DimensionError("total_variation: expected [C,H,W], got " + shape_string(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t pairs = c * (h * (w - (w > 0 ? 1 : 0)) + (h - (h > 0 ? 1 : 0)) * w);
  const auto x = image.data();
  Real total = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t idx = (ch * h + i) * w + j;
        if (j + 1 < w) total += std::abs(x[idx + 1] - x[idx]);
        if (i + 1 < h) total += std::abs(x[idx + w] - x[idx]);
      }
    }
  }
  const Real norm = pairs ? Real(1) / static_cast<Real>(pairs) : Real(0);
  const bool tracked = detail::any_requires_grad({&image});
  Tensor result = detail::make_result(Shape{}, {total * norm}, tracked);
  if (tracked) {
    NodePtr in = image.node(), o = result.node();
    detail::record_op("total_variation", {&image}, result, [=] {
      in->ensure_grad();
      const Real g = o->grad[0] * norm;
      auto sign = [](Real d) { return d > 0 ? Real(1) : (d < 0 ? Real(-1) : Real(0)); };
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const std::size_t idx = (ch * h + i) * w + j;
            if (j + 1 < w) {
              const Real s = g * sign(in->data[idx + 1] - in->data[idx]);
              in->grad[idx + 1] += s;
              in->grad[idx] -= s;
            }
            if (i + 1 < h) {
              const Real s = g * sign(in->data[idx + w] - in->data[idx]);
              in->grad[idx + w] += s;
              in->grad[idx] -= s;
            }
          }
        }
      }
    });
  }
  return result;
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack: no tensors");
  const Shape& inner = parts.front().shape();
  const std::size_t n = parts.front().numel();
  std::vector<Real> out;
  out.reserve(n * parts.size());
  bool tracked = false;
  for (const auto& p : parts) {
    if (p.shape() != inner) {
      throw DimensionError("stack: shape mismatch " + shape_string(inner) + " vs " +
                           shape_string(p.shape()));
    }
    out.insert(out.end(), p.data().begin(), p.data().end());
    tracked = tracked || detail::any_requires_grad({&p});
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  Tensor result = detail::make_result(std::move(shape), std::move(out), tracked);
  if (tracked) {
    std::vector<NodePtr> ins;
    for (const auto& p : parts) ins.push_back(p.node());
    NodePtr o = result.node();
    detail::record_op("stack", ins, result, [ins, o, n] {
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (!ins[k]->requires_grad) continue;
        ins[k]->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) ins[k]->grad[i] += o->grad[k * n + i];
      }
    });
  }
  return result;
}

Tensor gather(const Tensor& a, std::span<const std::size_t> flat_indices) {
  std::vector<Real> out(flat_indices.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (flat_indices[i] >= a.numel()) {
      throw DimensionError("gather: index " + std::to_string(flat_indices[i]) +
                           " out of range for " + shape_string(a.shape()));
    }
    out[i] = a.data()[flat_indices[i]];
  }
  const bool tracked = detail::any_requires_grad({&a});
  Tensor result = detail::make_result({flat_indices.size()}, std::move(out), tracked);
  if (tracked) {
    NodePtr x = a.node(), o = result.node();
    std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
    detail::record_op("gather", {&a}, result, [x, o, idx] {
      x->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) x->grad[idx[i]] += o->grad[i];
    });
  }
  return result;
}

Tensor channel_slice(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 4 || begin >= end || end > a.dim(1)) {
    throw DimensionError("channel_slice: cannot take channels [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") of " + shape_string(a.shape()));
  }
  const std::size_t batch = a.dim(0), c = a.dim(1), plane = a.dim(2) * a.dim(3);
  const std::size_t width = end - begin;
  std::vector<Real> out(batch * width * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(a.data().data() + (b * c + begin) * plane, width * plane,
                out.data() + b * width * plane);
  }
  const bool tracked = detail::any_requires_grad({&a});
  Tensor result = detail::make_result({batch, width, a.dim(2), a.dim(3)}, std::move(out), tracked);
  if (tracked) {
    NodePtr x = a.node(), o = result.node();
    detail::record_op("channel_slice", {&a}, result, [=] {
      x->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < width * plane; ++i) {
          x->grad[(b * c + begin) * plane + i] += o->grad[b * width * plane + i];
        }
      }
    });
  }
  return result;
}

Tensor composite(const Tensor& image, const Tensor& patch, const Tensor& mask, int top,
                 int left) {
  if (image.rank() != 3 || patch.rank() != 3 || mask.rank() != 2 || patch.dim(0) != image.dim(0) ||
      mask.dim(0) != patch.dim(1) || mask.dim(1) != patch.dim(2)) {
    throw DimensionError("composite: incompatible image " + shape_string(image.shape()) +
                         ", patch " + shape_string(patch.shape()) + ", mask " +
                         shape_string(mask.shape()));
  }
  const long c = static_cast<long>(image.dim(0)), h = static_cast<long>(image.dim(1)),
             w = static_cast<long>(image.dim(2));
  const long ph = static_cast<long>(patch.dim(1)), pw = static_cast<long>(patch.dim(2));
  const long y0 = std::max<long>(0, top), y1 = std::min<long>(h, top + ph);
  const long x0 = std::max<long>(0, left), x1 = std::min<long>(w, left + pw);
  std::vector<Real> out(image.data().begin(), image.data().end());
  const auto m = mask.data();
  const auto p = patch.data();
  for (long ch = 0; ch < c; ++ch) {
    for (long y = y0; y < y1; ++y) {
      for (long x = x0; x < x1; ++x) {
        const std::size_t mi = static_cast<std::size_t>((y - top) * pw + (x - left));
        const std::size_t pi = static_cast<std::size_t>(ch * ph * pw) + mi;
        const std::size_t ii = static_cast<std::size_t>((ch * h + y) * w + x);
        out[ii] = out[ii] * (Real(1) - m[mi]) + p[pi] * m[mi];
      }
    }
  }
  const bool tracked = detail::any_requires_grad({&image, &patch});
  Tensor result = detail::make_result(image.shape(), std::move(out), tracked);
  if (tracked) {
    NodePtr in = image.node(), pn = patch.node(), mn = mask.node(), o = result.node();
    detail::record_op("composite", {&image, &patch}, result, [=] {
      if (in->requires_grad) {
        in->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) in->grad[i] += o->grad[i];
      }
      if (pn->requires_grad) pn->ensure_grad();
      for (long ch = 0; ch < c; ++ch) {
        for (long y = y0; y < y1; ++y) {
          for (long x = x0; x < x1; ++x) {
            const std::size_t mi = static_cast<std::size_t>((y - top) * pw + (x - left));
            const std::size_t pi = static_cast<std::size_t>(ch * ph * pw) + mi;
            const std::size_t ii = static_cast<std::size_t>((ch * h + y) * w + x);
            const Real g = o->grad[ii];
            if (in->requires_grad) in->grad[ii] -= g * mn->data[mi];
            if (pn->requires_grad) pn->grad[pi] += g * mn->data[mi];
          }
        }
      }
    });
  }
  return result;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  detail::require_same_shape(logits, targets, "bce_with_logits");
  std::vector<Real> out(logits.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real x = logits.data()[i], t = targets.data()[i];
    out[i] = std::max(x, Real(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  const bool tracked = detail::any_requires_grad({&logits});
  Tensor result = detail::make_result(logits.shape(), std::move(out), tracked);
  if (tracked) {
    NodePtr x = logits.node(), t = targets.node(), o = result.node();
    detail::record_op("bce_with_logits", {&logits}, result, [x, t, o] {
      x->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        const Real v = x->data[i];
        const Real s = v >= 0 ? Real(1) / (Real(1) + std::exp(-v))
                              : std::exp(v) / (Real(1) + std::exp(v));
        x->grad[i] += o->grad[i] * (s - t->data[i]);
      }
    });
  }
  return result;
}

Tensor smooth_l1(const Tensor& prediction, const Tensor& target, Real beta) {
  detail::require_same_shape(prediction, target, "smooth_l1");
  std::vector<Real> out(prediction.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real d = std::abs(prediction.data()[i] - target.data()[i]);
    out[i] = d < beta ? Real(0.5) * d * d / beta : d - Real(0.5) * beta;
  }
  const bool tracked = detail::any_requires_grad({&prediction});
  Tensor result = detail::make_result(prediction.shape(), std::move(out), tracked);
  if (tracked) {
    NodePtr x = prediction.node(), t = target.node(), o = result.node();
    detail::record_op("smooth_l1", {&prediction}, result, [x, t, o, beta] {
      x->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        const Real d = x->data[i] - t->data[i];
        const Real g = std::abs(d) < beta ? d / beta : (d > 0 ? Real(1) : Real(-1));
        x->grad[i] += o->grad[i] * g;
      }
    });
  }
  return result;
}

Tensor clamp(const Tensor& a, Real lo, Real hi) {
  return unary(
      a, "clamp", [lo, hi](Real x) { return std::clamp(x, lo, hi); },
      [lo, hi](Real x, Real) { return x >= lo && x <= hi ? Real(1) : Real(0); });
}

Tensor range_violation_sq(const Tensor& a, Real lo, Real hi) {
  return unary(
      a, "range_violation_sq",
      [lo, hi](Real x) {
        const Real d = x < lo ? lo - x : (x > hi ? x - hi : Real(0));
        return d * d;
      },
      [lo, hi](Real x, Real) {
        return x < lo ? Real(2) * (x - lo) : (x > hi ? Real(2) * (x - hi) : Real(0));
      });
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
