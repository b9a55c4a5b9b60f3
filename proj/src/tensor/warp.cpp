#include "catmouse/warp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace catmouse::inline CATMOUSE_PRECISION {

Homography Homography::translation(double dx, double dy) { return {{1, 0, dx, 0, 1, dy, 0, 0, 1}}; }

Homography Homography::scaling(double sx, double sy) { return {{sx, 0, 0, 0, sy, 0, 0, 0, 1}}; }

Homography Homography::rotation(double radians, Point center) {
  const double c = std::cos(radians), s = std::sin(radians);
  // Image y points down, so a visually counter-clockwise turn flips the sign of s.
  const Homography r{{c, s, 0, -s, c, 0, 0, 0, 1}};
  return translation(center.x, center.y) * r * translation(-center.x, -center.y);
}

Homography Homography::from_correspondences(const std::array<Point, 4>& src,
                                            const std::array<Point, 4>& dst) {
  // Solve the 8x8 DLT system with h33 = 1 by Gaussian elimination.
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
    double r0[9] = {x, y, 1, 0, 0, 0, -u * x, -u * y, u};
    double r1[9] = {0, 0, 0, x, y, 1, -v * x, -v * y, v};
    for (int j = 0; j < 9; ++j) {
      a[2 * i][j] = r0[j];
      a[2 * i + 1][j] = r1[j];
    }
  }
  for (int col = 0; col < 8; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 8; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (std::abs(a[pivot][col]) < 1e-12) {
      throw std::invalid_argument("Homography::from_correspondences: degenerate point set");
    }
    if (pivot != col) {
      for (int j = 0; j < 9; ++j) std::swap(a[pivot][j], a[col][j]);
    }
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int j = col; j < 9; ++j) a[r][j] -= f * a[col][j];
    }
  }
  Homography h;
  for (int i = 0; i < 8; ++i) h.m[static_cast<std::size_t>(i)] = a[i][8] / a[i][i];
  h.m[8] = 1;
  return h;
}

double Homography::determinant() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::inverse() const {
  const double det = determinant();
  if (!(std::abs(det) > 1e-9)) {
    throw std::invalid_argument("Homography::inverse: singular homography (|det| <= 1e-9)");
  }
  // Adjugate scaled by 1/det; exact for identity and pure translations.
  Homography r;
  r.m = {(m[4] * m[8] - m[5] * m[7]), -(m[1] * m[8] - m[2] * m[7]), (m[1] * m[5] - m[2] * m[4]),
         -(m[3] * m[8] - m[5] * m[6]), (m[0] * m[8] - m[2] * m[6]), -(m[0] * m[5] - m[2] * m[3]),
         (m[3] * m[7] - m[4] * m[6]), -(m[0] * m[7] - m[1] * m[6]), (m[0] * m[4] - m[1] * m[3])};
  for (auto& v : r.m) v /= det;
  return r;
}

Point Homography::apply(Point p) const {
  const double x = m[0] * p.x + m[1] * p.y + m[2];
  const double y = m[3] * p.x + m[4] * p.y + m[5];
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  return {x / w, y / w};
}

Homography operator*(const Homography& a, const Homography& b) {
  Homography r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a.m[static_cast<std::size_t>(i * 3 + k)] * b.m[static_cast<std::size_t>(k * 3 + j)];
      r.m[static_cast<std::size_t>(i * 3 + j)] = s;
    }
  }
  return r;
}

WarpResult bilinear_warp(const Tensor& image, const Homography& homography, std::size_t out_h,
                         std::size_t out_w) {
  if (image.rank() != 3) {
    throw DimensionError("bilinear_warp: expected [C,H,W], got " + shape_string(image.shape()));
  }
  const Homography inv = homography.inverse();
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t plane = out_h * out_w;

  // Per destination pixel: four source taps and weights (index < 0 = none).
  struct Taps {
    long idx[4];
    Real wt[4];
  };
  std::vector<Taps> taps(plane);
  std::vector<Real> mask(plane, Real(0));
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      Taps& t = taps[i * out_w + j];
      for (int k = 0; k < 4; ++k) {
        t.idx[k] = -1;
        t.wt[k] = 0;
      }
      const double xs = inv.m[0] * double(j) + inv.m[1] * double(i) + inv.m[2];
      const double ys = inv.m[3] * double(j) + inv.m[4] * double(i) + inv.m[5];
      const double ws = inv.m[6] * double(j) + inv.m[7] * double(i) + inv.m[8];
      if (!(ws > 0)) continue;
      const double sx = xs / ws, sy = ys / ws;
      if (!(sx >= -0.5 && sx < double(w) - 0.5 && sy >= -0.5 && sy < double(h) - 0.5)) continue;
      mask[i * out_w + j] = Real(1);
      const double cx = std::clamp(sx, 0.0, double(w - 1));
      const double cy = std::clamp(sy, 0.0, double(h - 1));
      const long x0 = static_cast<long>(std::floor(cx)), y0 = static_cast<long>(std::floor(cy));
      const long x1 = std::min<long>(x0 + 1, static_cast<long>(w) - 1);
      const long y1 = std::min<long>(y0 + 1, static_cast<long>(h) - 1);
      const double fx = cx - double(x0), fy = cy - double(y0);
      const long lw = static_cast<long>(w);
      t.idx[0] = y0 * lw + x0;
      t.wt[0] = static_cast<Real>((1 - fx) * (1 - fy));
      t.idx[1] = y0 * lw + x1;
      t.wt[1] = static_cast<Real>(fx * (1 - fy));
      t.idx[2] = y1 * lw + x0;
      t.wt[2] = static_cast<Real>((1 - fx) * fy);
      t.idx[3] = y1 * lw + x1;
      t.wt[3] = static_cast<Real>(fx * fy);
    }
  }

  const auto src = image.data();
  std::vector<Real> out(c * plane, Real(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Real* s = src.data() + ch * h * w;
    for (std::size_t p = 0; p < plane; ++p) {
      const Taps& t = taps[p];
      if (t.idx[0] < 0) continue;
      Real v = 0;
      for (int k = 0; k < 4; ++k) {
        if (t.wt[k] != Real(0)) v += t.wt[k] * s[t.idx[k]];
      }
      out[ch * plane + p] = v;
    }
  }

  const bool tracked = detail::any_requires_grad({&image});
  WarpResult result;
  result.warped = detail::make_result({c, out_h, out_w}, std::move(out), tracked);
  result.mask = Tensor({out_h, out_w}, std::move(mask));
  if (tracked) {
    auto in = image.node();
    auto o = result.warped.node();
    detail::record_op("bilinear_warp", {&image}, result.warped,
                      [in, o, taps = std::move(taps), c, h, w, plane] {
                        in->ensure_grad();
                        for (std::size_t ch = 0; ch < c; ++ch) {
                          Real* g = in->grad.data() + ch * h * w;
                          for (std::size_t p = 0; p < plane; ++p) {
                            const Taps& t = taps[p];
                            if (t.idx[0] < 0) continue;
                            const Real go = o->grad[ch * plane + p];
                            for (int k = 0; k < 4; ++k) g[t.idx[k]] += t.wt[k] * go;
                          }
                        }
                      });
  }
  return result;
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
