#pragma once

#include <array>

#include "catmouse/tensor.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

struct Point {
  double x = 0;
  double y = 0;
};

/// Projective map from source pixel coordinates to destination pixel
/// coordinates, row-major 3x3. Pixel (row i, column j) sits at (x=j, y=i).
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }
  static Homography translation(double dx, double dy);
  static Homography scaling(double sx, double sy);
  /// Rotation by `radians` (counter-clockwise on screen) about `center`.
  static Homography rotation(double radians, Point center);
  /// Exact map taking src[i] to dst[i] for four points in general position.
  static Homography from_correspondences(const std::array<Point, 4>& src,
                                         const std::array<Point, 4>& dst);

  double determinant() const;
  Homography inverse() const;
  Point apply(Point p) const;

  /// Composition: (a * b).apply(p) == a.apply(b.apply(p)).
  friend Homography operator*(const Homography& a, const Homography& b);
};

struct WarpResult {
  Tensor warped;  // [C,out_h,out_w]
  Tensor mask;    // [out_h,out_w], 1 where the sample lies inside the source
};

/// Inverse-mapped bilinear resampling of image[C,H,W]. A destination pixel is
/// inside when its source point falls within the source pixel footprint
/// [-0.5, W-0.5) x [-0.5, H-0.5); outside samples are 0. Differentiable with
/// respect to the image only.
WarpResult bilinear_warp(const Tensor& image, const Homography& homography, std::size_t out_h,
                         std::size_t out_w);

}  // namespace catmouse::inline CATMOUSE_PRECISION
