#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "catmouse/tensor.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

// Elementwise arithmetic. Binary operators require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor add_scalar(const Tensor& a, Real offset);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor leaky_relu(const Tensor& a, Real negative_slope = Real(0.1));

/// x[N,in] * weight[out,in]^T + bias[out] -> [N,out]. bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

/// Cross-correlation of input[B,Cin,H,W] with kernel[Cout,Cin,kh,kw].
/// bias[Cout] is optional.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding);

/// Anisotropic L1 total variation of image[C,H,W], averaged over the number
/// of horizontally and vertically adjacent pixel pairs.
Tensor total_variation(const Tensor& image);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

/// Gathers elements by flat index into a 1-D tensor.
Tensor gather(const Tensor& a, std::span<const std::size_t> flat_indices);

/// Channels [begin, end) of a [B,C,H,W] tensor.
Tensor channel_slice(const Tensor& a, std::size_t begin, std::size_t end);

/// Pastes patch[C,h,w] into image[C,H,W] with its top-left at (top, left):
/// out = image * (1 - mask) + patch * mask inside the footprint. mask[h,w] is
/// treated as a constant. Parts of the footprint outside the image are clipped.
Tensor composite(const Tensor& image, const Tensor& patch, const Tensor& mask, int top,
                 int left);

/// Numerically stable elementwise binary cross-entropy with logits against
/// constant targets.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

/// Elementwise smooth-L1 (Huber with threshold beta) against constant targets.
Tensor smooth_l1(const Tensor& prediction, const Tensor& target, Real beta = Real(1));

/// Elementwise clamp to [lo, hi]; gradient 1 inside the interval, 0 outside.
Tensor clamp(const Tensor& a, Real lo = Real(0), Real hi = Real(1));

/// Elementwise squared distance outside [lo, hi]; zero inside the interval.
Tensor range_violation_sq(const Tensor& a, Real lo = Real(0), Real hi = Real(1));

}  // namespace catmouse::inline CATMOUSE_PRECISION
