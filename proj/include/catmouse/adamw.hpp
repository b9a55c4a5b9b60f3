#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "catmouse/tensor.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Moment buffers for one parameter tensor.
struct AdamWSlot {
  std::vector<Real> first_moment;
  std::vector<Real> second_moment;
};

/// One decoupled-weight-decay Adam update with bias correction for a single
/// parameter buffer. `step` is the 1-based step index after incrementing.
void adamw_update(std::span<Real> param, std::span<const Real> grad, AdamWSlot& slot,
                  std::size_t step, const AdamWOptions& options);

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWOptions options);

  /// Applies one update to every parameter using its accumulated gradient.
  /// Parameters without a gradient buffer are treated as having zero gradient.
  void step();
  void zero_grad();

  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  std::size_t step_count() const { return step_; }
  const AdamWOptions& options() const { return options_; }
  const std::vector<AdamWSlot>& slots() const { return slots_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamWSlot> slots_;
  AdamWOptions options_;
  std::size_t step_ = 0;
};

}  // namespace catmouse::inline CATMOUSE_PRECISION
