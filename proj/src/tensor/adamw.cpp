#include "catmouse/adamw.hpp"

#include <cmath>

namespace catmouse::inline CATMOUSE_PRECISION {

void adamw_update(std::span<Real> param, std::span<const Real> grad, AdamWSlot& slot,
                  std::size_t step, const AdamWOptions& o) {
  if (grad.size() != param.size() || slot.first_moment.size() != param.size() ||
      slot.second_moment.size() != param.size()) {
    throw DimensionError("adamw_update: parameter, gradient and moment sizes differ");
  }
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  const double decay = 1.0 - o.lr * o.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = o.beta1 * slot.first_moment[i] + (1.0 - o.beta1) * g;
    const double v = o.beta2 * slot.second_moment[i] + (1.0 - o.beta2) * g * g;
    slot.first_moment[i] = static_cast<Real>(m);
    slot.second_moment[i] = static_cast<Real>(v);
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    const double theta = param[i] * decay - o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    param[i] = static_cast<Real>(theta);
  }
}

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  slots_.reserve(params_.size());
  for (const auto& p : params_) {
    slots_.push_back({std::vector<Real>(p.numel(), Real(0)), std::vector<Real>(p.numel(), Real(0))});
  }
}

void AdamW::step() {
  ++step_;
  std::vector<Real> zeros;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    std::span<const Real> g;
    if (p.has_grad()) {
      g = p.grad();
    } else {
      zeros.assign(p.numel(), Real(0));
      g = zeros;
    }
    adamw_update(p.mutable_data(), g, slots_[k], step_, options_);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
