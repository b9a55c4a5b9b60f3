#pragma once

// Independent reference computations used as test oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "catmouse/detector.hpp"
#include "catmouse/rng.hpp"
#include "catmouse/tensor.hpp"

namespace oracle {

using namespace catmouse;

struct GradientPair {
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Reverse-mode gradients and central finite differences of a scalar function,
/// one pair per input.
inline std::vector<GradientPair> gradient_pairs(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                                std::vector<Tensor>& inputs, double step) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor out = f(inputs);
    backward(tape, out);
  }
  std::vector<GradientPair> pairs;
  for (Tensor& t : inputs) {
    GradientPair p{std::vector<double>(t.numel(), 0.0), std::vector<double>(t.numel(), 0.0)};
    if (t.has_grad()) {
      for (std::size_t i = 0; i < t.numel(); ++i) p.analytic[i] = t.grad()[i];
    }
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const Real saved = data[i];
      data[i] = saved + Real(step);
      const double up = f(inputs).item();
      data[i] = saved - Real(step);
      const double down = f(inputs).item();
      data[i] = saved;
      p.numeric[i] = (up - down) / (2 * step);
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

/// Largest elementwise relative error between reverse-mode gradients and
/// central finite differences of a scalar function of the inputs.
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                        std::vector<Tensor> inputs, double step = 1e-5, double floor = 1e-7) {
  double worst = 0;
  for (const GradientPair& p : gradient_pairs(f, inputs, step)) {
    for (std::size_t i = 0; i < p.analytic.size(); ++i) {
      const double denom = std::max({std::abs(p.numeric[i]), std::abs(p.analytic[i]), floor});
      worst = std::max(worst, std::abs(p.numeric[i] - p.analytic[i]) / denom);
    }
  }
  return worst;
}

/// Largest elementwise deviation relative to the gradient's largest magnitude,
/// per input. Elements far below that magnitude are not judged against their
/// own size, where finite-difference rounding dominates.
inline double gradcheck_scaled(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                               std::vector<Tensor> inputs, double step = 1e-5, double floor = 1e-7) {
  double worst = 0;
  for (const GradientPair& p : gradient_pairs(f, inputs, step)) {
    double scale = floor, deviation = 0;
    for (std::size_t i = 0; i < p.analytic.size(); ++i) {
      scale = std::max({scale, std::abs(p.analytic[i]), std::abs(p.numeric[i])});
      deviation = std::max(deviation, std::abs(p.numeric[i] - p.analytic[i]));
    }
    worst = std::max(worst, deviation / scale);
  }
  return worst;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

/// Random [C,H,W] image in [0,1] whose adjacent pixels differ by at least
/// `gap`, keeping |a-b| differentiable under finite-difference steps.
inline Tensor tie_free_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng,
                             double gap = 1e-2) {
  Tensor t({c, h, w});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t x = i % w, y = (i / w) % h;
    for (;;) {
      const double v = rng.uniform();
      const bool left_ok = x == 0 || std::abs(v - double(d[i - 1])) > gap;
      const bool up_ok = y == 0 || std::abs(v - double(d[i - w])) > gap;
      if (left_ok && up_ok) {
        d[i] = static_cast<Real>(v);
        break;
      }
    }
  }
  return t;
}

/// Intersection over union from corner coordinates.
inline double reference_iou(const Box& a, const Box& b) {
  const double w = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double h = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = w * h;
  const double area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
  const double area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
  return inter == 0 ? 0.0 : inter / (area_a + area_b - inter);
}

/// Brute-force 101-point AP: labels every detection by greedy matching, then
/// for each recall level scans every ranking prefix for the best precision
/// among prefixes whose recall reaches that level. Recall comparisons are
/// done in exact integer arithmetic.
inline double reference_ap(const std::vector<std::vector<Detection>>& detections,
                           const std::vector<std::vector<Box>>& ground_truth, double threshold) {
  struct Ranked {
    double score;
    std::size_t image, index;
    bool tp;
  };
  std::vector<Ranked> ranked;
  long positives = 0;
  for (std::size_t img = 0; img < detections.size(); ++img) {
    const auto& dets = detections[img];
    const auto& gts = ground_truth[img];
    positives += static_cast<long>(gts.size());
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dets[a].score != dets[b].score ? dets[a].score > dets[b].score : a < b;
    });
    std::vector<bool> taken(gts.size(), false);
    for (std::size_t d : order) {
      long best = -1;
      double best_iou = 0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        const double v = reference_iou(dets[d].box, gts[g]);
        if (taken[g] || v < threshold) continue;
        if (best < 0 || v > best_iou) {
          best = static_cast<long>(g);
          best_iou = v;
        }
      }
      if (best >= 0) taken[static_cast<std::size_t>(best)] = true;
      ranked.push_back({dets[d].score, img, d, best >= 0});
    }
  }
  if (positives == 0) return 0.0;
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });
  std::vector<long> tp_prefix(ranked.size() + 1, 0);
  for (std::size_t k = 0; k < ranked.size(); ++k) tp_prefix[k + 1] = tp_prefix[k] + ranked[k].tp;
  double total = 0;
  for (long r = 0; r <= 100; ++r) {
    double best = 0;
    for (std::size_t k = 1; k <= ranked.size(); ++k) {
      if (tp_prefix[k] * 100 >= r * positives) {
        best = std::max(best, double(tp_prefix[k]) / double(k));
      }
    }
    total += best;
  }
  return total / 101.0;
}

struct ApInstance {
  std::vector<std::vector<Detection>> detections;
  std::vector<std::vector<Box>> ground_truth;
};

/// Random micro-instance: 1..5 images with 0..4 GT boxes and 0..4 detections
/// each. Detections are jittered GT copies or free boxes, and scores are
/// drawn from a coarse grid so ties occur.
inline ApInstance random_ap_instance(Rng& rng) {
  auto random_box = [&rng] {
    const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
    return Box{x, y, x + rng.uniform(4, 20), y + rng.uniform(4, 20)};
  };
  ApInstance inst;
  const int images = rng.integer(1, 5);
  for (int i = 0; i < images; ++i) {
    std::vector<Box> gts(static_cast<std::size_t>(rng.integer(0, 4)));
    for (Box& b : gts) b = random_box();
    std::vector<Detection> dets(static_cast<std::size_t>(rng.integer(0, 4)));
    for (Detection& d : dets) {
      if (!gts.empty() && rng.bernoulli(0.7)) {
        const Box& g = gts[rng.below(gts.size())];
        const double j = rng.uniform(0, 0.3) * g.short_side();
        d.box = {g.x_min + rng.uniform(-j, j), g.y_min + rng.uniform(-j, j),
                 g.x_max + rng.uniform(-j, j), g.y_max + rng.uniform(-j, j)};
      } else {
        d.box = random_box();
      }
      d.score = double(rng.integer(1, 12)) / 12.0;
    }
    inst.ground_truth.push_back(std::move(gts));
    inst.detections.push_back(std::move(dets));
  }
  return inst;
}

}  // namespace oracle
