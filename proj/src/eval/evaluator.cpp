#include "catmouse/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "catmouse/ops.hpp"
#include "catmouse/parallel.hpp"
#include "catmouse/rng.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::array<double, 10> iou_thresholds() {
  std::array<double, 10> t{};
  for (int i = 0; i < 10; ++i) t[i] = (50 + 5 * i) / 100.0;
  return t;
}

double average_precision(std::span<const std::vector<Detection>> detections,
                         std::span<const std::vector<Box>> ground_truth, double iou_threshold) {
  if (detections.size() != ground_truth.size()) {
    throw std::invalid_argument("average_precision: detection and GT image counts differ");
  }
  struct Scored {
    double score;
    std::size_t image;
    std::size_t index;
    bool tp;
  };
  std::vector<Scored> all;
  std::size_t positives = 0;
  for (std::size_t img = 0; img < detections.size(); ++img) {
    const auto& dets = detections[img];
    const auto& gts = ground_truth[img];
    positives += gts.size();
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    std::vector<bool> used(gts.size(), false);
    for (std::size_t d : order) {
      double best = iou_threshold;
      std::ptrdiff_t match = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g]) continue;
        const double v = iou(dets[d].box, gts[g]);
        if (v >= best && (match < 0 || v > best)) {
          best = v;
          match = static_cast<std::ptrdiff_t>(g);
        }
      }
      if (match >= 0) used[static_cast<std::size_t>(match)] = true;
      all.push_back({dets[d].score, img, d, match >= 0});
    }
  }
  if (positives == 0) return 0.0;
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.image, a.index) < std::tie(b.image, b.index);
  });

  std::vector<double> precision(all.size()), recall(all.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].tp) ++tp;
    precision[i] = double(tp) / double(i + 1);
    recall[i] = double(tp) / double(positives);
  }
  for (std::size_t i = all.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double sum = 0;
  std::size_t pos = 0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    while (pos < recall.size() && recall[pos] < level) ++pos;
    if (pos < recall.size()) sum += precision[pos];
  }
  return sum / 101.0;
}

APResult ap_over_thresholds(std::span<const std::vector<Detection>> detections,
                            std::span<const std::vector<Box>> ground_truth) {
  APResult r;
  const auto thresholds = iou_thresholds();
  double sum = 0;
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    r.per_threshold[i] = average_precision(detections, ground_truth, thresholds[i]);
    sum += r.per_threshold[i];
  }
  r.ap = sum / double(thresholds.size());
  for (const auto& d : detections) r.detection_count += d.size();
  for (const auto& g : ground_truth) r.ground_truth_count += g.size();
  return r;
}

PatchSource PatchSource::grayscale(int level) {
  if (level < 0 || level > 10) throw std::out_of_range("grayscale level must be in 0..10");
  PatchSource s;
  s.kind = Kind::Grayscale;
  s.level = level;
  return s;
}

PatchSource PatchSource::patch(const Tensor& pixels) {
  if (!pixels.defined() || pixels.rank() != 3 || pixels.dim(0) != 3) {
    throw std::invalid_argument("patch source needs a [3,S,S] tensor");
  }
  PatchSource s;
  s.kind = Kind::Patch;
  s.pixels = pixels;
  return s;
}

std::string PatchSource::describe() const {
  switch (kind) {
    case Kind::Clean: return "clean";
    case Kind::Grayscale: return "gray-" + std::to_string(level);
    case Kind::Patch: return "patch";
  }
  return "unknown";
}

Tensor PatchSource::resolve() const {
  switch (kind) {
    case Kind::Clean: return {};
    case Kind::Grayscale: return grayscale_patch(level, 8);
    case Kind::Patch: {
      // Evaluation always uses a displayable patch.
      std::vector<Real> v(pixels.data().begin(), pixels.data().end());
      for (Real& x : v) x = std::clamp<Real>(x, 0, 1);
      return Tensor(pixels.shape(), std::move(v));
    }
  }
  return {};
}

APResult evaluate(const DetectorModel& model, const Dataset& dataset, const PatchSource& source,
                  const ApplicationProtocol& protocol, std::uint64_t eval_seed,
                  DecisionLog* decisions, const EvalOptions& options) {
  if (protocol.mode != ApplicationMode::Eval) {
    throw std::invalid_argument("evaluate: protocol mode must be eval");
  }
  protocol.validate();
  const Tensor pixels = source.resolve();
  const std::size_t n = dataset.scenes.size();
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  const std::size_t chunks = (n + batch - 1) / batch;
  std::vector<std::vector<Detection>> detections(n);
  std::vector<std::vector<PlacementRecord>> plans(n);

  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * batch, end = std::min(n, begin + batch);
    std::vector<Tensor> images;
    for (std::size_t i = begin; i < end; ++i) {
      const Scene& scene = dataset.scenes[i];
      Rng rng(derive_seed(eval_seed, {static_cast<std::uint64_t>(scene.index)}));
      ProtocolOutcome out = apply_protocol(scene, pixels, protocol, rng);
      images.push_back(out.image.detached());
      plans[i] = std::move(out.decisions);
    }
    const RawPrediction raw = forward(model, stack(images));
    for (std::size_t i = begin; i < end; ++i) {
      detections[i] = decode(raw, i - begin, options.conf_threshold, options.max_det);
    }
  });

  std::vector<std::vector<Box>> gts(n);
  for (std::size_t i = 0; i < n; ++i) gts[i] = dataset.scenes[i].target_boxes;
  APResult result = ap_over_thresholds(detections, gts);
  result.protocol = protocol.describe();
  result.eval_seed = eval_seed;
  if (decisions) *decisions = std::move(plans);
  return result;
}

double mean_of(std::span<const double> values) {
  if (values.empty()) return 0.0;
  // Shifted by the first value so that equal inputs give exactly that value.
  double s = 0;
  for (double v : values) s += v - values.front();
  return values.front() + s / double(values.size());
}

double population_std(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double m = mean_of(values);
  double s = 0;
  for (double v : values) s += (v - m) * (v - m);
  return std::sqrt(s / double(values.size()));
}

GrayscaleBaseline grayscale_baseline(const DetectorModel& model, const Dataset& dataset,
                                     const ApplicationProtocol& protocol, std::uint64_t eval_seed,
                                     const EvalOptions& options) {
  GrayscaleBaseline b;
  for (int level = 0; level <= 10; ++level) {
    b.level_ap[level] =
        evaluate(model, dataset, PatchSource::grayscale(level), protocol, eval_seed, nullptr, options)
            .ap;
  }
  b.mean = mean_of(b.level_ap);
  b.std = population_std(b.level_ap);
  return b;
}

HeatmapMatrix build_heatmap(std::span<const LedgerRow> ledger, int max_order,
                            int validation_count, double resize_factor) {
  if (max_order < 1) throw std::invalid_argument("build_heatmap: max order must be >= 1");
  if (validation_count < 1) throw std::invalid_argument("build_heatmap: validation count must be >= 1");
  std::map<int, std::vector<double>> gray;
  std::map<std::tuple<int, int, int>, double> patched;
  for (const LedgerRow& row : ledger) {
    if (row.resize_factor != resize_factor) continue;
    if (row.source.rfind("gray-", 0) == 0) {
      gray[row.model_order].push_back(row.result.ap);
    } else if (row.source == "patch") {
      patched[{row.model_order, row.patch_order, row.patch_index}] = row.result.ap;
    }
  }

  std::vector<std::string> missing;
  for (int m = 0; m <= max_order; ++m) {
    if (!gray.contains(m)) missing.push_back("grayscale baseline of model order " + std::to_string(m));
    for (int p = 1; p <= max_order; ++p) {
      for (int v = 0; v < validation_count; ++v) {
        if (!patched.contains({m, p, v})) {
          missing.push_back("(model " + std::to_string(m) + ", patch " + std::to_string(p) +
                            ", validation " + std::to_string(v) + ")");
        }
      }
    }
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << "build_heatmap: missing ledger cells:";
    for (const auto& s : missing) os << ' ' << s;
    throw std::runtime_error(os.str());
  }

  HeatmapMatrix h;
  h.max_order = max_order;
  h.validation_count = validation_count;
  const auto rows = static_cast<std::size_t>(max_order + 1);
  const auto cols = static_cast<std::size_t>(max_order);
  h.delta_ap.assign(rows, std::vector<double>(cols));
  h.delta_std.assign(rows, std::vector<double>(cols));
  for (int m = 0; m <= max_order; ++m) {
    const double g = mean_of(gray[m]);
    h.grayscale_ap.push_back(g);
    for (int p = 1; p <= max_order; ++p) {
      std::vector<double> deltas;
      for (int v = 0; v < validation_count; ++v) deltas.push_back(g - patched[{m, p, v}]);
      h.delta_ap[m][p - 1] = mean_of(deltas);
      h.delta_std[m][p - 1] = population_std(deltas);
    }
  }
  for (std::size_t r = 0; r < rows; ++r) h.row_mean.push_back(mean_of(h.delta_ap[r]));
  for (std::size_t c = 0; c < cols; ++c) {
    std::vector<double> column;
    for (std::size_t r = 0; r < rows; ++r) column.push_back(h.delta_ap[r][c]);
    h.col_mean.push_back(mean_of(column));
  }
  return h;
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
