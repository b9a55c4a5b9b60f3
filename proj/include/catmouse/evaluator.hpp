#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "catmouse/detector.hpp"
#include "catmouse/patch.hpp"
#include "catmouse/scene.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

double iou(const Box& a, const Box& b);

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::array<double, 10> iou_thresholds();

/// Single-class AP at one IoU threshold. Detections are matched greedily per
/// image in descending score order (ties by detection index) to the unmatched
/// GT of highest IoU (ties by GT index). The precision/recall curve is global
/// over images and interpolated at 101 recall points. No GTs gives 0.
double average_precision(std::span<const std::vector<Detection>> detections,
                         std::span<const std::vector<Box>> ground_truth, double iou_threshold);

struct APResult {
  double ap = 0;  // mean of per_threshold
  std::array<double, 10> per_threshold{};
  std::size_t detection_count = 0;
  std::size_t ground_truth_count = 0;
  std::string protocol;
  std::uint64_t eval_seed = 0;
};

APResult ap_over_thresholds(std::span<const std::vector<Detection>> detections,
                            std::span<const std::vector<Box>> ground_truth);

/// What is pasted into the scenes during an evaluation.
struct PatchSource {
  enum class Kind { Clean, Grayscale, Patch };
  Kind kind = Kind::Clean;
  int level = 0;  // grayscale level 0..10
  Tensor pixels;  // patch kind only

  static PatchSource clean() { return {}; }
  static PatchSource grayscale(int level);
  static PatchSource patch(const Tensor& pixels);
  std::string describe() const;  // "clean", "gray-5", "patch"
  Tensor resolve() const;        // undefined for clean
};

struct EvalOptions {
  double conf_threshold = 0.25;
  std::size_t max_det = 30;
  std::size_t batch_size = 32;
};

/// Placement decisions per scene, in dataset order.
using DecisionLog = std::vector<std::vector<PlacementRecord>>;

/// Applies the protocol to every scene with stream derive_seed(eval_seed,
/// {scene index}), detects with the one-to-one head and reports AP@[.5:.95].
APResult evaluate(const DetectorModel& model, const Dataset& dataset, const PatchSource& source,
                  const ApplicationProtocol& protocol, std::uint64_t eval_seed,
                  DecisionLog* decisions = nullptr, const EvalOptions& options = {});

struct GrayscaleBaseline {
  double mean = 0;
  double std = 0;  // population standard deviation over the 11 levels
  std::array<double, 11> level_ap{};
};

GrayscaleBaseline grayscale_baseline(const DetectorModel& model, const Dataset& dataset,
                                     const ApplicationProtocol& protocol, std::uint64_t eval_seed,
                                     const EvalOptions& options = {});

double mean_of(std::span<const double> values);
double population_std(std::span<const double> values);

/// One evaluation record of a game or transfer run. Grayscale rows use
/// patch_order 0 and patch_index = level; the clean row uses patch_order 0
/// and patch_index 0.
struct LedgerRow {
  std::string run_id;
  int model_order = 0;
  int patch_order = 0;
  int patch_index = 0;
  std::string source;  // "clean", "gray-L" or "patch"
  double resize_factor = 0.5;
  APResult result;
};

struct HeatmapMatrix {
  int max_order = 0;
  int validation_count = 0;
  // (max_order + 1) rows for model orders 0..N, max_order columns for patch orders 1..N.
  std::vector<std::vector<double>> delta_ap;
  std::vector<std::vector<double>> delta_std;
  std::vector<double> row_mean;
  std::vector<double> col_mean;
  std::vector<double> grayscale_ap;  // per model order

  std::size_t rows() const { return delta_ap.size(); }
  std::size_t cols() const { return delta_ap.empty() ? 0 : delta_ap.front().size(); }
};

/// Cell (m, p) is the mean over validation patches of AP_gray(m) - AP(m, p, v),
/// where AP_gray(m) is the mean of the model's grayscale rows. Throws listing
/// every missing (model order, patch order, validation index) triple.
HeatmapMatrix build_heatmap(std::span<const LedgerRow> ledger, int max_order,
                            int validation_count, double resize_factor = 0.5);

}  // namespace catmouse::inline CATMOUSE_PRECISION
