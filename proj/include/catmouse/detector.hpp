#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "catmouse/scene.hpp"
#include "catmouse/tensor.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

/// Architecture of the grid detector: a stack of 3x3 conv stages with leaky
/// ReLU, followed by two 1x1 heads on the final G x G feature map.
struct ArchDescriptor {
  std::uint32_t variant_id = 0;
  std::vector<std::uint32_t> widths{16, 32, 32, 32, 32};
  std::vector<std::uint32_t> strides{2, 2, 2, 1, 1};
  std::uint32_t image_size = 64;
  double box_prior = 16.0;  // side of the box decoded from zero size offsets
  double leaky_slope = 0.1;

  std::uint32_t grid() const;
  double cell_size() const { return double(image_size) / grid(); }
  void validate() const;

  friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

/// Architecture variants for the transfer zoo. Variant 0 is the default
/// detector; other ids vary stage count and widths.
ArchDescriptor arch_variant(std::uint32_t variant_id, std::uint32_t image_size = 64);

/// Adversarial-training regime: successive or not, k patches per order.
struct Regime {
  bool successive = false;
  std::uint32_t k = 1;

  std::string tag() const;  // "successive-k3", "non-successive-k1"
  static Regime parse(const std::string& tag);
  friend bool operator==(const Regime&, const Regime&) = default;
};

struct HeadWeights {
  Tensor kernel;  // [5, C, 1, 1]: confidence logit, dx, dy, dw, dh
  Tensor bias;    // [5]
};

struct DetectorModel {
  ArchDescriptor arch;
  std::vector<Tensor> stage_kernels;
  std::vector<Tensor> stage_biases;
  HeadWeights one_to_one;
  HeadWeights one_to_many;
  int order = 0;
  Regime regime;

  /// All weights in checkpoint order: stage kernel/bias pairs, then the
  /// one-to-one head, then the one-to-many head.
  std::vector<Tensor> parameters() const;
  DetectorModel clone() const;
  void set_trainable(bool on) const;
  bool frozen() const;
};

DetectorModel init_detector(const ArchDescriptor& arch, std::uint64_t seed);

struct HeadOutput {
  Tensor logits;   // [B,G,G], pre-sigmoid confidence
  Tensor offsets;  // [B,4,G,G]
};

struct RawPrediction {
  HeadOutput one_to_one;
  HeadOutput one_to_many;
  double cell_size = 8;
  double box_prior = 16;
  std::uint32_t image_size = 64;

  std::size_t batch() const { return one_to_one.logits.dim(0); }
  std::size_t grid() const { return one_to_one.logits.dim(1); }
};

RawPrediction forward(const DetectorModel& model, const Tensor& images);

struct Detection {
  Box box;
  double score = 0;  // sigmoid of the confidence logit
};

/// NMS-free decoding of the one-to-one head for one image of the batch.
/// Box center = (cell index + 0.5 + offset) * cell size; side = prior * exp(size offset).
std::vector<Detection> decode(const RawPrediction& raw, std::size_t batch_index,
                              double conf_threshold = 0.25, std::size_t max_det = 30);

/// Training loss summed over both heads. Positives: the single cell containing
/// each GT center for the one-to-one head, every cell whose center lies in a
/// GT box for the one-to-many head. BCE and smooth-L1 terms are normalized by
/// the head's positive count.
Tensor detector_loss(const RawPrediction& raw, std::span<const std::vector<Box>> ground_truth,
                     double box_weight = 2.0);

/// Flat logit indices per GT box: the arg-max cell among cells whose centers
/// lie in the box, or the nearest cell when none does.
struct TargetCells {
  std::vector<std::size_t> one_to_one;
  std::vector<std::size_t> one_to_many;
};
TargetCells target_cells(const RawPrediction& raw, std::size_t batch_index,
                         std::span<const Box> boxes);

/// For every GT box and each head (one-to-one first), the maximal confidence
/// logit over the box's cells, as scalar tensors.
std::vector<Tensor> target_confidence_logits(const RawPrediction& raw, std::size_t batch_index,
                                             std::span<const Box> boxes);

void save_detector(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_detector(const std::filesystem::path& path);

}  // namespace catmouse::inline CATMOUSE_PRECISION
