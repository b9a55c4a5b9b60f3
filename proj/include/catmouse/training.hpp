#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "catmouse/detector.hpp"
#include "catmouse/patch.hpp"
#include "catmouse/scene.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

struct DetectorTrainConfig {
  ArchDescriptor arch;
  int epochs = 30;
  int batch_size = 16;
  double lr = 3e-3;
  double weight_decay = 5e-4;
  double adv_resize_min = 0.75;
  double adv_resize_max = 0.9;
  double box_loss_weight = 2.0;
  bool horizontal_flip = true;
  // Random erasing: each GT box receives, with this probability, a constant
  // random-color square of side U[erase_min, erase_max] x its short side at a
  // uniform position inside the box. Off by default.
  double erase_probability = 0.0;
  double erase_min = 0.3;
  double erase_max = 0.7;
};

struct TrainingLog {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

using ProgressFn = std::function<void(const std::string&)>;

/// AdamW training with a cosine learning-rate schedule. With a non-empty pool
/// each image first receives a uniformly chosen pool patch on each GT box with
/// probability pi (adv-train protocol) before any other augmentation.
/// Deterministic in seed. pi = 0 gives standard training.
DetectorModel train_detector(const DetectorTrainConfig& config, const Dataset& dataset,
                             std::span<const Patch> pool, double pi, std::uint64_t seed,
                             TrainingLog* log = nullptr, const ProgressFn& progress = {});

}  // namespace catmouse::inline CATMOUSE_PRECISION
