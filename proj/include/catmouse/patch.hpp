#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "catmouse/detector.hpp"
#include "catmouse/rng.hpp"
#include "catmouse/scene.hpp"
#include "catmouse/warp.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

enum class PatchRole : std::uint8_t { Train = 0, Validation = 1 };

std::string to_string(PatchRole role);

/// Square adversarial patch plus provenance.
struct Patch {
  Tensor pixels;  // [3,S,S], nominally in [0,1]
  int order = 1;
  int index = 0;
  PatchRole role = PatchRole::Train;
  Regime regime;
  std::uint64_t seed = 0;
  int source_model_order = 0;

  std::size_t size() const { return pixels.dim(1); }
};

/// i.i.d. uniform [0,1] pixels, deterministic in seed.
Patch init_patch(std::size_t size, std::uint64_t seed);

/// Constant patch with value level / 10 for level in 0..10.
Tensor grayscale_patch(int level, std::size_t size);

struct LossWeights {
  double objectness = 1.0;
  double smoothness = 0.5;
  double validity = 10.0;

  void validate() const;
};

enum class ApplicationMode { PatchTrain, AdvTrain, Eval };
enum class Placement { RandomInBox, BoxCenter };

std::string to_string(ApplicationMode mode);

struct AugmentationConfig {
  double max_rotation_deg = 30.0;
  double brightness = 0.2;       // additive, symmetric
  double contrast_min = 0.8;     // multiplicative about 0.5
  double contrast_max = 1.25;
  double perspective = 0.15;     // max corner displacement, fraction of side

  friend bool operator==(const AugmentationConfig&, const AugmentationConfig&) = default;
};

/// How patches are put into scenes in each of the three usage modes.
struct ApplicationProtocol {
  ApplicationMode mode = ApplicationMode::Eval;
  double p_box = 0.5;  // per-box placement probability (eval, patch-train)
  double p_hal = 0.5;  // one extra placement at a random image position
  double resize_min = 0.5;
  double resize_max = 0.5;
  bool augment = false;
  Placement placement = Placement::BoxCenter;
  double pi = 0.0;  // per-box probability in adv-train mode
  AugmentationConfig augmentation;

  static ApplicationProtocol patch_train(double resize_min = 0.3, double resize_max = 0.6);
  static ApplicationProtocol adv_train(double pi = 0.25, double resize_min = 0.75,
                                       double resize_max = 0.9);
  static ApplicationProtocol eval(double resize = 0.5, double p_box = 0.5, double p_hal = 0.5);

  double box_probability() const { return mode == ApplicationMode::AdvTrain ? pi : p_box; }
  double hallucination_probability() const { return mode == ApplicationMode::AdvTrain ? 0.0 : p_hal; }
  void validate() const;
  std::string describe() const;
};

struct AugmentationParams {
  double angle_deg = 0;
  double brightness = 0;
  double contrast = 1;
  std::array<Point, 4> corner_offsets{};  // pixels, for TL, TR, BR, BL
};

AugmentationParams sample_augmentation(const AugmentationConfig& config, std::size_t size, Rng& rng);

struct AugmentedPatch {
  Tensor pixels;  // [3,S,S]
  Tensor mask;    // [S,S]
};

/// Color jitter clamped to [0,1], then rotation, then perspective as one
/// projective warp.
AugmentedPatch apply_augmentation(const Tensor& pixels, const AugmentationParams& params);

/// Patch-train mode samples and applies an augmentation; the other modes
/// return the input unchanged with a full mask.
AugmentedPatch augment_patch(const Tensor& pixels, ApplicationMode mode, Rng& rng,
                             const AugmentationConfig& config = {});

/// One planned or executed placement. box_index is -1 for a hallucination.
struct PlacementRecord {
  int box_index = -1;
  bool placed = false;
  bool skipped = false;  // requested, but the target was degenerate
  int top = 0;
  int left = 0;
  int side = 0;
  double resize_factor = 0;
  std::optional<AugmentationParams> augmentation;

  bool same_decision(const PlacementRecord& other) const;
};

/// Pasted side length: resize_factor * shorter box side, rounded, at least 1.
int pasted_side(const Box& box, double resize_factor);

/// Resizes the patch to side x side and composites it with its top-left at
/// (top, left). Differentiable to the patch pixels.
Tensor paste_patch(const Tensor& image, const Tensor& pixels, const Tensor& mask, int top,
                   int left, int side);

/// Resizes the patch by resize_factor * min(box sides) and pastes it at the box
/// center or at a uniform position fully inside the box. Boxes with a side
/// below 2 px are skipped (record->skipped, image returned unchanged).
Tensor place_patch(const Tensor& image, const Tensor& pixels, const Tensor& mask, const Box& box,
                   Placement placement, double resize_factor, Rng& rng,
                   PlacementRecord* record = nullptr);

/// Draws every random decision of the protocol for one scene. Depends only on
/// the scene geometry, the protocol and the stream, never on patch content.
std::vector<PlacementRecord> plan_placements(const Scene& scene,
                                             const ApplicationProtocol& protocol, Rng& rng);

struct ProtocolOutcome {
  Tensor image;
  std::vector<PlacementRecord> decisions;
  std::size_t skipped = 0;
};

/// Applies a patch to a scene per protocol. An undefined patch tensor leaves
/// the image untouched but still draws and reports the decisions.
ProtocolOutcome apply_protocol(const Scene& scene, const Tensor& patch_pixels,
                               const ApplicationProtocol& protocol, Rng& rng);

struct PatchLossTerms {
  Tensor total;
  Tensor objectness;
  Tensor smoothness;
  Tensor validity;
  std::size_t objectness_count = 0;
};

/// Weighted sum of mean target confidence (sigmoid of the per-box, per-head
/// max logit) on patched scenes, total variation and squared range violation.
/// The detector must be frozen.
PatchLossTerms patch_loss_terms(const DetectorModel& model, std::span<const Scene> scenes,
                                const Tensor& patch, const LossWeights& weights,
                                const ApplicationProtocol& protocol, Rng& rng);

Tensor patch_loss(const DetectorModel& model, std::span<const Scene> scenes, const Tensor& patch,
                  const LossWeights& weights, const ApplicationProtocol& protocol, Rng& rng);

void save_patch(const Patch& patch, const std::filesystem::path& path);
Patch load_patch(const std::filesystem::path& path);

}  // namespace catmouse::inline CATMOUSE_PRECISION
