#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "catmouse/detector.hpp"
#include "catmouse/evaluator.hpp"
#include "catmouse/patch.hpp"
#include "catmouse/scene.hpp"
#include "catmouse/training.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

struct PatchOptConfig {
  std::size_t size = 24;
  int epochs = 60;
  double lr = 0.01;
  int decay_every = 20;
  double decay_factor = 10.0;
  std::size_t batch_size = 8;
  LossWeights weights;
  double resize_min = 0.3;
  double resize_max = 0.6;
  AugmentationConfig augmentation;
};

/// lr * decay_factor^-floor(epoch / decay_every).
double patch_learning_rate(const PatchOptConfig& config, int epoch);

struct PatchOptLog {
  std::vector<double> epoch_loss;
};

/// Evasion attack: minimizes the patch loss against a frozen detector over the
/// patch-train scenes in shuffled mini-batches with AdamW. The returned patch
/// is clamped to [0,1] and tagged with order model.order + 1.
Patch optimize_patch(const DetectorModel& model, const Dataset& dataset,
                     const PatchOptConfig& config, std::uint64_t seed,
                     PatchOptLog* log = nullptr, const ProgressFn& progress = {});

/// Adversarial training of a fresh detector with the given pool; the result is
/// tagged with the given order and regime.
DetectorModel harden(const DetectorTrainConfig& config, const Dataset& dataset,
                     std::span<const Patch> pool, double pi, int order, const Regime& regime,
                     std::uint64_t seed, const ProgressFn& progress = {});

/// Seed of patch (order, index, role) under a master seed.
std::uint64_t patch_seed(std::uint64_t master, int order, int index, PatchRole role);

struct DataConfig {
  std::size_t image_size = 64;
  std::uint64_t seed = 1;
  std::size_t detector_train_count = 1024;
  std::size_t patch_train_count = 128;
  std::size_t eval_count = 200;
};

struct EvalConfig {
  std::vector<double> resize_factors{0.5};
  double p_box = 0.5;
  double p_hal = 0.5;
  std::uint64_t seed = 1;
};

struct GameConfig {
  std::string preset = "desk";
  Regime regime{true, 3};
  int max_order = 3;
  int validation_count = 4;
  double pi = 0.25;
  std::uint64_t seed = 0;
  std::size_t zoo_size = 5;
  PatchOptConfig patch;
  DetectorTrainConfig detector;
  DataConfig data;
  EvalConfig eval;

  void validate() const;
};

GameConfig desk_preset();
/// Large-scale settings: 256 px patches, 150 patch epochs with decay every 50,
/// 100 detector epochs.
GameConfig full_preset();
GameConfig preset_by_name(const std::string& name);

/// The three synthetic datasets of a run.
struct GameData {
  Dataset detector_train;
  Dataset patch_train;
  Dataset eval;
};
GameData make_game_data(const GameConfig& config);

/// Training pool for hardening model `order` (>= 1): the k train patches of
/// that order, or all train patches of orders <= order when successive.
std::vector<Patch> training_pool(const std::map<int, std::vector<Patch>>& train_patches,
                                 int order, const Regime& regime);

struct GameState {
  std::vector<DetectorModel> models;                     // index = order
  std::map<int, std::vector<Patch>> train_patches;       // by order
  std::map<int, std::vector<Patch>> validation_patches;  // by order
  std::map<int, std::size_t> pool_sizes;                 // by hardened model order
  std::vector<LedgerRow> ledger;
};

struct GameOptions {
  std::optional<std::filesystem::path> run_dir;  // persistence and resume
  std::optional<int> stop_after_order;           // simulate an interruption
  ProgressFn progress;
};

/// Plays the game to config.max_order and evaluates every model order against
/// every validation-patch order. With a run directory, completed orders are
/// persisted and reused on the next call; a config hash mismatch is refused.
GameState run_game(const GameConfig& config, const GameOptions& options = {});

/// Evaluation rows for one model: clean, 11 grayscale levels and every
/// validation patch, for each configured resize factor.
std::vector<LedgerRow> evaluate_model(const DetectorModel& model, const Dataset& eval,
                                      const std::map<int, std::vector<Patch>>& validation,
                                      const GameConfig& config, const std::string& run_id);

struct TransferOrder {
  int patch_order = 0;
  double mean_ap = 0;
  double std_ap = 0;
  double mean_delta_ap = 0;
  std::vector<double> member_ap;  // averaged over the order's validation patches
};

struct TransferResult {
  std::vector<std::uint32_t> variants;
  std::vector<double> clean_ap;  // per zoo member
  std::vector<double> gray_ap;   // per zoo member
  double clean_mean = 0;
  double clean_std = 0;
  double gray_mean = 0;
  double gray_std = 0;
  std::vector<TransferOrder> orders;
  std::vector<LedgerRow> ledger;
};

/// Standard-trained 0th-order detectors of architecture variants 1..size.
std::vector<DetectorModel> train_zoo(const GameConfig& config, const Dataset& detector_train,
                                     std::size_t size, const ProgressFn& progress = {});

TransferResult run_transfer(const std::map<int, std::vector<Patch>>& validation,
                            std::span<const DetectorModel> zoo, const Dataset& eval,
                            const GameConfig& config, const std::string& run_id);

}  // namespace catmouse::inline CATMOUSE_PRECISION
