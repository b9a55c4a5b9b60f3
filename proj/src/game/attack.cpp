#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "catmouse/adamw.hpp"
#include "catmouse/game.hpp"
#include "catmouse/rng.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

double patch_learning_rate(const PatchOptConfig& config, int epoch) {
  const int steps = config.decay_every > 0 ? epoch / config.decay_every : 0;
  return config.lr * std::pow(config.decay_factor, -double(steps));
}

Patch optimize_patch(const DetectorModel& model, const Dataset& dataset,
                     const PatchOptConfig& config, std::uint64_t seed, PatchOptLog* log,
                     const ProgressFn& progress) {
  if (!model.frozen()) throw std::logic_error("optimize_patch: detector must be frozen");
  if (config.epochs < 1) throw std::invalid_argument("optimize_patch: epochs must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("optimize_patch: batch size must be >= 1");
  if (dataset.scenes.empty()) throw std::invalid_argument("optimize_patch: empty dataset");
  config.weights.validate();

  Patch patch = init_patch(config.size, derive_seed(seed, {1}));
  patch.pixels.set_requires_grad(true);
  AdamW optimizer({patch.pixels}, {.lr = config.lr, .weight_decay = 0.0});
  ApplicationProtocol protocol = ApplicationProtocol::patch_train(config.resize_min, config.resize_max);
  protocol.augmentation = config.augmentation;

  const std::size_t n = dataset.scenes.size();
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    optimizer.set_lr(patch_learning_rate(config, epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(seed, {2, static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batches) {
      std::vector<Scene> scenes;
      for (std::size_t k = start; k < std::min(n, start + config.batch_size); ++k) {
        scenes.push_back(dataset.scenes[order[k]]);
      }
      Rng rng(derive_seed(seed, {3, static_cast<std::uint64_t>(epoch), batches}));
      Tape tape;
      TapeScope scope(tape);
      const PatchLossTerms terms =
          patch_loss_terms(model, scenes, patch.pixels, config.weights, protocol, rng);
      const double value = terms.total.item();
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "optimize_patch: non-finite loss at epoch " << epoch << ", batch " << batches;
        throw std::runtime_error(os.str());
      }
      backward(tape, terms.total);
      optimizer.step();
      optimizer.zero_grad();
      loss_sum += value;
    }
    const double epoch_loss = loss_sum / double(batches);
    if (log) log->epoch_loss.push_back(epoch_loss);
    if (progress) {
      std::ostringstream os;
      os << "optimize-patch epoch " << epoch + 1 << '/' << config.epochs << " loss " << epoch_loss;
      progress(os.str());
    }
  }

  std::vector<Real> pixels(patch.pixels.data().begin(), patch.pixels.data().end());
  for (Real& v : pixels) v = std::clamp<Real>(v, 0, 1);
  Patch result;
  result.pixels = Tensor(patch.pixels.shape(), std::move(pixels));
  result.order = model.order + 1;
  result.regime = model.regime;
  result.seed = seed;
  result.source_model_order = model.order;
  return result;
}

DetectorModel harden(const DetectorTrainConfig& config, const Dataset& dataset,
                     std::span<const Patch> pool, double pi, int order, const Regime& regime,
                     std::uint64_t seed, const ProgressFn& progress) {
  if (pool.empty()) throw std::invalid_argument("harden: patch pool is empty");
  for (const Patch& p : pool) {
    if (p.role == PatchRole::Validation) {
      throw std::invalid_argument("harden: validation patches must not enter a training pool");
    }
  }
  DetectorModel model = train_detector(config, dataset, pool, pi, seed, nullptr, progress);
  model.order = order;
  model.regime = regime;
  return model;
}

std::uint64_t patch_seed(std::uint64_t master, int order, int index, PatchRole role) {
  return derive_seed(master, {0x9a7c4ULL, static_cast<std::uint64_t>(order),
                              static_cast<std::uint64_t>(index), static_cast<std::uint64_t>(role)});
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
