#include "catmouse/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "catmouse/adamw.hpp"
#include "catmouse/ops.hpp"
#include "catmouse/rng.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

namespace {

Tensor flip_horizontal(const Tensor& image) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<Real> out(image.numel());
  const auto in = image.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        out[(ch * h + y) * w + x] = in[(ch * h + y) * w + (w - 1 - x)];
      }
    }
  }
  return Tensor(image.shape(), std::move(out));
}

void erase_squares(Tensor& image, const std::vector<Box>& boxes, const DetectorTrainConfig& config,
                   Rng& rng) {
  const int c = static_cast<int>(image.dim(0)), h = static_cast<int>(image.dim(1)),
            w = static_cast<int>(image.dim(2));
  std::vector<Real> px;
  for (const Box& box : boxes) {
    if (!rng.bernoulli(config.erase_probability)) continue;
    const double side_f = rng.uniform(config.erase_min, config.erase_max) * box.short_side();
    const double u = rng.uniform(), v = rng.uniform();
    Real color[3] = {Real(rng.uniform()), Real(rng.uniform()), Real(rng.uniform())};
    const int side = std::max(1, static_cast<int>(std::lround(side_f)));
    const int left = static_cast<int>(std::floor(box.x_min + u * std::max(0.0, box.width() - side)));
    const int top = static_cast<int>(std::floor(box.y_min + v * std::max(0.0, box.height() - side)));
    if (px.empty()) px.assign(image.data().begin(), image.data().end());
    for (int ch = 0; ch < c; ++ch) {
      for (int y = std::max(0, top); y < std::min(h, top + side); ++y) {
        for (int x = std::max(0, left); x < std::min(w, left + side); ++x) {
          px[(static_cast<std::size_t>(ch) * h + y) * w + x] = color[ch];
        }
      }
    }
  }
  if (!px.empty()) image = Tensor(image.shape(), std::move(px));
}

}  // namespace

DetectorModel train_detector(const DetectorTrainConfig& config, const Dataset& dataset,
                             std::span<const Patch> pool, double pi, std::uint64_t seed,
                             TrainingLog* log, const ProgressFn& progress) {
  if (config.epochs < 1) throw std::invalid_argument("train_detector: epochs must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("train_detector: batch size must be >= 1");
  if (!(pi >= 0.0 && pi <= 1.0)) throw std::invalid_argument("train_detector: pi must lie in [0,1]");
  if (pi > 0.0 && pool.empty()) {
    throw std::invalid_argument("train_detector: pi > 0 requires a non-empty patch pool");
  }
  if (dataset.scenes.empty()) throw std::invalid_argument("train_detector: empty dataset");

  DetectorModel model = init_detector(config.arch, derive_seed(seed, {1}));
  model.set_trainable(true);
  AdamW optimizer(model.parameters(), {.lr = config.lr, .weight_decay = config.weight_decay});
  const ApplicationProtocol adv =
      ApplicationProtocol::adv_train(pi, config.adv_resize_min, config.adv_resize_max);
  const bool adversarial = pi > 0.0 && !pool.empty();

  const std::size_t n = dataset.scenes.size();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(config.epochs);
  const double size = config.arch.image_size;
  Rng order_rng(derive_seed(seed, {2}));
  std::vector<std::size_t> order(n);
  std::size_t step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      std::vector<Tensor> images;
      std::vector<std::vector<Box>> boxes;
      for (std::size_t k = start; k < end; ++k) {
        const Scene& scene = dataset.scenes[order[k]];
        Rng rng(derive_seed(seed, {3, static_cast<std::uint64_t>(epoch), order[k]}));
        Tensor image = scene.image;
        std::vector<Box> gt = scene.target_boxes;
        if (adversarial) {
          const Patch& patch = pool[rng.below(pool.size())];
          image = apply_protocol(scene, patch.pixels, adv, rng).image;
        }
        if (config.erase_probability > 0) erase_squares(image, gt, config, rng);
        if (config.horizontal_flip && rng.bernoulli(0.5)) {
          image = flip_horizontal(image);
          for (Box& b : gt) b = Box{size - b.x_max, b.y_min, size - b.x_min, b.y_max};
        }
        images.push_back(std::move(image));
        boxes.push_back(std::move(gt));
      }

      // Linear warm-up over the first epoch, cosine decay to 5% afterwards.
      const double progress_frac = double(step) / double(total_steps);
      double lr = config.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * progress_frac)));
      if (step < steps_per_epoch) lr *= double(step + 1) / double(steps_per_epoch);
      optimizer.set_lr(lr);

      Tape tape;
      TapeScope scope(tape);
      const RawPrediction raw = forward(model, stack(images));
      const Tensor loss = detector_loss(raw, boxes, config.box_loss_weight);
      if (!std::isfinite(loss.item())) {
        throw std::runtime_error("train_detector: non-finite loss at epoch " + std::to_string(epoch));
      }
      backward(tape, loss);
      optimizer.step();
      optimizer.zero_grad();
      loss_sum += loss.item();
      ++step;
    }
    const double epoch_loss = loss_sum / double(steps_per_epoch);
    if (log) log->epoch_loss.push_back(epoch_loss);
    if (progress) {
      std::ostringstream os;
      os << "train-detector epoch " << epoch + 1 << '/' << config.epochs << " loss " << epoch_loss;
      progress(os.str());
    }
  }
  model.set_trainable(false);
  for (auto p : model.parameters()) p.zero_grad();
  // Drop gradient buffers so the frozen model carries weights only.
  DetectorModel frozen = model.clone();
  return frozen;
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
