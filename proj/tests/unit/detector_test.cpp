#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "catmouse/detector.hpp"
#include "catmouse/ops.hpp"
#include "catmouse/patch.hpp"
#include "catmouse/training.hpp"

namespace {

using namespace catmouse;

Tensor random_images(std::size_t batch, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({batch, 3, size, size});
  for (auto& v : t.mutable_data()) v = static_cast<Real>(rng.uniform());
  return t;
}

RawPrediction constant_prediction(double logit, std::size_t grid = 8) {
  RawPrediction raw;
  raw.one_to_one = {Tensor({1, grid, grid}, Real(logit)), Tensor({1, 4, grid, grid})};
  raw.one_to_many = {Tensor({1, grid, grid}, Real(logit)), Tensor({1, 4, grid, grid})};
  raw.cell_size = 64.0 / double(grid);
  raw.box_prior = 16;
  raw.image_size = 64;
  return raw;
}

std::vector<Real> flat_params(const DetectorModel& m) {
  std::vector<Real> out;
  for (const Tensor& t : m.parameters()) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

DetectorTrainConfig tiny_training(int epochs) {
  DetectorTrainConfig c;
  c.arch = arch_variant(3, 64);
  c.epochs = epochs;
  c.batch_size = 8;
  return c;
}

TEST(Detector, ZeroImageWithZeroHeadsGivesBias) {
  DetectorModel m = init_detector(arch_variant(0), 1);
  for (HeadWeights* h : {&m.one_to_one, &m.one_to_many}) {
    for (auto& v : h->kernel.mutable_data()) v = 0;
    h->bias.mutable_data()[0] = Real(0.75);
  }
  const RawPrediction raw = forward(m, Tensor({2, 3, 64, 64}));
  ASSERT_EQ(raw.one_to_one.logits.shape(), (Shape{2, 8, 8}));
  ASSERT_EQ(raw.one_to_many.offsets.shape(), (Shape{2, 4, 8, 8}));
  for (Real v : raw.one_to_one.logits.data()) EXPECT_EQ(v, Real(0.75));
  for (Real v : raw.one_to_many.logits.data()) EXPECT_EQ(v, Real(0.75));
}

TEST(Detector, BatchEqualsSingleForwards) {
  const DetectorModel m = init_detector(arch_variant(0), 2);
  const Tensor batch = random_images(3, 64, 5);
  const RawPrediction all = forward(m, batch);
  for (std::size_t b = 0; b < 3; ++b) {
    const Tensor one({1, 3, 64, 64}, std::vector<Real>(batch.data().begin() + b * 3 * 4096,
                                                       batch.data().begin() + (b + 1) * 3 * 4096));
    const RawPrediction single = forward(m, one);
    for (std::size_t i = 0; i < 64; ++i) {
      EXPECT_EQ(single.one_to_one.logits.at(i), all.one_to_one.logits.at(b * 64 + i));
      EXPECT_EQ(single.one_to_many.logits.at(i), all.one_to_many.logits.at(b * 64 + i));
    }
  }
}

TEST(Detector, WrongInputSizeThrows) {
  const DetectorModel m = init_detector(arch_variant(0), 2);
  EXPECT_THROW(forward(m, Tensor({1, 3, 32, 32})), DimensionError);
  EXPECT_THROW(forward(m, Tensor({3, 64, 64})), DimensionError);
}

TEST(Detector, ArchitectureVariantsAreValidAndDistinct) {
  for (std::uint32_t v = 0; v < 6; ++v) {
    const ArchDescriptor a = arch_variant(v);
    EXPECT_NO_THROW(a.validate());
    EXPECT_EQ(a.grid(), 8u);
    EXPECT_GE(a.widths.size(), 4u);
    EXPECT_LE(a.widths.size(), 6u);
    for (std::uint32_t w = 0; w < v; ++w) EXPECT_NE(arch_variant(w).widths, a.widths);
  }
}

TEST(Decode, VeryNegativeLogitsGiveNothing) {
  EXPECT_TRUE(decode(constant_prediction(-50), 0).empty());
}

TEST(Decode, SingleCellDecodesToPriorBox) {
  RawPrediction raw = constant_prediction(-50);
  raw.one_to_one.logits.mutable_data()[2 * 8 + 5] = 0;
  const auto dets = decode(raw, 0);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_DOUBLE_EQ(dets[0].score, 0.5);
  EXPECT_DOUBLE_EQ(dets[0].box.center_x(), 5.5 * 8);
  EXPECT_DOUBLE_EQ(dets[0].box.center_y(), 2.5 * 8);
  EXPECT_DOUBLE_EQ(dets[0].box.width(), 16);
  EXPECT_DOUBLE_EQ(dets[0].box.height(), 16);
}

TEST(Decode, ScoresSortedThresholdedAndBoxesClipped) {
  Rng rng(3);
  RawPrediction raw = constant_prediction(0);
  for (auto& v : raw.one_to_one.logits.mutable_data()) v = static_cast<Real>(rng.uniform(-3, 3));
  for (auto& v : raw.one_to_one.offsets.mutable_data()) v = static_cast<Real>(rng.uniform(-2, 2));
  const auto dets = decode(raw, 0, 0.25, 30);
  EXPECT_LE(dets.size(), 30u);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    EXPECT_GE(dets[i].score, 0.25);
    if (i > 0) EXPECT_LE(dets[i].score, dets[i - 1].score);
    EXPECT_GE(dets[i].box.x_min, 0);
    EXPECT_LE(dets[i].box.x_max, 64);
    EXPECT_LT(dets[i].box.x_min, dets[i].box.x_max);
  }
  EXPECT_EQ(decode(raw, 0, 0.0, 5).size(), 5u);
}

TEST(Decode, IsDeterministic) {
  const DetectorModel m = init_detector(arch_variant(0), 7);
  const Tensor x = random_images(1, 64, 8);
  const auto a = decode(forward(m, x), 0, 0.0), b = decode(forward(m, x), 0, 0.0);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].score, b[i].score);
    EXPECT_EQ(a[i].box, b[i].box);
  }
}

TEST(DetectorLoss, SaturatedNegativesWithoutTargetsIsZero) {
  const std::vector<std::vector<Box>> gt{{}};
  EXPECT_LT(detector_loss(constant_prediction(-30), gt).item(), 1e-9);
}

TEST(DetectorLoss, ConstructedOptimumIsNearZero) {
  const Box box{10, 12, 30, 44};
  RawPrediction raw = constant_prediction(-20);
  const std::vector<std::vector<Box>> gt{{box}};
  const TargetCells cells = target_cells(raw, 0, gt[0]);
  // One-to-one positive: the cell holding the box center.
  const std::size_t center = std::size_t(box.center_y() / 8) * 8 + std::size_t(box.center_x() / 8);
  std::vector<std::size_t> covered;
  for (std::size_t c = 0; c < 64; ++c) {
    const double cx = (double(c % 8) + 0.5) * 8, cy = (double(c / 8) + 0.5) * 8;
    if (cx >= box.x_min && cx <= box.x_max && cy >= box.y_min && cy <= box.y_max) covered.push_back(c);
  }
  auto fill = [&](HeadOutput& head, const std::vector<std::size_t>& positives) {
    for (std::size_t c : positives) {
      head.logits.mutable_data()[c] = 20;
      const double dx = box.center_x() / 8 - (double(c % 8) + 0.5);
      const double dy = box.center_y() / 8 - (double(c / 8) + 0.5);
      const double t[4] = {dx, dy, std::log(box.width() / 16), std::log(box.height() / 16)};
      for (std::size_t j = 0; j < 4; ++j) head.offsets.mutable_data()[j * 64 + c] = Real(t[j]);
    }
  };
  fill(raw.one_to_one, {center});
  fill(raw.one_to_many, covered);
  EXPECT_LT(detector_loss(raw, gt).item(), 0.01);
  EXPECT_EQ(cells.one_to_one.size(), 1u);
}

TEST(DetectorLoss, RandomInitOnSceneIsFinitePositive) {
  const DetectorModel m = init_detector(arch_variant(0), 4);
  const Scene s = generate_scene(default_dataset_spec(Family::DetectorTrain, 1), 3);
  const std::vector<std::vector<Box>> gt{s.target_boxes};
  const double loss = detector_loss(forward(m, s.image.reshaped({1, 3, 64, 64})), gt).item();
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_GT(loss, 0);
}

TEST(TargetLogits, WholeImageBoxGivesGlobalMaxPerHead) {
  Rng rng(2);
  RawPrediction raw = constant_prediction(0);
  for (auto& v : raw.one_to_one.logits.mutable_data()) v = static_cast<Real>(rng.uniform(-4, 4));
  for (auto& v : raw.one_to_many.logits.mutable_data()) v = static_cast<Real>(rng.uniform(-4, 4));
  const std::vector<Box> boxes{{0, 0, 64, 64}};
  const auto logits = target_confidence_logits(raw, 0, boxes);
  ASSERT_EQ(logits.size(), 2u);
  const auto o2o = raw.one_to_one.logits.data(), o2m = raw.one_to_many.logits.data();
  EXPECT_EQ(logits[0].item(), *std::max_element(o2o.begin(), o2o.end()));
  EXPECT_EQ(logits[1].item(), *std::max_element(o2m.begin(), o2m.end()));
}

TEST(TargetLogits, CountsAndMembership) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    RawPrediction raw = constant_prediction(0);
    for (auto& v : raw.one_to_one.logits.mutable_data()) v = static_cast<Real>(rng.uniform(-4, 4));
    for (auto& v : raw.one_to_many.logits.mutable_data()) v = static_cast<Real>(rng.uniform(-4, 4));
    const std::vector<Box> boxes{{1, 1, 20, 30}, {40, 30, 43, 33}};
    const auto logits = target_confidence_logits(raw, 0, boxes);
    ASSERT_EQ(logits.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto head = (i % 2 == 0 ? raw.one_to_one : raw.one_to_many).logits.data();
      EXPECT_NE(std::find(head.begin(), head.end(), logits[i].item()), head.end());
    }
    // The small box covers no cell center and falls back to the cell holding its center.
    EXPECT_EQ(logits[2].item(), raw.one_to_one.logits.at(3 * 8 + 5));
  }
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  DetectorModel m = init_detector(arch_variant(4), 9);
  m.order = 2;
  m.regime = {true, 3};
  const auto path = std::filesystem::temp_directory_path() / "catmouse_ckpt_test.cmld";
  save_detector(m, path);
  const DetectorModel back = load_detector(path);
  EXPECT_EQ(back.arch, m.arch);
  EXPECT_EQ(back.order, 2);
  EXPECT_EQ(back.regime, m.regime);
  EXPECT_EQ(flat_params(back), flat_params(m));
  std::filesystem::remove(path);
  EXPECT_THROW(load_detector(path), std::runtime_error);
}

TEST(Regime, TagsRoundTrip) {
  for (const Regime r : {Regime{true, 3}, Regime{false, 1}, Regime{false, 3}}) {
    EXPECT_EQ(Regime::parse(r.tag()), r);
  }
  EXPECT_EQ(Regime({true, 3}).tag(), "successive-k3");
  EXPECT_THROW(Regime::parse("sometimes-k2"), std::invalid_argument);
}

TEST(Training, SameSeedGivesBitIdenticalWeights) {
  const Dataset d = generate_dataset(default_dataset_spec(Family::DetectorTrain, 1), 16);
  const auto a = train_detector(tiny_training(1), d, {}, 0.0, 5);
  const auto b = train_detector(tiny_training(1), d, {}, 0.0, 5);
  EXPECT_EQ(flat_params(a), flat_params(b));
  EXPECT_TRUE(a.frozen());
  const auto c = train_detector(tiny_training(1), d, {}, 0.0, 6);
  EXPECT_NE(flat_params(a), flat_params(c));
}

TEST(Training, PatchProbabilityValidation) {
  const Dataset d = generate_dataset(default_dataset_spec(Family::DetectorTrain, 1), 4);
  EXPECT_THROW(train_detector(tiny_training(1), d, {}, 0.25, 1), std::invalid_argument);
  EXPECT_THROW(train_detector(tiny_training(1), d, {}, -0.1, 1), std::invalid_argument);
  EXPECT_THROW(train_detector(tiny_training(0), d, {}, 0.0, 1), std::invalid_argument);
}

TEST(Training, FullPatchProbabilityCompletes) {
  const Dataset d = generate_dataset(default_dataset_spec(Family::DetectorTrain, 1), 16);
  const std::vector<Patch> pool{init_patch(8, 1), init_patch(8, 2)};
  TrainingLog log;
  const auto m = train_detector(tiny_training(2), d, pool, 1.0, 3, &log);
  ASSERT_EQ(log.epoch_loss.size(), 2u);
  for (double l : log.epoch_loss) EXPECT_TRUE(std::isfinite(l));
  EXPECT_NE(flat_params(m), flat_params(init_detector(tiny_training(2).arch, 3)));
}

TEST(Training, LossDecreasesOverFirstTenEpochs) {
  const Dataset d = generate_dataset(default_dataset_spec(Family::DetectorTrain, 1), 96);
  std::vector<double> drops;
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainingLog log;
    train_detector(tiny_training(10), d, {}, 0.0, seed, &log);
    drops.push_back(log.epoch_loss.front() - log.epoch_loss.back());
  }
  std::sort(drops.begin(), drops.end());
  EXPECT_GT(drops[1], 0);
}

}  // namespace
