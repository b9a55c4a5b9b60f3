#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "catmouse/detector.hpp"
#include "catmouse/ops.hpp"
#include "catmouse/patch.hpp"
#include "catmouse/scene.hpp"

namespace {

using namespace catmouse;

Scene blank_scene(std::vector<Box> boxes, double value = 0.3) {
  Scene s;
  s.image = Tensor({3, 64, 64}, Real(value));
  s.target_boxes = std::move(boxes);
  return s;
}

bool same_pixels(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

TEST(InitPatch, DeterministicUniformAndValidated) {
  const Patch a = init_patch(24, 3), b = init_patch(24, 3), c = init_patch(24, 4);
  EXPECT_TRUE(same_pixels(a.pixels, b.pixels));
  EXPECT_FALSE(same_pixels(a.pixels, c.pixels));
  EXPECT_EQ(a.pixels.shape(), (Shape{3, 24, 24}));
  double total = 0;
  for (Real v : a.pixels.data()) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 1);
    total += v;
  }
  const double m = total / double(a.pixels.numel());
  EXPECT_GE(m, 0.45);
  EXPECT_LE(m, 0.55);
  EXPECT_THROW(init_patch(3, 1), std::invalid_argument);
}

TEST(GrayscalePatch, Levels) {
  const Tensor black = grayscale_patch(0, 6), white = grayscale_patch(10, 6),
               mid = grayscale_patch(5, 6);
  for (Real v : black.data()) EXPECT_EQ(v, 0);
  for (Real v : white.data()) EXPECT_EQ(v, 1);
  for (Real v : mid.data()) EXPECT_EQ(v, Real(0.5));
  EXPECT_THROW(grayscale_patch(11, 6), std::out_of_range);
  EXPECT_THROW(grayscale_patch(-1, 6), std::out_of_range);
}

TEST(Augment, NonTrainingModesAreIdentity) {
  const Patch p = init_patch(8, 1);
  Rng rng(1);
  for (ApplicationMode mode : {ApplicationMode::AdvTrain, ApplicationMode::Eval}) {
    const AugmentedPatch out = augment_patch(p.pixels, mode, rng);
    EXPECT_TRUE(same_pixels(out.pixels, p.pixels));
    for (Real m : out.mask.data()) EXPECT_EQ(m, 1);
  }
}

TEST(Augment, SampledParametersStayInBounds) {
  const AugmentationConfig config;
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) {
    const AugmentationParams p = sample_augmentation(config, 24, rng);
    ASSERT_LE(std::abs(p.angle_deg), 30.0);
    ASSERT_LE(std::abs(p.brightness), 0.2);
    ASSERT_GE(p.contrast, 0.8);
    ASSERT_LE(p.contrast, 1.25);
    for (const Point& o : p.corner_offsets) {
      ASSERT_LE(std::abs(o.x), 0.15 * 24);
      ASSERT_LE(std::abs(o.y), 0.15 * 24);
    }
  }
}

TEST(Augment, PatchTrainModeChangesPixels) {
  const Patch p = init_patch(8, 1);
  Rng rng(5);
  const AugmentedPatch out = augment_patch(p.pixels, ApplicationMode::PatchTrain, rng);
  EXPECT_EQ(out.pixels.shape(), p.pixels.shape());
  EXPECT_FALSE(same_pixels(out.pixels, p.pixels));
}

TEST(Place, ZeroMaskLeavesImage) {
  const Scene s = blank_scene({{10, 10, 30, 50}});
  Rng rng(1);
  const Tensor out = place_patch(s.image, Tensor({3, 8, 8}, 1), Tensor({8, 8}), s.target_boxes[0],
                                 Placement::BoxCenter, 0.5, rng);
  EXPECT_TRUE(same_pixels(out, s.image));
}

TEST(Place, EvalPlacementIsCenteredWithShortSideScale) {
  const Box box{10, 10, 30, 50};
  EXPECT_EQ(pasted_side(box, 0.5), 10);
  Rng rng(1);
  PlacementRecord r;
  const Scene s = blank_scene({box});
  const Tensor out = place_patch(s.image, Tensor({3, 8, 8}, 1), Tensor({8, 8}, 1), box,
                                 Placement::BoxCenter, 0.5, rng, &r);
  EXPECT_EQ(r.side, 10);
  EXPECT_DOUBLE_EQ(r.left + r.side / 2.0, box.center_x());
  EXPECT_DOUBLE_EQ(r.top + r.side / 2.0, box.center_y());
  std::size_t painted = 0;
  for (Real v : out.data()) painted += v > Real(0.999);
  EXPECT_EQ(painted, 3u * 10 * 10);
}

TEST(Place, RandomPlacementStaysInsideBox) {
  const Box box{5, 7, 25, 43};
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    PlacementRecord r;
    place_patch(Tensor({3, 64, 64}), Tensor({3, 4, 4}), Tensor({4, 4}, 1), box, Placement::RandomInBox,
                rng.uniform(0.3, 0.9), rng, &r);
    ASSERT_TRUE(r.placed);
    EXPECT_GE(r.left, box.x_min);
    EXPECT_GE(r.top, box.y_min);
    EXPECT_LE(r.left + r.side, box.x_max);
    EXPECT_LE(r.top + r.side, box.y_max);
  }
}

TEST(Place, DegenerateBoxIsSkipped) {
  Rng rng(1);
  PlacementRecord r;
  const Tensor image({3, 64, 64}, 0.2);
  const Tensor out = place_patch(image, Tensor({3, 4, 4}, 1), Tensor({4, 4}, 1), {3, 3, 4.5, 30},
                                 Placement::BoxCenter, 0.5, rng, &r);
  EXPECT_TRUE(r.skipped);
  EXPECT_FALSE(r.placed);
  EXPECT_TRUE(same_pixels(out, image));
  const Scene s = blank_scene({{3, 3, 4.5, 30}, {20, 20, 40, 50}});
  ApplicationProtocol protocol = ApplicationProtocol::eval(0.5, 1.0, 0.0);
  EXPECT_EQ(apply_protocol(s, Tensor({3, 4, 4}, 1), protocol, rng).skipped, 1u);
}

TEST(Protocol, ModeDefaults) {
  const auto pt = ApplicationProtocol::patch_train();
  EXPECT_EQ(pt.box_probability(), 1.0);
  EXPECT_EQ(pt.hallucination_probability(), 0.0);
  EXPECT_TRUE(pt.augment);
  EXPECT_EQ(pt.placement, Placement::RandomInBox);
  EXPECT_EQ(pt.resize_min, 0.3);
  EXPECT_EQ(pt.resize_max, 0.6);
  const auto at = ApplicationProtocol::adv_train(0.25);
  EXPECT_EQ(at.box_probability(), 0.25);
  EXPECT_EQ(at.hallucination_probability(), 0.0);
  EXPECT_FALSE(at.augment);
  EXPECT_EQ(at.resize_min, 0.75);
  EXPECT_EQ(at.resize_max, 0.9);
  const auto ev = ApplicationProtocol::eval();
  EXPECT_EQ(ev.box_probability(), 0.5);
  EXPECT_EQ(ev.hallucination_probability(), 0.5);
  EXPECT_EQ(ev.placement, Placement::BoxCenter);
  EXPECT_EQ(ev.resize_min, 0.5);
  ApplicationProtocol bad = ev;
  bad.p_box = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Protocol, ZeroProbabilitiesLeaveSceneUnchanged) {
  const Scene s = generate_scene(default_dataset_spec(Family::Eval, 1), 0);
  Rng rng(4);
  const auto out = apply_protocol(s, init_patch(8, 1).pixels, ApplicationProtocol::eval(0.5, 0, 0), rng);
  EXPECT_TRUE(same_pixels(out.image, s.image));
}

TEST(Protocol, CertainPlacementOnThreeBoxes) {
  const Scene s = blank_scene({{2, 2, 20, 34}, {24, 2, 42, 34}, {44, 20, 62, 60}});
  Rng rng(4);
  const auto out = apply_protocol(s, init_patch(8, 1).pixels, ApplicationProtocol::eval(0.5, 1, 0), rng);
  std::size_t placed = 0;
  for (const auto& d : out.decisions) placed += d.placed;
  EXPECT_EQ(placed, 3u);
}

TEST(Protocol, DecisionsIndependentOfPatchContent) {
  const Dataset d = generate_dataset(default_dataset_spec(Family::Eval, 3), 40);
  const ApplicationProtocol protocol = ApplicationProtocol::eval();
  const std::vector<Tensor> sources{init_patch(24, 1).pixels, init_patch(24, 2).pixels,
                                    grayscale_patch(3, 8), Tensor()};
  for (const Scene& s : d.scenes) {
    std::vector<std::vector<PlacementRecord>> logs;
    for (const Tensor& src : sources) {
      Rng rng(derive_seed(11, {s.index}));
      logs.push_back(apply_protocol(s, src, protocol, rng).decisions);
    }
    for (std::size_t k = 1; k < logs.size(); ++k) {
      ASSERT_EQ(logs[k].size(), logs[0].size());
      for (std::size_t i = 0; i < logs[0].size(); ++i) EXPECT_TRUE(logs[k][i].same_decision(logs[0][i]));
    }
  }
}

TEST(Protocol, CompositingPreservesRange) {
  const Dataset d = generate_dataset(default_dataset_spec(Family::PatchTrain, 8), 30);
  Rng rng(21);
  for (const Scene& s : d.scenes) {
    const auto size = static_cast<std::size_t>(rng.integer(4, 16));
    const Tensor patch = init_patch(size, rng.next_u64()).pixels;
    const ApplicationProtocol protocol =
        rng.bernoulli(0.5) ? ApplicationProtocol::patch_train()
                           : ApplicationProtocol::eval(rng.uniform(0.2, 0.8), rng.uniform(), rng.uniform());
    const auto out = apply_protocol(s, patch, protocol, rng);
    for (Real v : out.image.data()) {
      ASSERT_GE(v, 0);
      ASSERT_LE(v, 1);
    }
  }
}

TEST(Protocol, HallucinationUsesMedianShortSide) {
  const Scene s = blank_scene({{2, 2, 14, 30}, {20, 2, 40, 40}, {44, 4, 60, 40}});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto plan = plan_placements(s, ApplicationProtocol::eval(0.5, 0, 1), rng);
    ASSERT_EQ(plan.size(), 4u);
    EXPECT_EQ(plan.back().box_index, -1);
    EXPECT_TRUE(plan.back().placed);
    EXPECT_EQ(plan.back().side, 8);
    EXPECT_GE(plan.back().left, 0);
    EXPECT_LE(plan.back().left + 8, 64);
  }
}

TEST(PatchLoss, EmptyObjectnessAndInRangeValidityAreZero) {
  DetectorModel m = init_detector(arch_variant(0), 1);
  m.set_trainable(false);
  const std::vector<Scene> scenes{blank_scene({})};
  Rng rng(1);
  const auto terms = patch_loss_terms(m, scenes, grayscale_patch(5, 8), {1.0, 0.0, 0.0},
                                      ApplicationProtocol::patch_train(), rng);
  EXPECT_EQ(terms.total.item(), 0);
  EXPECT_EQ(terms.objectness_count, 0u);
  EXPECT_EQ(terms.validity.item(), 0);
}

TEST(PatchLoss, WeightedSumOfTerms) {
  DetectorModel m = init_detector(arch_variant(0), 1);
  m.set_trainable(false);
  const std::vector<Scene> scenes{generate_scene(default_dataset_spec(Family::PatchTrain, 1), 0)};
  Tensor patch = init_patch(8, 2).pixels;
  patch.mutable_data()[0] = Real(1.5);
  patch.mutable_data()[1] = Real(-0.5);
  const LossWeights w{2.0, 0.5, 10.0};
  Rng rng(7);
  const auto t = patch_loss_terms(m, scenes, patch, w, ApplicationProtocol::patch_train(), rng);
  EXPECT_EQ(t.objectness_count, 2 * scenes[0].target_boxes.size());
  EXPECT_NEAR(t.validity.item(), 0.5 / 192.0, 1e-7);
  EXPECT_NEAR(t.total.item(),
              2.0 * t.objectness.item() + 0.5 * t.smoothness.item() + 10.0 * t.validity.item(), 1e-6);
  EXPECT_GT(t.objectness.item(), 0);
  EXPECT_LT(t.objectness.item(), 1);
}

TEST(PatchLoss, RequiresFrozenDetectorAndPositiveObjectnessWeight) {
  DetectorModel m = init_detector(arch_variant(0), 1);
  m.set_trainable(true);
  const std::vector<Scene> scenes{blank_scene({})};
  Rng rng(1);
  EXPECT_THROW(patch_loss(m, scenes, grayscale_patch(5, 8), {}, ApplicationProtocol::patch_train(), rng),
               std::logic_error);
  m.set_trainable(false);
  EXPECT_THROW(patch_loss(m, scenes, grayscale_patch(5, 8), {0.0, 0.5, 10.0},
                          ApplicationProtocol::patch_train(), rng),
               std::invalid_argument);
}

TEST(PatchFile, RoundTrip) {
  Patch p = init_patch(6, 9);
  p.order = 2;
  p.index = 3;
  p.role = PatchRole::Validation;
  p.regime = {true, 3};
  const auto path = std::filesystem::temp_directory_path() / "catmouse_patch_test.cmpt";
  save_patch(p, path);
  const Patch back = load_patch(path);
  EXPECT_EQ(back.order, 2);
  EXPECT_EQ(back.index, 3);
  EXPECT_EQ(back.role, PatchRole::Validation);
  EXPECT_EQ(back.regime, p.regime);
  EXPECT_TRUE(same_pixels(back.pixels, p.pixels));
  std::filesystem::remove(path);
  EXPECT_THROW(load_patch(path), std::runtime_error);
}

}  // namespace
