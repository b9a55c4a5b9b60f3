#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "catmouse/config.hpp"
#include "catmouse/evaluator.hpp"
#include "catmouse/game.hpp"
#include "catmouse/report.hpp"
#include "json.hpp"
#include "support/tiny.hpp"

namespace {

using namespace catmouse;
namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("catmouse_game_" + name);
  fs::remove_all(p);
  return p;
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Real> pixels(const Patch& p) { return {p.pixels.data().begin(), p.pixels.data().end()}; }

Patch tagged(int order, int index, PatchRole role) {
  Patch p = init_patch(4, static_cast<std::uint64_t>(order * 100 + index));
  p.order = order;
  p.index = index;
  p.role = role;
  return p;
}

std::map<int, std::vector<Patch>> train_map(int orders, int k) {
  std::map<int, std::vector<Patch>> m;
  for (int o = 1; o <= orders; ++o) {
    for (int i = 0; i < k; ++i) m[o].push_back(tagged(o, i, PatchRole::Train));
  }
  return m;
}

TEST(PatchSchedule, StepDecay) {
  const PatchOptConfig full = full_preset().patch;
  EXPECT_DOUBLE_EQ(patch_learning_rate(full, 0), 0.01);
  EXPECT_DOUBLE_EQ(patch_learning_rate(full, 49), 0.01);
  EXPECT_DOUBLE_EQ(patch_learning_rate(full, 50), 0.001);
  EXPECT_NEAR(patch_learning_rate(full, 100), 0.0001, 1e-18);
  const PatchOptConfig desk = desk_preset().patch;
  EXPECT_DOUBLE_EQ(patch_learning_rate(desk, 20), 0.001);
}

TEST(Pools, SizesPerRegime) {
  const auto train = train_map(3, 3);
  for (int order = 1; order <= 3; ++order) {
    EXPECT_EQ(training_pool(train, order, {true, 3}).size(), std::size_t(3 * order));
    EXPECT_EQ(training_pool(train, order, {false, 3}).size(), 3u);
  }
  const auto pool = training_pool(train, 1, {true, 3});
  for (const Patch& p : pool) EXPECT_EQ(p.order, 1);
  const auto single = train_map(2, 1);
  ASSERT_EQ(training_pool(single, 2, {false, 1}).size(), 1u);
  EXPECT_EQ(training_pool(single, 2, {false, 1})[0].order, 2);
}

TEST(Pools, ValidationPatchesNeverEnter) {
  auto train = train_map(2, 2);
  train[2].push_back(tagged(2, 0, PatchRole::Validation));
  EXPECT_THROW(training_pool(train, 2, {true, 2}), std::logic_error);
  const Dataset d = generate_dataset(default_dataset_spec(Family::DetectorTrain, 1), 4);
  const std::vector<Patch> bad{tagged(1, 0, PatchRole::Validation)};
  EXPECT_THROW(harden(tiny::game_config(1, 1, true).detector, d, bad, 0.25, 1, {true, 1}, 1),
               std::invalid_argument);
  EXPECT_THROW(harden(tiny::game_config(1, 1, true).detector, d, {}, 0.25, 1, {true, 1}, 1),
               std::invalid_argument);
}

TEST(Harden, TagsAndDeterminism) {
  const GameConfig c = tiny::game_config(1, 1, true);
  const Dataset d = generate_dataset(default_dataset_spec(Family::DetectorTrain, 1), 8);
  const std::vector<Patch> pool{tagged(1, 0, PatchRole::Train)};
  const DetectorModel a = harden(c.detector, d, pool, 0.5, 1, {true, 1}, 9);
  const DetectorModel b = harden(c.detector, d, pool, 0.5, 1, {true, 1}, 9);
  EXPECT_EQ(a.order, 1);
  EXPECT_EQ(a.regime, (Regime{true, 1}));
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto pa = a.parameters()[i].data(), pb = b.parameters()[i].data();
    EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin()));
  }
}

TEST(OptimizePatch, DeterministicTaggedAndClamped) {
  const GameConfig c = tiny::game_config(1, 1, true);
  DetectorModel m = init_detector(c.detector.arch, 2);
  m.order = 0;
  const Dataset d = generate_dataset(default_dataset_spec(Family::PatchTrain, 1), 8);
  PatchOptLog log;
  const Patch a = optimize_patch(m, d, c.patch, 77, &log);
  const Patch b = optimize_patch(m, d, c.patch, 77);
  EXPECT_EQ(pixels(a), pixels(b));
  EXPECT_EQ(a.order, 1);
  EXPECT_EQ(a.source_model_order, 0);
  EXPECT_EQ(a.size(), 8u);
  EXPECT_EQ(log.epoch_loss.size(), 2u);
  for (Real v : a.pixels.data()) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 1);
  }
  EXPECT_NE(pixels(a), pixels(optimize_patch(m, d, c.patch, 78)));
  m.set_trainable(true);
  EXPECT_THROW(optimize_patch(m, d, c.patch, 77), std::logic_error);
}

TEST(PatchSeeds, DistinctPerOrderIndexRole) {
  std::set<std::uint64_t> seen;
  for (int order = 1; order <= 3; ++order) {
    for (int index = 0; index < 4; ++index) {
      for (PatchRole role : {PatchRole::Train, PatchRole::Validation}) {
        EXPECT_TRUE(seen.insert(patch_seed(5, order, index, role)).second);
      }
    }
  }
}

TEST(Game, SingleOrderStructure) {
  const GameState s = run_game(tiny::game_config(1, 1, false));
  EXPECT_EQ(s.models.size(), 2u);
  EXPECT_EQ(s.train_patches.at(1).size(), 1u);
  EXPECT_EQ(s.validation_patches.at(1).size(), 2u);
  EXPECT_EQ(s.pool_sizes.at(1), 1u);
  const HeatmapMatrix h = build_heatmap(s.ledger, 1, 2);
  EXPECT_EQ(h.rows(), 2u);
  EXPECT_EQ(h.cols(), 1u);
  // Per model: clean, 11 grayscale levels, 2 validation patches.
  EXPECT_EQ(s.ledger.size(), 2u * 14);
}

TEST(Game, ThreeOrdersSuccessiveCounts) {
  const fs::path dir = scratch("three");
  GameOptions options;
  options.run_dir = dir;
  const GameState s = run_game(tiny::game_config(3, 3, true), options);
  std::size_t train = 0, validation = 0;
  for (const auto& [o, v] : s.train_patches) train += v.size();
  for (const auto& [o, v] : s.validation_patches) validation += v.size();
  EXPECT_EQ(train, 9u);
  EXPECT_EQ(validation, 6u);
  EXPECT_EQ(s.pool_sizes.at(1), 3u);
  EXPECT_EQ(s.pool_sizes.at(2), 6u);
  EXPECT_EQ(s.pool_sizes.at(3), 9u);
  EXPECT_EQ(build_heatmap(s.ledger, 3, 2).rows(), 4u);
  for (int order = 1; order <= 3; ++order) {
    const auto prov = nlohmann::json::parse(bytes(dir / ("order_" + std::to_string(order)) / "provenance.json"));
    EXPECT_EQ(prov["hardening_pool"].size(), std::size_t(3 * order));
  }
  EXPECT_TRUE(verify_manifest(dir).empty());
  fs::remove_all(dir);
}

TEST(Game, NonSuccessivePoolsHoldOnlyLatestOrder) {
  const GameState s = run_game(tiny::game_config(2, 3, false));
  EXPECT_EQ(s.pool_sizes.at(1), 3u);
  EXPECT_EQ(s.pool_sizes.at(2), 3u);
}

TEST(Game, ValidationHashesNeverInPools) {
  const fs::path dir = scratch("hashes");
  GameOptions options;
  options.run_dir = dir;
  const GameState s = run_game(tiny::game_config(2, 2, true), options);
  std::set<std::string> validation;
  for (const auto& [o, patches] : s.validation_patches) {
    for (const Patch& p : patches) {
      validation.insert(hex64(fnv1a(std::string_view(reinterpret_cast<const char*>(p.pixels.data().data()),
                                                     p.pixels.numel() * sizeof(Real)))));
    }
  }
  for (int order = 1; order <= 2; ++order) {
    const auto prov = nlohmann::json::parse(bytes(dir / ("order_" + std::to_string(order)) / "provenance.json"));
    for (const auto& e : prov["hardening_pool"]) EXPECT_FALSE(validation.contains(e["hash"].get<std::string>()));
  }
  fs::remove_all(dir);
}

TEST(Game, RepeatRunsAreBitIdentical) {
  const fs::path a = scratch("repeat_a"), b = scratch("repeat_b");
  const GameConfig c = tiny::game_config(2, 1, true);
  run_game(c, {a, std::nullopt, {}});
  run_game(c, {b, std::nullopt, {}});
  for (const char* f : {"ledger.csv", "ledger.json", "order_0/model.cmld", "order_2/model.cmld",
                        "order_1/train_0.cmpt", "order_2/val_1.cmpt", "order_2/provenance.json"}) {
    EXPECT_EQ(bytes(a / f), bytes(b / f)) << f;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Game, ResumeMatchesUninterruptedRun) {
  const fs::path full = scratch("resume_full"), cut = scratch("resume_cut");
  const GameConfig c = tiny::game_config(3, 1, true);
  run_game(c, {full, std::nullopt, {}});
  const GameState partial = run_game(c, {cut, 2, {}});
  EXPECT_TRUE(partial.ledger.empty());
  EXPECT_FALSE(fs::exists(cut / "ledger.csv"));
  run_game(c, {cut, std::nullopt, {}});
  EXPECT_EQ(bytes(full / "ledger.csv"), bytes(cut / "ledger.csv"));
  EXPECT_EQ(bytes(full / "order_3/model.cmld"), bytes(cut / "order_3/model.cmld"));
  fs::remove_all(full);
  fs::remove_all(cut);
}

TEST(Game, ResumeWithDifferentConfigIsRefused) {
  const fs::path dir = scratch("mismatch");
  GameConfig c = tiny::game_config(2, 1, true);
  run_game(c, {dir, 1, {}});
  c.pi = 0.5;
  try {
    run_game(c, {dir, std::nullopt, {}});
    FAIL() << "expected refusal";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("resume refused"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Transfer, SingleMemberZoo) {
  const GameConfig c = tiny::game_config(1, 1, true);
  const GameData data = make_game_data(c);
  const auto zoo = train_zoo(c, data.detector_train, 1);
  ASSERT_EQ(zoo.size(), 1u);
  EXPECT_EQ(zoo[0].arch.variant_id, 1u);
  std::map<int, std::vector<Patch>> validation{{1, {tagged(1, 0, PatchRole::Validation), tagged(1, 1, PatchRole::Validation)}}};
  const TransferResult t = run_transfer(validation, zoo, data.eval, c, "run");
  ASSERT_EQ(t.orders.size(), 1u);
  EXPECT_EQ(t.orders[0].std_ap, 0.0);
  EXPECT_EQ(t.clean_std, 0.0);
  EXPECT_EQ(t.ledger.size(), 14u);
  EXPECT_EQ(t.ledger.front().run_id, "run:zoo-1");
  double patch_total = 0;
  for (const LedgerRow& r : t.ledger) {
    if (r.source == "patch") patch_total += r.result.ap;
  }
  EXPECT_NEAR(t.orders[0].mean_ap, patch_total / 2, 1e-12);
  EXPECT_NEAR(t.orders[0].mean_delta_ap, t.gray_mean - t.orders[0].mean_ap, 1e-12);
}

TEST(Transfer, BarValuesAreMemberMeans) {
  const GameConfig c = tiny::game_config(1, 1, true);
  const GameData data = make_game_data(c);
  const auto zoo = train_zoo(c, data.detector_train, 3);
  std::map<int, std::vector<Patch>> validation{{1, {tagged(1, 0, PatchRole::Validation)}}};
  const TransferResult t = run_transfer(validation, zoo, data.eval, c, "run");
  ASSERT_EQ(t.orders[0].member_ap.size(), 3u);
  const double manual = (t.orders[0].member_ap[0] + t.orders[0].member_ap[1] + t.orders[0].member_ap[2]) / 3;
  EXPECT_NEAR(t.orders[0].mean_ap, manual, 1e-12);
  for (double ap : t.clean_ap) {
    EXPECT_GE(ap, 0);
    EXPECT_LE(ap, 1);
  }
  EXPECT_EQ(t.variants, (std::vector<std::uint32_t>{1, 2, 3}));
}

TEST(GameConfigTest, PresetsAndValidation) {
  const GameConfig desk = desk_preset();
  EXPECT_EQ(desk.patch.size, 24u);
  EXPECT_EQ(desk.patch.epochs, 60);
  EXPECT_EQ(desk.detector.epochs, 30);
  EXPECT_EQ(desk.pi, 0.25);
  EXPECT_EQ(desk.validation_count, 4);
  const GameConfig full = full_preset();
  EXPECT_EQ(full.patch.size, 256u);
  EXPECT_EQ(full.patch.epochs, 150);
  EXPECT_EQ(full.detector.epochs, 100);
  EXPECT_THROW(preset_by_name("laptop"), std::invalid_argument);
  GameConfig bad = desk;
  bad.validation_count = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

}  // namespace
