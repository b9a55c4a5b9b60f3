#include "catmouse/game.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "catmouse/config.hpp"
#include "catmouse/parallel.hpp"
#include "catmouse/report.hpp"
#include "catmouse/rng.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

namespace fs = std::filesystem;

void GameConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("game config: " + m); };
  if (max_order < 1) fail("max_order must be >= 1");
  if (validation_count < 1) fail("validation_count must be >= 1");
  if (regime.k < 1) fail("k must be >= 1");
  if (!(pi >= 0 && pi <= 1)) fail("pi must lie in [0, 1]");
  if (patch.resize_min > patch.resize_max) fail("patch resize_min exceeds resize_max");
  if (patch.augmentation.contrast_min > patch.augmentation.contrast_max) {
    fail("contrast_min exceeds contrast_max");
  }
  if (detector.adv_resize_min > detector.adv_resize_max) fail("adv_resize_min exceeds adv_resize_max");
  if (detector.erase_min > detector.erase_max) fail("erase_min exceeds erase_max");
  if (eval.resize_factors.empty()) fail("at least one eval resize factor is required");
  if (detector.arch.image_size != data.image_size) fail("detector image size differs from data image size");
  patch.weights.validate();
  detector.arch.validate();
}

GameConfig desk_preset() {
  GameConfig c;
  c.preset = "desk";
  c.detector.arch = arch_variant(0, static_cast<std::uint32_t>(c.data.image_size));
  return c;
}

GameConfig full_preset() {
  GameConfig c = desk_preset();
  c.preset = "full";
  c.patch.size = 256;
  c.patch.epochs = 150;
  c.patch.decay_every = 50;
  c.detector.epochs = 100;
  c.eval.resize_factors = {0.5, 0.25, 0.75};
  return c;
}

GameConfig preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "full") return full_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (expected desk or full)");
}

GameData make_game_data(const GameConfig& config) {
  const int size = static_cast<int>(config.data.image_size);
  GameData d;
  d.detector_train = generate_dataset(default_dataset_spec(Family::DetectorTrain, config.data.seed, size),
                                      config.data.detector_train_count);
  d.patch_train = generate_dataset(default_dataset_spec(Family::PatchTrain, config.data.seed, size),
                                   config.data.patch_train_count);
  d.eval = generate_dataset(default_dataset_spec(Family::Eval, config.data.seed, size),
                            config.data.eval_count);
  return d;
}

std::vector<Patch> training_pool(const std::map<int, std::vector<Patch>>& train_patches, int order,
                                 const Regime& regime) {
  std::vector<Patch> pool;
  const int first = regime.successive ? 1 : order;
  for (int o = first; o <= order; ++o) {
    const auto it = train_patches.find(o);
    if (it == train_patches.end()) {
      throw std::logic_error("training_pool: no train patches of order " + std::to_string(o));
    }
    for (const Patch& p : it->second) {
      if (p.role != PatchRole::Train) {
        throw std::logic_error("training_pool: validation patch among train patches");
      }
      pool.push_back(p);
    }
  }
  return pool;
}

namespace {

std::uint64_t model_seed(std::uint64_t master, int order) {
  return derive_seed(master, {0x30de1ULL, static_cast<std::uint64_t>(order)});
}

fs::path order_dir(const fs::path& run, int order) { return run / ("order_" + std::to_string(order)); }

std::string patch_file(PatchRole role, int index) {
  return std::string(role == PatchRole::Train ? "train_" : "val_") + std::to_string(index);
}

struct RunState {
  std::string config_hash;
  int completed_order = -1;  // highest order with a persisted model
};

RunState read_state(const fs::path& run) {
  const auto j = nlohmann::json::parse(read_text_file(run / "state.json"));
  return {j.at("config_hash").get<std::string>(), j.at("completed_order").get<int>()};
}

void write_state(const fs::path& run, const RunState& s) {
  nlohmann::json j;
  j["config_hash"] = s.config_hash;
  j["completed_order"] = s.completed_order;
  write_text_file(run / "state.json", j.dump(2) + "\n");
}

void write_provenance(const fs::path& dir, const std::vector<Patch>& train,
                      const std::vector<Patch>& validation, const std::vector<Patch>& pool) {
  auto entry = [](const Patch& p) {
    nlohmann::json e;
    e["order"] = p.order;
    e["index"] = p.index;
    e["role"] = to_string(p.role);
    e["regime"] = p.regime.tag();
    e["seed"] = p.seed;
    e["source_model_order"] = p.source_model_order;
    e["file"] = patch_file(p.role, p.index) + ".cmpt";
    return e;
  };
  nlohmann::json j;
  j["train_patches"] = nlohmann::json::array();
  j["validation_patches"] = nlohmann::json::array();
  j["hardening_pool"] = nlohmann::json::array();
  for (const Patch& p : train) j["train_patches"].push_back(entry(p));
  for (const Patch& p : validation) j["validation_patches"].push_back(entry(p));
  for (const Patch& p : pool) {
    j["hardening_pool"].push_back(
        {{"order", p.order}, {"index", p.index}, {"hash", hex64(fnv1a(std::string_view(
                                                     reinterpret_cast<const char*>(p.pixels.data().data()),
                                                     p.pixels.numel() * sizeof(Real))))}});
  }
  write_text_file(dir / "provenance.json", j.dump(2) + "\n");
}

void save_patch_files(const fs::path& dir, const Patch& p) {
  save_patch(p, dir / (patch_file(p.role, p.index) + ".cmpt"));
  write_png(dir / (patch_file(p.role, p.index) + ".png"), p.pixels);
}

}  // namespace

std::vector<LedgerRow> evaluate_model(const DetectorModel& model, const Dataset& eval,
                                      const std::map<int, std::vector<Patch>>& validation,
                                      const GameConfig& config, const std::string& run_id) {
  std::vector<LedgerRow> rows;
  for (double factor : config.eval.resize_factors) {
    const ApplicationProtocol protocol =
        ApplicationProtocol::eval(factor, config.eval.p_box, config.eval.p_hal);
    auto add = [&](const PatchSource& source, int patch_order, int patch_index) {
      LedgerRow row;
      row.run_id = run_id;
      row.model_order = model.order;
      row.patch_order = patch_order;
      row.patch_index = patch_index;
      row.source = source.describe();
      row.resize_factor = factor;
      row.result = evaluate(model, eval, source, protocol, config.eval.seed);
      rows.push_back(std::move(row));
    };
    add(PatchSource::clean(), 0, 0);
    for (int level = 0; level <= 10; ++level) add(PatchSource::grayscale(level), 0, level);
    for (const auto& [order, patches] : validation) {
      for (const Patch& p : patches) add(PatchSource::patch(p.pixels), order, p.index);
    }
  }
  return rows;
}

GameState run_game(const GameConfig& config, const GameOptions& options) {
  config.validate();
  const std::string hash = hex64(config_hash(config));
  const std::string run_id = hash;
  std::mutex progress_mutex;
  auto say = [&](const std::string& msg) {
    std::lock_guard lock(progress_mutex);
    if (options.progress) options.progress(msg);
    if (options.run_dir) log_event(*options.run_dir, msg);
  };

  RunState persisted;
  if (options.run_dir) {
    fs::create_directories(*options.run_dir);
    if (fs::exists(*options.run_dir / "state.json")) {
      persisted = read_state(*options.run_dir);
      if (persisted.config_hash != hash) {
        throw std::runtime_error("resume refused: run directory " + options.run_dir->string() +
                                 " was created with config hash " + persisted.config_hash +
                                 ", current config hash is " + hash);
      }
      say("resuming after order " + std::to_string(persisted.completed_order));
    } else {
      persisted.config_hash = hash;
      write_text_file(*options.run_dir / "config.txt", serialize_config(config));
      write_state(*options.run_dir, persisted);
      say("new run " + run_id);
    }
  }

  const GameData data = make_game_data(config);
  GameState state;
  const ProgressFn quiet = {};

  auto restore_or_train_model = [&](int order) -> DetectorModel {
    if (options.run_dir && order <= persisted.completed_order) {
      DetectorModel m = load_detector(order_dir(*options.run_dir, order) / "model.cmld");
      m.set_trainable(false);
      return m;
    }
    DetectorModel m;
    if (order == 0) {
      say("training order-0 detector");
      m = train_detector(config.detector, data.detector_train, {}, 0.0, model_seed(config.seed, 0));
      m.order = 0;
      m.regime = config.regime;
    } else {
      const std::vector<Patch> pool = training_pool(state.train_patches, order, config.regime);
      say("hardening order-" + std::to_string(order) + " detector on a pool of " +
          std::to_string(pool.size()) + " patches");
      m = harden(config.detector, data.detector_train, pool, config.pi, order, config.regime,
                 model_seed(config.seed, order));
    }
    return m;
  };

  state.models.push_back(restore_or_train_model(0));
  if (options.run_dir && persisted.completed_order < 0) {
    fs::create_directories(order_dir(*options.run_dir, 0));
    save_detector(state.models[0], order_dir(*options.run_dir, 0) / "model.cmld");
    persisted.completed_order = 0;
    write_state(*options.run_dir, persisted);
  }

  const int k = static_cast<int>(config.regime.k);
  const int v_count = config.validation_count;
  for (int n = 0; n < config.max_order; ++n) {
    const int order = n + 1;
    const bool restored = options.run_dir && order <= persisted.completed_order;
    std::vector<Patch> train(k), validation(v_count);
    if (restored) {
      const fs::path dir = order_dir(*options.run_dir, order);
      for (int i = 0; i < k; ++i) train[i] = load_patch(dir / (patch_file(PatchRole::Train, i) + ".cmpt"));
      for (int i = 0; i < v_count; ++i) {
        validation[i] = load_patch(dir / (patch_file(PatchRole::Validation, i) + ".cmpt"));
      }
      for (auto* set : {&train, &validation}) {
        for (Patch& p : *set) {
          p.seed = patch_seed(config.seed, order, p.index, p.role);
          p.source_model_order = n;
        }
      }
    } else {
      say("optimizing " + std::to_string(k) + " train and " + std::to_string(v_count) +
          " validation patches of order " + std::to_string(order));
      const DetectorModel& target = state.models[n];
      parallel_for(static_cast<std::size_t>(k + v_count), [&](std::size_t job) {
        const bool is_train = job < static_cast<std::size_t>(k);
        const int index = is_train ? static_cast<int>(job) : static_cast<int>(job) - k;
        const PatchRole role = is_train ? PatchRole::Train : PatchRole::Validation;
        Patch p = optimize_patch(target, data.patch_train, config.patch,
                                 patch_seed(config.seed, order, index, role));
        p.index = index;
        p.role = role;
        p.regime = config.regime;
        (is_train ? train : validation)[index] = std::move(p);
        say("finished " + to_string(role) + " patch " + std::to_string(index) + " of order " +
            std::to_string(order));
      });
    }
    state.train_patches[order] = train;
    state.validation_patches[order] = validation;
    const std::vector<Patch> pool = training_pool(state.train_patches, order, config.regime);
    state.pool_sizes[order] = pool.size();
    state.models.push_back(restore_or_train_model(order));

    if (options.run_dir && !restored) {
      const fs::path dir = order_dir(*options.run_dir, order);
      fs::create_directories(dir);
      for (const Patch& p : train) save_patch_files(dir, p);
      for (const Patch& p : validation) save_patch_files(dir, p);
      write_provenance(dir, train, validation, pool);
      save_detector(state.models.back(), dir / "model.cmld");
      persisted.completed_order = order;
      write_state(*options.run_dir, persisted);
      say("completed order " + std::to_string(order));
    }
    if (options.stop_after_order && *options.stop_after_order == order && order < config.max_order) {
      say("stopping after order " + std::to_string(order));
      return state;
    }
  }

  say("evaluating " + std::to_string(state.models.size()) + " models");
  for (const DetectorModel& m : state.models) {
    auto rows = evaluate_model(m, data.eval, state.validation_patches, config, run_id);
    state.ledger.insert(state.ledger.end(), rows.begin(), rows.end());
  }
  if (options.run_dir) {
    write_text_file(*options.run_dir / "ledger.json", ledger_json(state.ledger));
    write_text_file(*options.run_dir / "ledger.csv", ledger_csv(state.ledger));
    say("game complete");
    write_manifest(*options.run_dir, run_id, hash);
  }
  return state;
}

std::vector<DetectorModel> train_zoo(const GameConfig& config, const Dataset& detector_train,
                                     std::size_t size, const ProgressFn& progress) {
  std::vector<DetectorModel> zoo(size);
  parallel_for(size, [&](std::size_t i) {
    DetectorTrainConfig dc = config.detector;
    const auto variant = static_cast<std::uint32_t>(i + 1);
    dc.arch = arch_variant(variant, static_cast<std::uint32_t>(config.data.image_size));
    zoo[i] = train_detector(dc, detector_train, {}, 0.0,
                            derive_seed(config.seed, {0x2005ULL, variant}));
    zoo[i].order = 0;
  });
  if (progress) progress("trained zoo of " + std::to_string(size) + " detectors");
  return zoo;
}

TransferResult run_transfer(const std::map<int, std::vector<Patch>>& validation,
                            std::span<const DetectorModel> zoo, const Dataset& eval,
                            const GameConfig& config, const std::string& run_id) {
  if (zoo.empty()) throw std::invalid_argument("run_transfer: empty zoo");
  const double factor = config.eval.resize_factors.front();
  const ApplicationProtocol protocol =
      ApplicationProtocol::eval(factor, config.eval.p_box, config.eval.p_hal);
  TransferResult result;
  std::map<int, std::vector<double>> order_ap;  // per order, per member
  for (const DetectorModel& model : zoo) {
    result.variants.push_back(model.arch.variant_id);
    auto row = [&](const PatchSource& source, int patch_order, int patch_index) {
      LedgerRow r;
      r.run_id = run_id + ":zoo-" + std::to_string(model.arch.variant_id);
      r.model_order = 0;
      r.patch_order = patch_order;
      r.patch_index = patch_index;
      r.source = source.describe();
      r.resize_factor = factor;
      r.result = evaluate(model, eval, source, protocol, config.eval.seed);
      result.ledger.push_back(r);
      return r.result.ap;
    };
    result.clean_ap.push_back(row(PatchSource::clean(), 0, 0));
    std::vector<double> gray;
    for (int level = 0; level <= 10; ++level) gray.push_back(row(PatchSource::grayscale(level), 0, level));
    result.gray_ap.push_back(mean_of(gray));
    for (const auto& [order, patches] : validation) {
      std::vector<double> aps;
      for (const Patch& p : patches) aps.push_back(row(PatchSource::patch(p.pixels), order, p.index));
      order_ap[order].push_back(mean_of(aps));
    }
  }
  result.clean_mean = mean_of(result.clean_ap);
  result.clean_std = population_std(result.clean_ap);
  result.gray_mean = mean_of(result.gray_ap);
  result.gray_std = population_std(result.gray_ap);
  for (const auto& [order, member] : order_ap) {
    TransferOrder t;
    t.patch_order = order;
    t.member_ap = member;
    t.mean_ap = mean_of(member);
    t.std_ap = population_std(member);
    t.mean_delta_ap = result.gray_mean - t.mean_ap;
    result.orders.push_back(std::move(t));
  }
  return result;
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
