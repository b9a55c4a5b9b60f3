#include "catmouse/cli.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <regex>

#include <CLI11.hpp>
#include <json.hpp>

#include "catmouse/config.hpp"
#include "catmouse/evaluator.hpp"
#include "catmouse/game.hpp"
#include "catmouse/report.hpp"
#include "catmouse/rng.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "catmouse-out";
  std::string preset = "desk";
};

GameConfig resolve_config(const Globals& g) {
  GameConfig base = preset_by_name(g.preset);
  GameConfig c = g.config_path.empty() ? base : load_config(g.config_path, base);
  if (g.seed) c.seed = *g.seed;
  return c;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw std::runtime_error(what + " not found: " + path);
}

std::vector<Patch> load_patches(const std::vector<std::string>& paths) {
  std::vector<Patch> pool;
  for (const auto& p : paths) {
    require_file(p, "patch file");
    pool.push_back(load_patch(p));
  }
  return pool;
}

std::map<int, std::vector<Patch>> load_validation_patches(const fs::path& run_dir) {
  std::map<int, std::vector<Patch>> out;
  const std::regex order_re("order_([0-9]+)"), val_re("val_([0-9]+)\\.cmpt");
  for (const auto& dir : fs::directory_iterator(run_dir)) {
    std::smatch m;
    const std::string name = dir.path().filename().string();
    if (!dir.is_directory() || !std::regex_match(name, m, order_re)) continue;
    const int order = std::stoi(m[1]);
    std::map<int, Patch> by_index;
    for (const auto& f : fs::directory_iterator(dir.path())) {
      std::smatch fm;
      const std::string fname = f.path().filename().string();
      if (std::regex_match(fname, fm, val_re)) by_index[std::stoi(fm[1])] = load_patch(f.path());
    }
    for (auto& [i, p] : by_index) out[order].push_back(std::move(p));
  }
  return out;
}

nlohmann::json ap_json(const APResult& r) {
  return {{"ap", r.ap},
          {"per_threshold", r.per_threshold},
          {"detections", r.detection_count},
          {"ground_truths", r.ground_truth_count},
          {"protocol", r.protocol},
          {"eval_seed", r.eval_seed}};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"catmouse: adversarial patch cat-and-mouse laboratory", "catmouse"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Configuration file (key = value with sections)");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--preset", g.preset, "Preset defaults")
      ->check(CLI::IsMember({"desk", "full"}))
      ->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "Render synthetic datasets as PNG + annotations.json");
  std::string family = "all";
  std::optional<std::size_t> count;
  gen->add_option("--family", family, "detector-train, patch-train, eval or all")
      ->check(CLI::IsMember({"detector-train", "patch-train", "eval", "all"}));
  gen->add_option("--count", count, "Scenes per family (default: configured dataset size)");

  auto* train = app.add_subcommand("train-detector", "Train a detector, optionally with a patch pool");
  double pi = 0.0;
  std::vector<std::string> pool_paths;
  std::uint32_t variant = 0;
  int order = 0;
  train->add_option("--pi", pi, "Per-box patch probability")->check(CLI::Range(0.0, 1.0));
  train->add_option("--pool", pool_paths, "Patch files for adversarial training");
  train->add_option("--variant", variant, "Architecture variant id")->check(CLI::Range(0, 5));
  train->add_option("--order", order, "Order tag of the trained model")->check(CLI::NonNegativeNumber);

  auto* optimize = app.add_subcommand("optimize-patch", "Optimize a patch against a detector");
  std::string model_path;
  int patch_index = 0;
  std::string role = "train";
  optimize->add_option("--model", model_path, "Detector checkpoint")->required();
  optimize->add_option("--index", patch_index, "Patch index within its order")->check(CLI::NonNegativeNumber);
  optimize->add_option("--role", role, "train or validation")->check(CLI::IsMember({"train", "validation"}));

  auto* harden_cmd = app.add_subcommand("harden", "Adversarially train the next-order detector");
  std::vector<std::string> harden_pool;
  int harden_order = 1;
  harden_cmd->add_option("--pool", harden_pool, "Patch files of the training pool")->required();
  harden_cmd->add_option("--order", harden_order, "Order of the hardened model")->check(CLI::PositiveNumber);

  auto* game = app.add_subcommand("game", "Play the cat-and-mouse game into --out");
  std::optional<int> stop_after;
  game->add_option("--stop-after-order", stop_after, "Stop after persisting this order")
      ->check(CLI::PositiveNumber);

  auto* transfer = app.add_subcommand("transfer", "Evaluate a game's validation patches on a detector zoo");
  std::string transfer_dir;
  transfer->add_option("run", transfer_dir, "Game run directory (default: --out)");

  auto* eval_cmd = app.add_subcommand("evaluate", "AP@[.5:.95] of a detector on the eval family");
  std::string eval_model, eval_patch;
  std::optional<int> gray;
  double resize = 0.5;
  eval_cmd->add_option("--model", eval_model, "Detector checkpoint")->required();
  auto* patch_opt = eval_cmd->add_option("--patch", eval_patch, "Patch file");
  eval_cmd->add_option("--gray", gray, "Grayscale level 0..10")->check(CLI::Range(0, 10))->excludes(patch_opt);
  eval_cmd->add_option("--resize", resize, "Resize factor of the eval protocol")->check(CLI::Range(0.01, 1.0));

  auto* report = app.add_subcommand("report", "Render ledger.csv, heatmap.svg and transfer.svg");
  std::string report_dir;
  report->add_option("run", report_dir, "Run directory (default: --out)");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  auto progress = [&err](const std::string& msg) { err << msg << std::endl; };
  try {
    const GameConfig config = resolve_config(g);
    const fs::path out_dir = g.out;

    if (*gen) {
      const GameData data = [&] {
        GameConfig c = config;
        if (count) {
          c.data.detector_train_count = c.data.patch_train_count = c.data.eval_count = *count;
        }
        return make_game_data(c);
      }();
      for (const auto* d : {&data.detector_train, &data.patch_train, &data.eval}) {
        const std::string name = to_string(d->spec.family);
        if (family != "all" && family != name) continue;
        export_dataset(*d, out_dir / name);
        progress("wrote " + std::to_string(d->size()) + " scenes to " + (out_dir / name).string());
      }
    } else if (*train) {
      const std::vector<Patch> pool = load_patches(pool_paths);
      const GameData data = make_game_data(config);
      DetectorTrainConfig dc = config.detector;
      dc.arch = arch_variant(variant, static_cast<std::uint32_t>(config.data.image_size));
      DetectorModel m = train_detector(dc, data.detector_train, pool, pi,
                                       derive_seed(config.seed, {0x30de1ULL, std::uint64_t(order)}),
                                       nullptr, progress);
      m.order = order;
      m.regime = config.regime;
      fs::create_directories(out_dir);
      save_detector(m, out_dir / "model.cmld");
      progress("wrote " + (out_dir / "model.cmld").string());
    } else if (*optimize) {
      require_file(model_path, "detector checkpoint");
      DetectorModel m = load_detector(model_path);
      m.set_trainable(false);
      const GameData data = make_game_data(config);
      const PatchRole r = role == "train" ? PatchRole::Train : PatchRole::Validation;
      Patch p = optimize_patch(m, data.patch_train, config.patch,
                               patch_seed(config.seed, m.order + 1, patch_index, r), nullptr, progress);
      p.index = patch_index;
      p.role = r;
      fs::create_directories(out_dir);
      save_patch(p, out_dir / "patch.cmpt");
      write_png(out_dir / "patch.png", p.pixels);
      progress("wrote " + (out_dir / "patch.cmpt").string());
    } else if (*harden_cmd) {
      const std::vector<Patch> pool = load_patches(harden_pool);
      const GameData data = make_game_data(config);
      DetectorModel m = harden(config.detector, data.detector_train, pool, config.pi, harden_order,
                               config.regime,
                               derive_seed(config.seed, {0x30de1ULL, std::uint64_t(harden_order)}),
                               progress);
      fs::create_directories(out_dir);
      save_detector(m, out_dir / "model.cmld");
      progress("wrote " + (out_dir / "model.cmld").string());
    } else if (*game) {
      GameOptions options;
      options.run_dir = out_dir;
      options.stop_after_order = stop_after;
      options.progress = progress;
      const GameState state = run_game(config, options);
      if (!state.ledger.empty()) {
        write_report(out_dir);
        const RunManifest m = read_manifest(out_dir);
        write_manifest(out_dir, m.run_id, m.config_hash);
      }
      out << "run directory " << out_dir.string() << " (" << state.ledger.size() << " ledger rows)\n";
    } else if (*transfer) {
      const fs::path run = transfer_dir.empty() ? out_dir : fs::path(transfer_dir);
      if (!fs::is_directory(run)) throw std::runtime_error("run directory not found: " + run.string());
      const auto validation = load_validation_patches(run);
      if (validation.empty()) {
        throw std::runtime_error("no validation patches under " + run.string());
      }
      const GameData data = make_game_data(config);
      const auto zoo = train_zoo(config, data.detector_train, config.zoo_size, progress);
      for (const DetectorModel& m : zoo) {
        save_detector(m, run / "zoo" / ("variant_" + std::to_string(m.arch.variant_id) + ".cmld"));
      }
      const std::string run_id = hex64(config_hash(config));
      const TransferResult result = run_transfer(validation, zoo, data.eval, config, run_id);
      write_text_file(run / "transfer.json", transfer_json(result));
      write_text_file(run / "transfer_ledger.csv", ledger_csv(result.ledger));
      log_event(run, "transfer over " + std::to_string(zoo.size()) + " zoo detectors");
      write_manifest(run, run_id, run_id);
      for (const TransferOrder& o : result.orders) {
        out << "patch order " << o.patch_order << ": mean AP " << format_number(o.mean_ap) << " std "
            << format_number(o.std_ap) << " mean delta AP " << format_number(o.mean_delta_ap) << '\n';
      }
    } else if (*eval_cmd) {
      require_file(eval_model, "detector checkpoint");
      DetectorModel m = load_detector(eval_model);
      PatchSource source = PatchSource::clean();
      if (!eval_patch.empty()) {
        require_file(eval_patch, "patch file");
        source = PatchSource::patch(load_patch(eval_patch).pixels);
      } else if (gray) {
        source = PatchSource::grayscale(*gray);
      }
      const GameData data = make_game_data(config);
      const APResult r = evaluate(m, data.eval, source,
                                  ApplicationProtocol::eval(resize, config.eval.p_box, config.eval.p_hal),
                                  config.eval.seed);
      nlohmann::json j = ap_json(r);
      j["source"] = source.describe();
      j["model"] = eval_model;
      out << j.dump(2) << '\n';
    } else if (*report) {
      const fs::path run = report_dir.empty() ? out_dir : fs::path(report_dir);
      if (!fs::is_directory(run)) throw std::runtime_error("run directory not found: " + run.string());
      for (const auto& p : write_report(run)) out << p.string() << '\n';
      if (fs::exists(run / "manifest.json")) {
        const RunManifest m = read_manifest(run);
        write_manifest(run, m.run_id, m.config_hash);
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
