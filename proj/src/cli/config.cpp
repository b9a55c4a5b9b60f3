#include "catmouse/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace catmouse::inline CATMOUSE_PRECISION {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct RangeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double parse_double(const std::string& text) {
  double v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw std::invalid_argument("expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& text) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + text + "'");
}

void check(bool ok, const std::string& name, const std::string& what) {
  if (!ok) throw RangeError(name + " out of range: " + what);
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const GameConfig&)> get;
  std::function<void(GameConfig&, const std::string&)> set;
};

template <typename T>
Field real_field(std::string section, std::string key, T GameConfig::*group, double T::*member,
                 double lo, double hi, std::string name = {}) {
  if (name.empty()) name = key;
  return {section, key,
          [=](const GameConfig& c) { return format_double((c.*group).*member); },
          [=](GameConfig& c, const std::string& v) {
            const double x = parse_double(v);
            check(x >= lo && x <= hi, name,
                  "must lie in [" + format_double(lo) + ", " + format_double(hi) + "]");
            (c.*group).*member = x;
          }};
}

template <typename T, typename I>
Field int_field(std::string section, std::string key, T GameConfig::*group, I T::*member,
                std::uint64_t lo, std::uint64_t hi) {
  return {section, key,
          [=](const GameConfig& c) { return std::to_string((c.*group).*member); },
          [=](GameConfig& c, const std::string& v) {
            const std::uint64_t x = parse_u64(v);
            check(x >= lo && x <= hi, key,
                  "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
            (c.*group).*member = static_cast<I>(x);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    // [game]
    f.push_back({"game", "regime", [](const GameConfig& c) { return c.regime.tag(); },
                 [](GameConfig& c, const std::string& v) {
                   c.regime = Regime::parse(v);
                   check(c.regime.k >= 1 && c.regime.k <= 64, "regime", "k must lie in [1, 64]");
                 }});
    f.push_back({"game", "max_order", [](const GameConfig& c) { return std::to_string(c.max_order); },
                 [](GameConfig& c, const std::string& v) {
                   const auto x = parse_u64(v);
                   check(x >= 1 && x <= 32, "max_order", "must lie in [1, 32]");
                   c.max_order = static_cast<int>(x);
                 }});
    f.push_back({"game", "validation_count",
                 [](const GameConfig& c) { return std::to_string(c.validation_count); },
                 [](GameConfig& c, const std::string& v) {
                   const auto x = parse_u64(v);
                   check(x >= 1 && x <= 64, "validation_count", "must lie in [1, 64]");
                   c.validation_count = static_cast<int>(x);
                 }});
    f.push_back({"game", "pi", [](const GameConfig& c) { return format_double(c.pi); },
                 [](GameConfig& c, const std::string& v) {
                   const double x = parse_double(v);
                   check(x >= 0 && x <= 1, "pi", "probability must lie in [0, 1]");
                   c.pi = x;
                 }});
    f.push_back({"game", "seed", [](const GameConfig& c) { return std::to_string(c.seed); },
                 [](GameConfig& c, const std::string& v) { c.seed = parse_u64(v); }});
    f.push_back({"game", "zoo_size", [](const GameConfig& c) { return std::to_string(c.zoo_size); },
                 [](GameConfig& c, const std::string& v) {
                   const auto x = parse_u64(v);
                   check(x >= 1 && x <= 5, "zoo_size", "must lie in [1, 5]");
                   c.zoo_size = x;
                 }});
    // [patch]
    f.push_back(int_field("patch", "size", &GameConfig::patch, &PatchOptConfig::size, 4, 1024));
    f.push_back(int_field("patch", "epochs", &GameConfig::patch, &PatchOptConfig::epochs, 1, 100000));
    f.push_back(real_field("patch", "lr", &GameConfig::patch, &PatchOptConfig::lr, 0, 10));
    f.push_back(int_field("patch", "decay_every", &GameConfig::patch, &PatchOptConfig::decay_every, 1, 100000));
    f.push_back(real_field("patch", "decay_factor", &GameConfig::patch, &PatchOptConfig::decay_factor, 1, 1e6));
    f.push_back(int_field("patch", "batch_size", &GameConfig::patch, &PatchOptConfig::batch_size, 1, 4096));
    f.push_back({"patch", "lambda_obj",
                 [](const GameConfig& c) { return format_double(c.patch.weights.objectness); },
                 [](GameConfig& c, const std::string& v) {
                   const double x = parse_double(v);
                   check(x > 0 && x <= 1e6, "lambda_obj", "must be positive");
                   c.patch.weights.objectness = x;
                 }});
    f.push_back({"patch", "lambda_smt",
                 [](const GameConfig& c) { return format_double(c.patch.weights.smoothness); },
                 [](GameConfig& c, const std::string& v) {
                   const double x = parse_double(v);
                   check(x >= 0 && x <= 1e6, "lambda_smt", "must be non-negative");
                   c.patch.weights.smoothness = x;
                 }});
    f.push_back({"patch", "lambda_val",
                 [](const GameConfig& c) { return format_double(c.patch.weights.validity); },
                 [](GameConfig& c, const std::string& v) {
                   const double x = parse_double(v);
                   check(x >= 0 && x <= 1e6, "lambda_val", "must be non-negative");
                   c.patch.weights.validity = x;
                 }});
    f.push_back(real_field("patch", "resize_min", &GameConfig::patch, &PatchOptConfig::resize_min, 0.01, 1));
    f.push_back(real_field("patch", "resize_max", &GameConfig::patch, &PatchOptConfig::resize_max, 0.01, 1));
    auto aug = [](std::string key, double AugmentationConfig::*member, double lo, double hi) {
      return Field{"patch", key,
                   [=](const GameConfig& c) { return format_double(c.patch.augmentation.*member); },
                   [=](GameConfig& c, const std::string& v) {
                     const double x = parse_double(v);
                     check(x >= lo && x <= hi, key,
                           "must lie in [" + format_double(lo) + ", " + format_double(hi) + "]");
                     c.patch.augmentation.*member = x;
                   }};
    };
    f.push_back(aug("max_rotation_deg", &AugmentationConfig::max_rotation_deg, 0, 180));
    f.push_back(aug("brightness", &AugmentationConfig::brightness, 0, 1));
    f.push_back(aug("contrast_min", &AugmentationConfig::contrast_min, 0.01, 10));
    f.push_back(aug("contrast_max", &AugmentationConfig::contrast_max, 0.01, 10));
    f.push_back(aug("perspective", &AugmentationConfig::perspective, 0, 0.45));
    // [detector]
    f.push_back({"detector", "arch_variant",
                 [](const GameConfig& c) { return std::to_string(c.detector.arch.variant_id); },
                 [](GameConfig& c, const std::string& v) {
                   const auto x = parse_u64(v);
                   check(x <= 5, "arch_variant", "must lie in [0, 5]");
                   c.detector.arch.variant_id = static_cast<std::uint32_t>(x);
                 }});
    f.push_back(int_field("detector", "epochs", &GameConfig::detector, &DetectorTrainConfig::epochs, 1, 100000));
    f.push_back(int_field("detector", "batch_size", &GameConfig::detector, &DetectorTrainConfig::batch_size, 1, 4096));
    f.push_back(real_field("detector", "lr", &GameConfig::detector, &DetectorTrainConfig::lr, 0, 10));
    f.push_back(real_field("detector", "weight_decay", &GameConfig::detector, &DetectorTrainConfig::weight_decay, 0, 10));
    f.push_back(real_field("detector", "adv_resize_min", &GameConfig::detector, &DetectorTrainConfig::adv_resize_min, 0.01, 1));
    f.push_back(real_field("detector", "adv_resize_max", &GameConfig::detector, &DetectorTrainConfig::adv_resize_max, 0.01, 1));
    f.push_back(real_field("detector", "box_loss_weight", &GameConfig::detector, &DetectorTrainConfig::box_loss_weight, 0, 1e3));
    f.push_back({"detector", "horizontal_flip",
                 [](const GameConfig& c) { return std::string(c.detector.horizontal_flip ? "true" : "false"); },
                 [](GameConfig& c, const std::string& v) { c.detector.horizontal_flip = parse_bool(v); }});
    f.push_back(real_field("detector", "erase_probability", &GameConfig::detector, &DetectorTrainConfig::erase_probability, 0, 1));
    f.push_back(real_field("detector", "erase_min", &GameConfig::detector, &DetectorTrainConfig::erase_min, 0, 1));
    f.push_back(real_field("detector", "erase_max", &GameConfig::detector, &DetectorTrainConfig::erase_max, 0, 1));
    // [data]
    f.push_back(int_field("data", "image_size", &GameConfig::data, &DataConfig::image_size, 32, 1024));
    f.push_back(int_field("data", "seed", &GameConfig::data, &DataConfig::seed, 0, ~std::uint64_t{0}));
    f.push_back(int_field("data", "detector_train_count", &GameConfig::data, &DataConfig::detector_train_count, 1, 1000000));
    f.push_back(int_field("data", "patch_train_count", &GameConfig::data, &DataConfig::patch_train_count, 1, 1000000));
    f.push_back(int_field("data", "eval_count", &GameConfig::data, &DataConfig::eval_count, 1, 1000000));
    // [eval]
    f.push_back({"eval", "resize_factors",
                 [](const GameConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.eval.resize_factors.size(); ++i) {
                     if (i) s += ", ";
                     s += format_double(c.eval.resize_factors[i]);
                   }
                   return s;
                 },
                 [](GameConfig& c, const std::string& v) {
                   std::vector<double> out;
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) {
                     const double x = parse_double(trim(item));
                     check(x > 0 && x <= 1, "resize_factors", "each factor must lie in (0, 1]");
                     out.push_back(x);
                   }
                   check(!out.empty(), "resize_factors", "at least one factor is required");
                   c.eval.resize_factors = out;
                 }});
    f.push_back(real_field("eval", "p_box", &GameConfig::eval, &EvalConfig::p_box, 0, 1));
    f.push_back(real_field("eval", "p_hal", &GameConfig::eval, &EvalConfig::p_hal, 0, 1));
    f.push_back(int_field("eval", "seed", &GameConfig::eval, &EvalConfig::seed, 0, ~std::uint64_t{0}));
    return f;
  }();
  return table;
}

}  // namespace

ConfigError::ConfigError(const std::string& origin, int line, const std::string& message)
    : std::runtime_error(origin + ":" + std::to_string(line) + ": " + message), line_(line) {}

GameConfig parse_config(const std::string& text, const GameConfig& base, const std::string& origin) {
  GameConfig config = base;
  std::string section = "game";
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  bool any_key = false;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin, line_no, "malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section != "game" && section != "patch" && section != "detector" && section != "data" &&
          section != "eval") {
        throw ConfigError(origin, line_no, "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin, line_no, "expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(origin, line_no, "expected 'key = value'");
    if (section == "game" && key == "preset") {
      if (any_key) throw ConfigError(origin, line_no, "preset must precede all other keys");
      try {
        config = preset_by_name(value);
      } catch (const std::exception& e) {
        throw ConfigError(origin, line_no, e.what());
      }
      any_key = true;
      continue;
    }
    const Field* field = nullptr;
    for (const Field& f : fields()) {
      if (f.section == section && f.key == key) field = &f;
    }
    if (!field) throw ConfigError(origin, line_no, "unknown key '" + key + "' in [" + section + "]");
    try {
      field->set(config, value);
    } catch (const std::exception& e) {
      throw ConfigError(origin, line_no, e.what());
    }
    any_key = true;
  }
  config.detector.arch =
      arch_variant(config.detector.arch.variant_id, static_cast<std::uint32_t>(config.data.image_size));
  try {
    config.validate();
  } catch (const std::exception& e) {
    throw ConfigError(origin, line_no, e.what());
  }
  return config;
}

GameConfig load_config(const std::filesystem::path& path, const GameConfig& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base, path.string());
}

std::string serialize_config(const GameConfig& config) {
  std::ostringstream os;
  os << "preset = " << config.preset << '\n';
  std::string section = "game";
  for (const Field& f : fields()) {
    if (f.section != section) {
      section = f.section;
      os << "\n[" << section << "]\n";
    }
    os << f.key << " = " << f.get(config) << '\n';
  }
  return os.str();
}

bool same_config(const GameConfig& a, const GameConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const GameConfig& config) { return fnv1a(serialize_config(config)); }

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
