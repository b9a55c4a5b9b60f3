#include "catmouse/report.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "catmouse/config.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_number(double value) {
  if (value == 0) return "0";  // also folds -0
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, r.ptr);
}

namespace {

std::string fixed(double value, int digits) {
  if (std::abs(value) < 0.5 * std::pow(10.0, -digits)) value = 0;  // no "-0.000"
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed, digits);
  return std::string(buf, r.ptr);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

json row_to_json(const LedgerRow& r) {
  json j;
  j["run_id"] = r.run_id;
  j["model_order"] = r.model_order;
  j["patch_order"] = r.patch_order;
  j["patch_index"] = r.patch_index;
  j["source"] = r.source;
  j["resize_factor"] = r.resize_factor;
  j["ap"] = r.result.ap;
  j["per_threshold"] = r.result.per_threshold;
  j["detections"] = r.result.detection_count;
  j["ground_truths"] = r.result.ground_truth_count;
  j["protocol"] = r.result.protocol;
  j["eval_seed"] = r.result.eval_seed;
  return j;
}

LedgerRow row_from_json(const json& j) {
  LedgerRow r;
  r.run_id = j.at("run_id").get<std::string>();
  r.model_order = j.at("model_order").get<int>();
  r.patch_order = j.at("patch_order").get<int>();
  r.patch_index = j.at("patch_index").get<int>();
  r.source = j.at("source").get<std::string>();
  r.resize_factor = j.at("resize_factor").get<double>();
  r.result.ap = j.at("ap").get<double>();
  r.result.per_threshold = j.at("per_threshold").get<std::array<double, 10>>();
  r.result.detection_count = j.at("detections").get<std::size_t>();
  r.result.ground_truth_count = j.at("ground_truths").get<std::size_t>();
  r.result.protocol = j.at("protocol").get<std::string>();
  r.result.eval_seed = j.at("eval_seed").get<std::uint64_t>();
  return r;
}

}  // namespace

std::string ledger_csv(std::span<const LedgerRow> ledger) {
  std::ostringstream os;
  os << "run_id,model_order,patch_order,patch_index,source,resize_factor,ap";
  for (double t : iou_thresholds()) os << ",ap" << static_cast<int>(std::lround(t * 100));
  os << '\n';
  for (const LedgerRow& r : ledger) {
    os << r.run_id << ',' << r.model_order << ',' << r.patch_order << ',' << r.patch_index << ','
       << r.source << ',' << format_number(r.resize_factor) << ',' << format_number(r.result.ap);
    for (double v : r.result.per_threshold) os << ',' << format_number(v);
    os << '\n';
  }
  return os.str();
}

std::string ledger_json(std::span<const LedgerRow> ledger) {
  json j = json::array();
  for (const LedgerRow& r : ledger) j.push_back(row_to_json(r));
  return j.dump(1) + "\n";
}

std::vector<LedgerRow> parse_ledger_json(const std::string& text) {
  std::vector<LedgerRow> rows;
  for (const json& j : json::parse(text)) rows.push_back(row_from_json(j));
  return rows;
}

std::string transfer_json(const TransferResult& r) {
  json j;
  j["variants"] = r.variants;
  j["clean_ap"] = r.clean_ap;
  j["gray_ap"] = r.gray_ap;
  j["clean_mean"] = r.clean_mean;
  j["clean_std"] = r.clean_std;
  j["gray_mean"] = r.gray_mean;
  j["gray_std"] = r.gray_std;
  j["orders"] = json::array();
  for (const TransferOrder& o : r.orders) {
    j["orders"].push_back({{"patch_order", o.patch_order},
                           {"mean_ap", o.mean_ap},
                           {"std_ap", o.std_ap},
                           {"mean_delta_ap", o.mean_delta_ap},
                           {"member_ap", o.member_ap}});
  }
  j["ledger"] = json::array();
  for (const LedgerRow& row : r.ledger) j["ledger"].push_back(row_to_json(row));
  return j.dump(1) + "\n";
}

TransferResult parse_transfer_json(const std::string& text) {
  const json j = json::parse(text);
  TransferResult r;
  r.variants = j.at("variants").get<std::vector<std::uint32_t>>();
  r.clean_ap = j.at("clean_ap").get<std::vector<double>>();
  r.gray_ap = j.at("gray_ap").get<std::vector<double>>();
  r.clean_mean = j.at("clean_mean").get<double>();
  r.clean_std = j.at("clean_std").get<double>();
  r.gray_mean = j.at("gray_mean").get<double>();
  r.gray_std = j.at("gray_std").get<double>();
  for (const json& o : j.at("orders")) {
    TransferOrder t;
    t.patch_order = o.at("patch_order").get<int>();
    t.mean_ap = o.at("mean_ap").get<double>();
    t.std_ap = o.at("std_ap").get<double>();
    t.mean_delta_ap = o.at("mean_delta_ap").get<double>();
    t.member_ap = o.at("member_ap").get<std::vector<double>>();
    r.orders.push_back(std::move(t));
  }
  for (const json& row : j.at("ledger")) r.ledger.push_back(row_from_json(row));
  return r;
}

std::string heat_color(double delta_ap, double max_abs) {
  // Linear blend from a pale to a dark red; every channel decreases with t.
  const double t = max_abs > 0 ? std::clamp(0.5 + 0.5 * delta_ap / max_abs, 0.0, 1.0) : 0.5;
  const int lo[3] = {255, 245, 240}, hi[3] = {103, 0, 13};
  char buf[8];
  int c[3];
  for (int i = 0; i < 3; ++i) c[i] = static_cast<int>(std::lround(lo[i] + (hi[i] - lo[i]) * t));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

std::string heatmap_svg(const HeatmapMatrix& m) {
  const int cw = 84, ch = 40, left = 130, top = 70, gap = 14;
  const int rows = static_cast<int>(m.rows()), cols = static_cast<int>(m.cols());
  const int width = left + (cols + 1) * cw + gap + 20;
  const int height = top + (rows + 1) * ch + gap + 30;
  double max_abs = 0;
  for (const auto& row : m.delta_ap) {
    for (double v : row) max_abs = std::max(max_abs, std::abs(v));
  }
  std::ostringstream os;
  auto cell = [&](const char* cls, int x, int y, double v) {
    const std::string fill = heat_color(v, max_abs);
    const double t = max_abs > 0 ? 0.5 + 0.5 * v / max_abs : 0.5;
    os << "<rect class=\"" << cls << "\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cw
       << "\" height=\"" << ch << "\" fill=\"" << fill << "\" stroke=\"#ffffff\"/>\n";
    os << "<text x=\"" << x + cw / 2 << "\" y=\"" << y + ch / 2 + 5
       << "\" text-anchor=\"middle\" font-size=\"14\" fill=\"" << (t > 0.6 ? "#ffffff" : "#000000")
       << "\">" << fixed(v, 3) << "</text>\n";
  };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\">\n";
  os << "<text x=\"" << left << "\" y=\"24\" font-size=\"16\">Delta AP = AP(grayscale) - AP(patch), mean over "
     << m.validation_count << " validation patches</text>\n";
  os << "<text x=\"" << left << "\" y=\"" << top - 28 << "\" font-size=\"13\">patch order</text>\n";
  for (int c = 0; c < cols; ++c) {
    os << "<text x=\"" << left + c * cw + cw / 2 << "\" y=\"" << top - 8
       << "\" text-anchor=\"middle\" font-size=\"13\">" << c + 1 << "</text>\n";
  }
  os << "<text x=\"" << left + cols * cw + gap + cw / 2 << "\" y=\"" << top - 8
     << "\" text-anchor=\"middle\" font-size=\"13\">&#956;</text>\n";
  for (int r = 0; r < rows; ++r) {
    os << "<text x=\"" << left - 10 << "\" y=\"" << top + r * ch + ch / 2 + 5
       << "\" text-anchor=\"end\" font-size=\"13\">model order " << r << "</text>\n";
  }
  os << "<text x=\"" << left - 10 << "\" y=\"" << top + rows * ch + gap + ch / 2 + 5
     << "\" text-anchor=\"end\" font-size=\"13\">&#956;</text>\n";
  os << "<g class=\"cells\">\n";
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) cell("cell", left + c * cw, top + r * ch, m.delta_ap[r][c]);
  }
  os << "</g>\n<g class=\"mu-col\">\n";
  for (int r = 0; r < rows; ++r) cell("mu", left + cols * cw + gap, top + r * ch, m.row_mean[r]);
  os << "</g>\n<g class=\"mu-row\">\n";
  for (int c = 0; c < cols; ++c) cell("mu", left + c * cw, top + rows * ch + gap, m.col_mean[c]);
  os << "</g>\n</svg>\n";
  return os.str();
}

std::string transfer_svg(const TransferResult* result) {
  std::ostringstream os;
  if (!result || result->orders.empty()) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"420\" height=\"80\" "
          "font-family=\"sans-serif\">\n<text x=\"20\" y=\"45\" font-size=\"15\">"
          "no transfer results</text>\n</svg>\n";
    return os.str();
  }
  const TransferResult& r = *result;
  const int bw = 60, spacing = 30, left = 70, top = 50, plot_h = 260;
  const int n = static_cast<int>(r.orders.size());
  const int plot_w = n * (bw + spacing) + spacing;
  const int width = left + plot_w + 180, height = top + plot_h + 60;
  auto y_of = [&](double ap) {
    return top + plot_h - static_cast<int>(std::lround(std::clamp(ap, 0.0, 1.0) * plot_h));
  };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\">\n";
  os << "<text x=\"" << left << "\" y=\"24\" font-size=\"16\">AP over a zoo of " << r.variants.size()
     << " order-0 detectors (mean, std)</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
     << "\" stroke=\"#000000\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
     << top + plot_h << "\" stroke=\"#000000\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick / 4.0;
    os << "<text x=\"" << left - 8 << "\" y=\"" << y_of(v) + 4
       << "\" text-anchor=\"end\" font-size=\"12\">" << fixed(v, 2) << "</text>\n";
  }
  os << "<g class=\"bars\">\n";
  for (int i = 0; i < n; ++i) {
    const TransferOrder& o = r.orders[i];
    const int x = left + spacing + i * (bw + spacing);
    const int y = y_of(o.mean_ap);
    os << "<rect class=\"bar\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << bw << "\" height=\""
       << top + plot_h - y << "\" fill=\"#4a7ab5\"/>\n";
    const int cx = x + bw / 2;
    const int y_hi = y_of(o.mean_ap + o.std_ap), y_lo = y_of(o.mean_ap - o.std_ap);
    os << "<g class=\"whisker\"><line x1=\"" << cx << "\" y1=\"" << y_hi << "\" x2=\"" << cx
       << "\" y2=\"" << y_lo << "\" stroke=\"#000000\"/><line x1=\"" << cx - 8 << "\" y1=\"" << y_hi
       << "\" x2=\"" << cx + 8 << "\" y2=\"" << y_hi << "\" stroke=\"#000000\"/><line x1=\"" << cx - 8
       << "\" y1=\"" << y_lo << "\" x2=\"" << cx + 8 << "\" y2=\"" << y_lo
       << "\" stroke=\"#000000\"/></g>\n";
    os << "<text x=\"" << cx << "\" y=\"" << top + plot_h + 18
       << "\" text-anchor=\"middle\" font-size=\"12\">order " << o.patch_order << "</text>\n";
    os << "<text x=\"" << cx << "\" y=\"" << top + plot_h + 34
       << "\" text-anchor=\"middle\" font-size=\"11\">" << fixed(o.mean_ap, 3) << "</text>\n";
  }
  os << "</g>\n";
  auto ref = [&](const char* cls, double v, const char* color, const std::string& label) {
    const int y = y_of(v);
    os << "<g class=\"" << cls << "\"><line x1=\"" << left << "\" y1=\"" << y << "\" x2=\""
       << left + plot_w << "\" y2=\"" << y << "\" stroke=\"" << color
       << "\" stroke-dasharray=\"6,4\"/><text x=\"" << left + plot_w + 6 << "\" y=\"" << y + 4
       << "\" font-size=\"12\" fill=\"" << color << "\">" << xml_escape(label) << "</text></g>\n";
  };
  ref("ref-clean", r.clean_mean, "#2e7d32", "clean " + fixed(r.clean_mean, 3));
  ref("ref-gray", r.gray_mean, "#616161", "grayscale " + fixed(r.gray_mean, 3));
  os << "</svg>\n";
  return os.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string file_hash(const fs::path& path) { return hex64(fnv1a(read_text_file(path))); }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest write_manifest(const fs::path& run_dir, const std::string& run_id,
                           const std::string& config_hash) {
  RunManifest m;
  m.run_id = run_id;
  m.config_hash = config_hash;
  m.updated = utc_timestamp();
  m.created = m.updated;
  if (fs::exists(run_dir / "manifest.json")) {
    try {
      m.created = read_manifest(run_dir).created;
    } catch (const std::exception&) {
    }
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    m.artifacts.push_back(
        {fs::relative(f, run_dir).generic_string(), file_hash(f), fs::file_size(f)});
  }
  json j;
  j["run_id"] = m.run_id;
  j["config_hash"] = m.config_hash;
  j["tool_version"] = m.tool_version;
  j["created"] = m.created;
  j["updated"] = m.updated;
  j["artifacts"] = json::array();
  for (const auto& a : m.artifacts) {
    j["artifacts"].push_back({{"path", a.path}, {"hash", a.hash}, {"bytes", a.bytes}});
  }
  write_text_file(run_dir / "manifest.json", j.dump(2) + "\n");
  return m;
}

RunManifest read_manifest(const fs::path& run_dir) {
  const json j = json::parse(read_text_file(run_dir / "manifest.json"));
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.tool_version = j.at("tool_version").get<std::string>();
  m.created = j.at("created").get<std::string>();
  m.updated = j.at("updated").get<std::string>();
  for (const json& a : j.at("artifacts")) {
    m.artifacts.push_back({a.at("path").get<std::string>(), a.at("hash").get<std::string>(),
                           a.at("bytes").get<std::uintmax_t>()});
  }
  return m;
}

std::string verify_manifest(const fs::path& run_dir) {
  const RunManifest m = read_manifest(run_dir);
  for (const ArtifactEntry& a : m.artifacts) {
    const fs::path p = run_dir / a.path;
    if (!fs::exists(p)) return "missing artifact " + a.path;
    if (file_hash(p) != a.hash) return "hash mismatch for " + a.path;
  }
  return {};
}

void log_event(const fs::path& run_dir, const std::string& message) {
  fs::create_directories(run_dir);
  std::ofstream out(run_dir / "events.log", std::ios::binary | std::ios::app);
  out << utc_timestamp() << ' ' << message << '\n';
}

std::vector<fs::path> write_report(const fs::path& run_dir) {
  std::vector<fs::path> written;
  const fs::path ledger_path = run_dir / "ledger.json";
  if (!fs::exists(ledger_path)) throw std::runtime_error("no ledger found at " + ledger_path.string());
  const std::vector<LedgerRow> ledger = parse_ledger_json(read_text_file(ledger_path));
  write_text_file(run_dir / "ledger.csv", ledger_csv(ledger));
  written.push_back(run_dir / "ledger.csv");

  std::set<double> factors;
  int max_order = 0, validation = 0;
  for (const LedgerRow& r : ledger) {
    if (r.source != "patch") continue;
    factors.insert(r.resize_factor);
    max_order = std::max(max_order, r.patch_order);
    validation = std::max(validation, r.patch_index + 1);
  }
  if (factors.empty()) throw std::runtime_error("ledger " + ledger_path.string() + " has no patch rows");
  const double primary = factors.contains(0.5) ? 0.5 : *factors.begin();
  for (double f : factors) {
    const HeatmapMatrix h = build_heatmap(ledger, max_order, validation, f);
    const fs::path out = f == primary ? run_dir / "heatmap.svg"
                                      : run_dir / ("heatmap_resize_" + format_number(f) + ".svg");
    write_text_file(out, heatmap_svg(h));
    written.push_back(out);
  }

  std::optional<TransferResult> transfer;
  if (fs::exists(run_dir / "transfer.json")) {
    transfer = parse_transfer_json(read_text_file(run_dir / "transfer.json"));
  }
  write_text_file(run_dir / "transfer.svg", transfer_svg(transfer ? &*transfer : nullptr));
  written.push_back(run_dir / "transfer.svg");
  return written;
}

}  // namespace catmouse::inline CATMOUSE_PRECISION
