#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "catmouse/evaluator.hpp"
#include "catmouse/game.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

inline constexpr const char* kToolVersion = "0.1.0";

std::string format_number(double value);

/// Header plus one row per ledger entry, '.' decimals and '\n' line endings.
std::string ledger_csv(std::span<const LedgerRow> ledger);
std::string ledger_json(std::span<const LedgerRow> ledger);
std::vector<LedgerRow> parse_ledger_json(const std::string& text);

std::string transfer_json(const TransferResult& result);
TransferResult parse_transfer_json(const std::string& text);

/// Shaded cells (class "cell") with numeric labels, plus separated row-mean
/// and column-mean groups. Darker shade means larger delta AP.
std::string heatmap_svg(const HeatmapMatrix& matrix);

/// Mean AP bar per patch order with std whiskers and dashed clean and
/// grayscale reference lines. Renders a placeholder when no result exists.
std::string transfer_svg(const TransferResult* result);

/// Shade for a delta AP value; monotone, darker for larger values.
std::string heat_color(double delta_ap, double max_abs);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

struct ArtifactEntry {
  std::string path;  // relative to the run directory, '/' separated
  std::string hash;  // FNV-1a 64 of the content, hex
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  std::string run_id;
  std::string config_hash;
  std::string tool_version = kToolVersion;
  std::string created;
  std::string updated;
  std::vector<ArtifactEntry> artifacts;
};

std::string file_hash(const std::filesystem::path& path);

/// Inventories every file of the run directory except the manifest itself and
/// writes manifest.json. An existing manifest keeps its creation time.
RunManifest write_manifest(const std::filesystem::path& run_dir, const std::string& run_id,
                           const std::string& config_hash);
RunManifest read_manifest(const std::filesystem::path& run_dir);

/// Empty when every listed artifact exists with a matching hash, otherwise a
/// description of the first problem.
std::string verify_manifest(const std::filesystem::path& run_dir);

/// Appends a timestamped line to events.log in the run directory.
void log_event(const std::filesystem::path& run_dir, const std::string& message);

std::string utc_timestamp();

/// Writes ledger.csv, heatmap.svg and transfer.svg from ledger.json and
/// transfer.json (when present) of a run directory. Returns the written paths.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& run_dir);

}  // namespace catmouse::inline CATMOUSE_PRECISION
