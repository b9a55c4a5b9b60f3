#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "catmouse/game.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& origin, int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

/// Parses the `key = value` format. Sections [game], [patch], [detector],
/// [data] and [eval] group the keys; keys before any section header belong to
/// [game]. `#` starts a comment. A `preset` key resets every field to that
/// preset and must precede all other keys. Unset keys keep the base values.
GameConfig parse_config(const std::string& text, const GameConfig& base = desk_preset(),
                        const std::string& origin = "<config>");

GameConfig load_config(const std::filesystem::path& path, const GameConfig& base = desk_preset());

/// Every key with its value; parse_config(serialize_config(c)) == c.
std::string serialize_config(const GameConfig& config);

bool same_config(const GameConfig& a, const GameConfig& b);

/// FNV-1a over the serialized configuration.
std::uint64_t config_hash(const GameConfig& config);
std::string hex64(std::uint64_t value);
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace catmouse::inline CATMOUSE_PRECISION
