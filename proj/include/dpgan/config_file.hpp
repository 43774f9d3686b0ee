#pragma once

#include <map>
#include <string>

#include "dpgan/trainer.hpp"

namespace dpgan {

/// Flat key=value text. Blank lines and lines starting with # are skipped;
/// parsing throws on malformed lines or duplicate keys.
std::map<std::string, std::string> parse_kv_text(const std::string& text);

/// Serializes every field of the config; parsing the result reproduces the
/// config bit for bit (doubles are printed round-trip exact).
std::string train_config_to_text(const TrainConfig& cfg);

/// Parses config text produced by train_config_to_text (or written by hand).
/// Unknown keys and unparsable values throw; omitted keys keep defaults.
TrainConfig train_config_from_text(const std::string& text);

/// Sets one field by key, same names and value syntax as the config text.
void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value);

}  // namespace dpgan
