#pragma once

#include "attnsink/constructions.hpp"

#include <json.hpp>

#include <string>

namespace attnsink {

// FNV-1a 64-bit, hex.
std::string config_hash(const std::string& text);

// $ATTNSINK_OUTPUT_DIR if set, else the fallback; created if missing.
std::string resolve_output_dir(const std::string& fallback);

nlohmann::json to_json(const CostReport& c);
nlohmann::json to_json(const BoundSet& b);
nlohmann::json to_json(const Thm2Bounds& b);

void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace attnsink
