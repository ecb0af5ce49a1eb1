#pragma once

// JSON engine configuration. Every field has a default matching the
// reference operating point; a config file overrides only the keys it names.

#include <string>

#include <json.hpp>

#include "cse/train.hpp"

namespace cse {

EngineConfig default_engine_config();

// Parse a JSON config file over the defaults.
EngineConfig load_engine_config(const std::string& path);
EngineConfig engine_config_from_json(const nlohmann::json& j);

nlohmann::json engine_config_to_json(const EngineConfig& config);
std::string engine_config_digest(const EngineConfig& config);

nlohmann::json adapter_to_json(const AdapterDescriptor& descriptor);
AdapterDescriptor adapter_from_json(const nlohmann::json& j);

} // namespace cse
