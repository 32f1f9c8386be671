// SPDX-License-Identifier: Apache-2.0
//
// JSON form of ModelConfig. Keys mirror the field names exactly; unknown keys
// and wrongly typed values are rejected.
#pragma once

#include <string>

#include <json.hpp>

#include "chela/layer.hpp"

namespace chela {

nlohmann::json config_to_json(const ModelConfig& cfg);

/// Starts from the defaults and overrides the keys present. Throws ConfigError.
ModelConfig config_from_json(const nlohmann::json& j);

ModelConfig load_config_file(const std::string& path);

}  // namespace chela
