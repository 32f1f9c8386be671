// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <sstream>

#include "chela/config.hpp"
#include "chela/error.hpp"

namespace chela {

using nlohmann::json;

json config_to_json(const ModelConfig& c) {
  return json{{"depth", c.depth},
              {"d_model", c.d_model},
              {"max_len", c.max_len},
              {"vocab_size", c.vocab_size},
              {"input_dim", c.input_dim},
              {"num_classes", c.num_classes},
              {"task_head", to_string(c.task_head)},
              {"chunk", c.chunk},
              {"mixer", to_string(c.mixer)},
              {"include_identity", c.include_identity},
              {"ssm_state_dim", c.ssm_state_dim},
              {"ssm_delta", c.ssm_delta},
              {"seed", c.seed}};
}

namespace {

std::size_t get_size(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

ModelConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "depth") c.depth = get_size(v, key);
    else if (key == "d_model") c.d_model = get_size(v, key);
    else if (key == "max_len") c.max_len = get_size(v, key);
    else if (key == "vocab_size") c.vocab_size = get_size(v, key);
    else if (key == "input_dim") c.input_dim = get_size(v, key);
    else if (key == "num_classes") c.num_classes = get_size(v, key);
    else if (key == "chunk") c.chunk = get_size(v, key);
    else if (key == "ssm_state_dim") c.ssm_state_dim = get_size(v, key);
    else if (key == "seed") c.seed = get_size(v, key);
    else if (key == "task_head" || key == "mixer") {
      if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
      if (key == "mixer") c.mixer = parse_mixer(v.get<std::string>());
      else c.task_head = parse_task_head(v.get<std::string>());
    } else if (key == "include_identity") {
      if (!v.is_boolean()) throw ConfigError("config key 'include_identity' must be a boolean");
      c.include_identity = v.get<bool>();
    } else if (key == "ssm_delta") {
      if (!v.is_number()) throw ConfigError("config key 'ssm_delta' must be a number");
      c.ssm_delta = v.get<double>();
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  return c;
}

ModelConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace chela
