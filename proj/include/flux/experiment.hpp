#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace flux {

using Json = nlohmann::json;

// Full default experiment config (desk-scale).
Json default_config();

Json load_config(const std::string& path);

// dotted-key override, e.g. "train.steps=200"
void apply_override(Json& cfg, const std::string& kv);

// rejects unknown keys (listing them) and delegates to sub-config validators
void validate_config(const Json& cfg);

std::string config_hash(const Json& cfg);

// Dispatches on cfg["mode"], writes a resolved-config snapshot and a run
// manifest beside the outputs. Returns 0 on success, 1 on validation
// error, 2 on runtime failure.
int run_experiment(Json cfg, std::string* out_dir_used = nullptr);

}  // namespace flux
