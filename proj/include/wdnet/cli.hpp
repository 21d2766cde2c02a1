#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace wdnet {

// Full default configuration; every key the config file / --set may touch.
nlohmann::ordered_json default_config();

// Overlays `overrides` onto `base` recursively; throws a runtime_error naming
// the offending dotted key when it does not exist in the defaults.
void merge_config(nlohmann::ordered_json& base, const nlohmann::json& overrides,
                  const std::string& prefix = "");

// Applies one `--set a.b.c=value` override (value parsed as JSON when valid,
// as a string otherwise).
void apply_set(nlohmann::ordered_json& config, const std::string& kv);

// Entry point shared by the binary and the CLI tests. Returns the exit code.
int cli_main(int argc, const char* const* argv);

}  // namespace wdnet
