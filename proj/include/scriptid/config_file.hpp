#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace scriptid {

/// Flat `key = value` pairs. `#` starts a comment line; keys may use `-` or `_`
/// interchangeably and are stored with `-`.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text, const std::string& origin = "<config>");
ConfigMap load_config_file(const std::filesystem::path& path);

}  // namespace scriptid
