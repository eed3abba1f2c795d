#pragma once

#include "leapattn/model.hpp"

#include "json.hpp"

#include <string>

namespace leapattn {

nlohmann::json config_to_json(const TransformerConfig& cfg);
/// strict=true rejects unknown keys; absent keys keep their defaults.
TransformerConfig config_from_json(const nlohmann::json& j, bool strict = true);

/// Writes <path_base>.bin (all weights, little-endian f64, registry order)
/// and <path_base>.json (format version, config echo, shape registry).
void save_checkpoint(const Model& m, const std::string& path_base);

/// Rebuilds the model from the manifest's config and restores the weights.
/// Shape or version mismatches are rejected.
Model load_checkpoint(const std::string& path_base);

}  // namespace leapattn
