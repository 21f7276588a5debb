#pragma once

// Checkpoints: a JSON manifest (model spec, tensor names/shapes/offsets,
// free-form metadata) next to a little-endian float32 payload.

#include <filesystem>
#include <nlohmann/json.hpp>

#include "stcvae/network.hpp"

namespace stcvae {

struct Checkpoint {
  VaeModel<float> model;
  nlohmann::json metadata;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Writes `<stem>.json` and `<stem>.bin`.
void write_checkpoint(const std::filesystem::path& stem, const VaeModel<float>& model,
                      const nlohmann::json& metadata = nlohmann::json::object());

/// Throws FormatError naming the offending field on any mismatch.
Checkpoint read_checkpoint(const std::filesystem::path& stem);

}  // namespace stcvae
