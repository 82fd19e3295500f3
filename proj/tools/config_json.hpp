#pragma once

#include <string>

#include "gncd/trainer.hpp"
#include "json.hpp"

namespace gncd::cli {

nlohmann::ordered_json to_json(const trainer::TrainConfig& cfg);

// Applies the keys present in `j` on top of `cfg`. Unknown keys are errors.
void apply_json(const nlohmann::json& j, trainer::TrainConfig& cfg);

// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace gncd::cli
