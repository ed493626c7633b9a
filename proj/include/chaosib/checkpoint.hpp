#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "chaosib/autodiff.hpp"

namespace chaosib {

/**
 * Checkpoint file: u64 JSON-manifest length + UTF-8 JSON manifest + little-endian
 * float64 blob of all parameter tensors in manifest order. The writer appends a
 * "params" array (name, rows, cols) to the caller's manifest.
 */
void save_checkpoint(const std::string& path, nlohmann::json manifest,
                     const std::vector<std::pair<std::string, const ad::Tensor*>>& params);

struct Checkpoint {
    nlohmann::json manifest;
    std::vector<std::pair<std::string, ad::Tensor>> params;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace chaosib
