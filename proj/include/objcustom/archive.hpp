#pragma once

// Single-file parameter archive:
//   "OCKARCH1\n" | u64 header_bytes | JSON header | raw little-endian doubles
// The header holds free-form metadata plus {name, rows, cols, offset} per block.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "objcustom/autodiff.hpp"
#include "objcustom/tensor.hpp"

namespace objcustom {

struct Archive {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> blocks;

    const Tensor* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

void store_to_archive(const ad::ParamStore& store, Archive& archive, const std::string& prefix = "");
// Overwrites every parameter of `store` from `archive`; missing blocks or shape
// mismatches raise ConfigError naming the parameter.
void load_from_archive(ad::ParamStore& store, const Archive& archive, const std::string& prefix = "");

}  // namespace objcustom
