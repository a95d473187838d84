#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "goalign/encoders.hpp"

namespace goalign::ckpt {

inline constexpr const char* kCheckpointVersion = "goalign-ckpt/1";

// Versioned binary container: version line, length-prefixed JSON header
// (configs, vocab, tensor directory, free-form meta), then raw float64 data.
struct Checkpoint {
  enc::Model model;
  enc::ParamMap opt_state;  // optimizer tensors, may be empty
  nlohmann::json meta;      // step / epoch / seed and friends
};

// Atomic: writes to a temp file in the same directory, then renames.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over all model tensor bytes; stable id for reports.
uint64_t params_fingerprint(const enc::ParamMap& params);
std::string fingerprint_hex(uint64_t h);

}  // namespace goalign::ckpt
