#pragma once

// Versioned text container for trained fusion parameters.
//
//   cavf-checkpoint 1
//   variant cross-attn
//   target valence
//   temperature 1
//   seed 7
//   dataset_fingerprint 0123456789abcdef
//   config {"...": ...}            resolved run config, one line of JSON
//   matrix w0 32 32                one row per line
//   ...
//   matrix fc1_w 64 64
//   vector fc1_b 64                one line
//   matrix fc2_w 1 64
//   scalar fc2_b 0.125
//   end
//
// Numbers use the shortest decimal form that round-trips, so a load/save
// cycle reproduces the file byte for byte.

#include <cstdint>
#include <filesystem>
#include <string>

#include "cavf/fusion.hpp"
#include "cavf/trainer.hpp"

namespace cavf {

struct Checkpoint {
  FusionParams params;
  Target target = Target::valence;
  std::uint64_t seed = 0;
  std::uint64_t dataset_fingerprint = 0;
  std::string config_json = "{}";
};

std::string format_checkpoint(const Checkpoint& c);
Checkpoint parse_checkpoint(const std::string& text);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Whole-file helpers shared by the file formats.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cavf
