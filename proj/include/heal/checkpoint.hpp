#pragma once

// Binary ensemble checkpoint.
//
// Layout: "HEALCKPT", u32 format version, then tagged sections
// (4-byte tag, u64 byte length, payload) in a fixed order. Scalars are
// little-endian; doubles are stored as raw IEEE-754 bits, so a round trip is
// exact. Unknown tags are skipped on load.

#include <filesystem>
#include <string>

#include "heal/ensemble.hpp"

namespace heal {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_ensemble(const Ensemble& ensemble);
Ensemble deserialize_ensemble(std::string_view bytes);

// Writes to a sibling temp file and renames it into place.
void save_checkpoint(const Ensemble& ensemble, const std::filesystem::path& path);
Ensemble load_checkpoint(const std::filesystem::path& path);

// Shared by everything that persists state.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace heal
