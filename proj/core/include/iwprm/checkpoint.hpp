#pragma once

#include <filesystem>

#include "iwprm/bilevel.hpp"

namespace iwprm {

// Binary container, little-endian, layout documented in docs/FORMATS.md:
// 8-byte magic "IWPRMCKP", u32 version, u64 config hash, run state, named
// f64 tensor payloads, and a trailing FNV-1a checksum over everything before
// it. save/load/continue reproduces an uninterrupted run bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace iwprm
