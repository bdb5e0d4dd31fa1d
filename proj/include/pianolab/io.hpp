#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace pianolab::io {

/// Writes via a sibling temp file + rename, so interrupted runs never
/// leave a half-written artifact behind.
void atomic_write_file(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(const std::string& s);

/// 16-char lowercase hex of fnv1a64.
std::string hash_hex(const std::string& s);

}  // namespace pianolab::io
