#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gsec {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian and are memcpy'd directly");

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place, so a crash
/// never leaves a truncated file under the final name.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

// FNV-1a, 64 bit.
constexpr std::uint64_t fnv1a(std::string_view text, std::uint64_t hash = 0xcbf29ce484222325ULL) {
    for (const char c : text) {
        hash ^= static_cast<std::uint8_t>(c);
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::uint64_t fnv1a_bytes(std::span<const std::byte> bytes);

std::string hex64(std::uint64_t value);

}  // namespace gsec
