#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "morphcf/types.hpp"

namespace morphcf {

// On-disk raster layout, little-endian:
//   magic[4] ("MVOL" volumes, "MSEG" segment maps) | version u8 = 0x01 |
//   frames u16 | height u16 | width u16 | payload frame-major, row-major, one byte per pixel.
inline constexpr std::size_t raster_header_size = 11;
inline constexpr std::uint8_t raster_format_version = 0x01;

std::vector<std::uint8_t> encode_volume(const Volume& volume);
std::vector<std::uint8_t> encode_segmap(const SegmentMap& map);

/// `id` names the decoded volume; it is not stored in the file.
Volume decode_volume(std::span<const std::uint8_t> bytes, std::string id);
SegmentMap decode_segmap(std::span<const std::uint8_t> bytes);

void write_volume(const Volume& volume, const std::filesystem::path& path);
void write_segmap(const SegmentMap& map, const std::filesystem::path& path);
/// The volume id defaults to the file stem.
Volume read_volume(const std::filesystem::path& path, std::string id = {});
SegmentMap read_segmap(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace morphcf
