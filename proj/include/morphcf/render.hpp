#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "morphcf/types.hpp"

namespace morphcf {

using Rgb = std::array<std::uint8_t, 3>;

/// Overlay colour for a label (>= 1); the palette cycles past its end.
Rgb overlay_colour(Label label);
inline constexpr double overlay_opacity = 0.4;

/// round(0.6 * gray + 0.4 * colour), per channel.
std::uint8_t blend_channel(std::uint8_t gray, std::uint8_t colour);

/// Lossless PNG of one frame: 8-bit grayscale without overlay, 8-bit RGB with labelled pixels tinted.
std::vector<std::uint8_t> render_frame_png(const Volume& volume, const SegmentMap& segmap, std::size_t frame, bool overlay);

/// Minimal PNG encoder (no interlace, filter 0). `channels` is 1 (gray) or 3 (RGB).
std::vector<std::uint8_t> encode_png(std::uint32_t width, std::uint32_t height, int channels,
                                     const std::vector<std::uint8_t>& samples);

}  // namespace morphcf
