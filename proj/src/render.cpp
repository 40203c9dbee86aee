#include "morphcf/render.hpp"

#include <zlib.h>

#include <stdexcept>
#include <string>

#include "morphcf/error.hpp"

namespace morphcf {

namespace {

constexpr std::array<Rgb, 8> palette{{{230, 25, 75},
                                      {60, 180, 75},
                                      {0, 130, 200},
                                      {255, 225, 25},
                                      {145, 30, 180},
                                      {70, 240, 240},
                                      {245, 130, 48},
                                      {240, 50, 230}}};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const auto start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

Rgb overlay_colour(Label label) { return palette[(label - 1) % palette.size()]; }

std::uint8_t blend_channel(std::uint8_t gray, std::uint8_t colour) {
    return static_cast<std::uint8_t>((3 * gray + 2 * colour + 2) / 5);
}

std::vector<std::uint8_t> encode_png(std::uint32_t width, std::uint32_t height, int channels,
                                     const std::vector<std::uint8_t>& samples) {
    if (channels != 1 && channels != 3) throw std::invalid_argument("png: channels must be 1 or 3");
    const std::size_t row = static_cast<std::size_t>(width) * channels;
    if (samples.size() != row * height) throw std::invalid_argument("png: sample count does not match dims");
    std::vector<std::uint8_t> raw;
    raw.reserve((row + 1) * height);
    for (std::uint32_t y = 0; y < height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), samples.begin() + static_cast<std::ptrdiff_t>(y * row),
                   samples.begin() + static_cast<std::ptrdiff_t>((y + 1) * row));
    }
    uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_size);
    if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw std::runtime_error("png: deflate failed");
    }
    packed.resize(packed_size);

    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, width);
    put_u32(ihdr, height);
    ihdr.push_back(8);                                     // bit depth
    ihdr.push_back(static_cast<std::uint8_t>(channels == 1 ? 0 : 2));  // colour type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", packed);
    put_chunk(out, "IEND", {});
    return out;
}

std::vector<std::uint8_t> render_frame_png(const Volume& volume, const SegmentMap& segmap, std::size_t frame, bool overlay) {
    check_pairing(volume, segmap);
    const auto pixels = volume.frame(frame);
    const auto& d = volume.dims();
    if (!overlay) return encode_png(d.width, d.height, 1, {pixels.begin(), pixels.end()});
    const auto labels = segmap.frame(frame);
    std::vector<std::uint8_t> rgb;
    rgb.reserve(pixels.size() * 3);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        if (labels[i] == 0) {
            rgb.insert(rgb.end(), {pixels[i], pixels[i], pixels[i]});
        } else {
            const auto c = overlay_colour(labels[i]);
            for (int k = 0; k < 3; ++k) rgb.push_back(blend_channel(pixels[i], c[k]));
        }
    }
    return encode_png(d.width, d.height, 3, rgb);
}

}  // namespace morphcf
