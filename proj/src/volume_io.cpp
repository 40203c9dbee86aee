#include "morphcf/volume_io.hpp"

#include <array>
#include <atomic>
#include <cstring>
#include <fstream>
#include <string_view>
#include <unistd.h>

#include "morphcf/error.hpp"

namespace morphcf {

namespace {

constexpr std::array<char, 4> volume_magic{'M', 'V', 'O', 'L'};
constexpr std::array<char, 4> segmap_magic{'M', 'S', 'E', 'G'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

std::uint16_t get_u16(std::span<const std::uint8_t> bytes, std::size_t at) {
    return static_cast<std::uint16_t>(bytes[at] | (bytes[at + 1] << 8));
}

std::vector<std::uint8_t> encode(const std::array<char, 4>& magic, const Dims& dims, std::span<const std::uint8_t> payload) {
    std::vector<std::uint8_t> out;
    out.reserve(raster_header_size + payload.size());
    out.insert(out.end(), magic.begin(), magic.end());
    out.push_back(raster_format_version);
    put_u16(out, dims.frames);
    put_u16(out, dims.height);
    put_u16(out, dims.width);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::string_view magic_text(const std::array<char, 4>& magic) { return {magic.data(), magic.size()}; }

struct Decoded {
    Dims dims;
    std::vector<std::uint8_t> payload;
};

Decoded decode(const std::array<char, 4>& magic, std::span<const std::uint8_t> bytes) {
    if (bytes.size() < magic.size() || std::memcmp(bytes.data(), magic.data(), magic.size()) != 0) {
        std::string found(reinterpret_cast<const char*>(bytes.data()), std::min<std::size_t>(bytes.size(), 4));
        throw ParseError(ParseFailure::bad_magic,
                         "wrong magic: expected '" + std::string(magic_text(magic)) + "', found '" + found + "'");
    }
    if (bytes.size() < raster_header_size) {
        throw ParseError(ParseFailure::truncated, "truncated header: " + std::to_string(bytes.size()) + " bytes");
    }
    if (bytes[4] != raster_format_version) {
        throw ParseError(ParseFailure::unsupported_version, "unsupported format version " + std::to_string(bytes[4]));
    }
    Dims dims{get_u16(bytes, 5), get_u16(bytes, 7), get_u16(bytes, 9)};
    if (dims.frames == 0 || dims.height == 0 || dims.width == 0) {
        throw ParseError(ParseFailure::zero_dims, "zero dimension in header: " + to_string(dims));
    }
    const std::size_t expected = raster_header_size + dims.voxel_count();
    if (bytes.size() < expected) {
        throw ParseError(ParseFailure::truncated, "truncated payload: " + std::to_string(bytes.size()) +
                                                      " bytes, header implies " + std::to_string(expected));
    }
    if (bytes.size() > expected) {
        throw ParseError(ParseFailure::trailing_bytes, "trailing bytes: " + std::to_string(bytes.size()) +
                                                           " bytes, header implies " + std::to_string(expected));
    }
    auto payload = bytes.subspan(raster_header_size);
    return {dims, {payload.begin(), payload.end()}};
}

}  // namespace

std::vector<std::uint8_t> encode_volume(const Volume& volume) {
    return encode(volume_magic, volume.dims(), volume.pixels());
}

std::vector<std::uint8_t> encode_segmap(const SegmentMap& map) { return encode(segmap_magic, map.dims(), map.labels()); }

Volume decode_volume(std::span<const std::uint8_t> bytes, std::string id) {
    auto d = decode(volume_magic, bytes);
    return Volume(std::move(id), d.dims, std::move(d.payload));
}

SegmentMap decode_segmap(std::span<const std::uint8_t> bytes) {
    auto d = decode(segmap_magic, bytes);
    return SegmentMap(d.dims, std::move(d.payload));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    static std::atomic<unsigned> counter{0};
    auto tmp = path;
    tmp += ".tmp" + std::to_string(::getpid()) + "." + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed: " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot rename into " + path.string());
    }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_volume(const Volume& volume, const std::filesystem::path& path) {
    write_file_atomic(path, encode_volume(volume));
}

void write_segmap(const SegmentMap& map, const std::filesystem::path& path) {
    write_file_atomic(path, encode_segmap(map));
}

Volume read_volume(const std::filesystem::path& path, std::string id) {
    if (id.empty()) id = path.stem().string();
    try {
        return decode_volume(read_file_bytes(path), std::move(id));
    } catch (const ParseError& e) {
        throw ParseError(e.failure(), path.string() + ": " + e.what());
    }
}

SegmentMap read_segmap(const std::filesystem::path& path) {
    try {
        return decode_segmap(read_file_bytes(path));
    } catch (const ParseError& e) {
        throw ParseError(e.failure(), path.string() + ": " + e.what());
    }
}

}  // namespace morphcf
