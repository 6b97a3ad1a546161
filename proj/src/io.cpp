#include "protoens/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "protoens/error.hpp"

namespace protoens {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'V', 'L', '1'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8) {
        out.push_back(static_cast<std::uint8_t>(v >> shift));
    }
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t off) {
    return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
           (static_cast<std::uint32_t>(b[off + 2]) << 16) |
           (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xFFFFFFFFu) {
        throw InvalidArgument(std::string(what) + " does not fit the FVL1 header");
    }
    return static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_fvol(const FeatureVolume& volume) {
    std::vector<std::uint8_t> out;
    out.reserve(kFvolHeaderSize + 4 * volume.data().size());
    for (std::uint8_t b : kMagic) out.push_back(b);
    put_u16(out, kFvolVersion);
    put_u32(out, checked_u32(volume.height(), "height"));
    put_u32(out, checked_u32(volume.width(), "width"));
    put_u32(out, checked_u32(volume.channels(), "channels"));
    for (float v : volume.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

FeatureVolume decode_fvol(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) {
        throw FormatError("FVL1: file too short for magic", bytes.size());
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("FVL1: bad magic", 0);
    }
    if (bytes.size() < kFvolHeaderSize) {
        throw FormatError("FVL1: truncated header", bytes.size());
    }
    const std::uint16_t version = get_u16(bytes, 4);
    if (version != kFvolVersion) {
        throw FormatError("FVL1: unsupported version " + std::to_string(version), 4);
    }
    const std::uint64_t h = get_u32(bytes, 6);
    const std::uint64_t w = get_u32(bytes, 10);
    const std::uint64_t c = get_u32(bytes, 14);
    if (h == 0 || w == 0 || c == 0) {
        throw FormatError("FVL1: zero dimension in header", h == 0 ? 6 : (w == 0 ? 10 : 14));
    }
    const std::uint64_t count = h * w * c;
    const std::uint64_t expected = kFvolHeaderSize + 4 * count;
    if (bytes.size() < expected) {
        throw FormatError("FVL1: truncated payload, expected " + std::to_string(expected) +
                              " bytes, got " + std::to_string(bytes.size()),
                          bytes.size());
    }
    if (bytes.size() > expected) {
        throw FormatError("FVL1: " + std::to_string(bytes.size() - expected) +
                              " trailing bytes after payload",
                          expected);
    }
    std::vector<float> data(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t off = kFvolHeaderSize + 4 * i;
        data[i] = std::bit_cast<float>(get_u32(bytes, off));
        if (!std::isfinite(data[i])) {
            throw FormatError("FVL1: non-finite value", off);
        }
    }
    return FeatureVolume(h, w, c, std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

void write_fvol(const FeatureVolume& volume, const std::filesystem::path& path) {
    write_file_bytes(path, encode_fvol(volume));
}

FeatureVolume read_fvol(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_fvol(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

// libpng reports errors through longjmp; nothing with a destructor may live
// in the frames between setjmp and the libpng calls.
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngErrorState {
    char message[256] = {};
};

void png_error_handler(png_structp png, png_const_charp msg) {
    auto* state = static_cast<PngErrorState*>(png_get_error_ptr(png));
    std::snprintf(state->message, sizeof state->message, "%s", msg);
    png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

// Returns false and fills state->message on a libpng error.
bool read_png_rows(std::FILE* fp, PngErrorState* state, png_uint_32* width,
                   png_uint_32* height, int* bit_depth, int* color_type,
                   std::vector<std::uint8_t>* pixels) {
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, state, png_error_handler, png_warning_handler);
    if (!png) {
        std::snprintf(state->message, sizeof state->message, "out of memory");
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        std::snprintf(state->message, sizeof state->message, "out of memory");
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    *width = png_get_image_width(png, info);
    *height = png_get_image_height(png, info);
    *bit_depth = png_get_bit_depth(png, info);
    *color_type = png_get_color_type(png, info);
    if (*bit_depth == 8 && *color_type == PNG_COLOR_TYPE_GRAY) {
        pixels->resize(static_cast<std::size_t>(*width) * *height);
        for (png_uint_32 y = 0; y < *height; ++y) {
            png_read_row(png, pixels->data() + static_cast<std::size_t>(y) * *width, nullptr);
        }
        png_read_end(png, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

bool write_png_rows(std::FILE* fp, PngErrorState* state, png_uint_32 width, png_uint_32 height,
                    const std::uint8_t* pixels) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, state, png_error_handler,
                                              png_warning_handler);
    if (!png) {
        std::snprintf(state->message, sizeof state->message, "out of memory");
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        std::snprintf(state->message, sizeof state->message, "out of memory");
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (png_uint_32 y = 0; y < height; ++y) {
        png_write_row(png, pixels + static_cast<std::size_t>(y) * width);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return true;
}

}  // namespace

DenseMask read_mask(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) {
        throw IoError("cannot open mask " + path.string());
    }
    unsigned char signature[8] = {};
    if (std::fread(signature, 1, 8, fp.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
        throw UnsupportedFormat(path.string() + ": not a PNG file");
    }
    std::rewind(fp.get());

    PngErrorState state;
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    int bit_depth = 0;
    int color_type = 0;
    std::vector<std::uint8_t> pixels;
    if (!read_png_rows(fp.get(), &state, &width, &height, &bit_depth, &color_type, &pixels)) {
        throw UnsupportedFormat(path.string() + ": PNG decode failed: " + state.message);
    }
    if (color_type != PNG_COLOR_TYPE_GRAY) {
        throw UnsupportedFormat(path.string() +
                                ": masks must be single-channel grayscale PNGs (color type " +
                                std::to_string(color_type) + ")");
    }
    if (bit_depth != 8) {
        throw UnsupportedFormat(path.string() + ": masks must be 8-bit, got " +
                                std::to_string(bit_depth) + "-bit");
    }
    return DenseMask(height, width, std::move(pixels));
}

void write_mask(const DenseMask& mask, const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    PngErrorState state;
    if (!write_png_rows(fp.get(), &state, static_cast<png_uint_32>(mask.width()),
                        static_cast<png_uint_32>(mask.height()), mask.labels().data())) {
        throw IoError(path.string() + ": PNG encode failed: " + state.message);
    }
    if (std::fflush(fp.get()) != 0) {
        throw IoError("write failed for " + path.string());
    }
}

}  // namespace protoens
