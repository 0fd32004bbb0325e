#include "highsync/errors.hpp"
#include "highsync/preprocess.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numbers>

namespace highsync::preprocess {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'H', 'S', 'M', 'K'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 1 + 1 + 1 + 2 + 2 + 4;  // magic, version, codec, quality, h, w, payload
constexpr int kBlock = 8;

// Standard JPEG luminance quantisation table (ITU T.81, Annex K).
constexpr std::array<int, 64> kLuminance{
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

std::array<int, 64> quant_table(int quality) {
    quality = std::clamp(quality, 1, 100);
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<int, 64> q{};
    for (int i = 0; i < 64; ++i) {
        q[i] = std::clamp((kLuminance[i] * scale + 50) / 100, 1, 255);
    }
    return q;
}

const std::array<double, 64>& dct_basis() {
    static const std::array<double, 64> basis = [] {
        std::array<double, 64> b{};
        for (int u = 0; u < kBlock; ++u) {
            const double cu = u == 0 ? std::sqrt(0.125) : 0.5;
            for (int x = 0; x < kBlock; ++x) {
                b[u * kBlock + x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
            }
        }
        return b;
    }();
    return basis;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
           (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::vector<std::uint8_t> deflate(const std::vector<std::uint8_t>& raw) {
    uLongf size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> out(size);
    if (compress2(out.data(), &size, raw.data(), static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK) {
        throw std::runtime_error("serialize_mask: zlib compression failed");
    }
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> inflate(std::span<const std::uint8_t> packed, std::size_t expected) {
    std::vector<std::uint8_t> out(expected);
    uLongf size = static_cast<uLongf>(expected);
    if (uncompress(out.data(), &size, packed.data(), static_cast<uLong>(packed.size())) != Z_OK || size != expected) {
        throw DecodeError("deserialize_mask: payload does not inflate to the declared size");
    }
    return out;
}

int blocks_along(int n) { return (n + kBlock - 1) / kBlock; }

// Forward DCT + quantisation of 8-bit levels (0 or 255). No level shift, so an all-zero block
// quantises to all-zero coefficients and reconstructs exactly.
std::vector<std::uint8_t> encode_lossy(const Plane& mask, int quality) {
    const auto q = quant_table(quality);
    const auto& basis = dct_basis();
    const int by = blocks_along(mask.height);
    const int bx = blocks_along(mask.width);
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(by) * bx * 64 * 2);
    std::array<double, 64> block{};
    std::array<double, 64> tmp{};
    for (int b0 = 0; b0 < by; ++b0) {
        for (int b1 = 0; b1 < bx; ++b1) {
            for (int y = 0; y < kBlock; ++y) {
                for (int x = 0; x < kBlock; ++x) {
                    const int yy = std::min(b0 * kBlock + y, mask.height - 1);
                    const int xx = std::min(b1 * kBlock + x, mask.width - 1);
                    block[y * kBlock + x] = 255.0 * mask.at(yy, xx);
                }
            }
            // Separable transform: rows then columns.
            for (int y = 0; y < kBlock; ++y) {
                for (int u = 0; u < kBlock; ++u) {
                    double acc = 0.0;
                    for (int x = 0; x < kBlock; ++x) acc += basis[u * kBlock + x] * block[y * kBlock + x];
                    tmp[y * kBlock + u] = acc;
                }
            }
            for (int v = 0; v < kBlock; ++v) {
                for (int u = 0; u < kBlock; ++u) {
                    double acc = 0.0;
                    for (int y = 0; y < kBlock; ++y) acc += basis[v * kBlock + y] * tmp[y * kBlock + u];
                    const auto level = static_cast<std::int16_t>(std::lround(acc / q[v * kBlock + u]));
                    raw.push_back(static_cast<std::uint8_t>(static_cast<std::uint16_t>(level) & 0xff));
                    raw.push_back(static_cast<std::uint8_t>(static_cast<std::uint16_t>(level) >> 8));
                }
            }
        }
    }
    return raw;
}

Plane decode_lossy(std::span<const std::uint8_t> raw, int height, int width, int quality) {
    const auto q = quant_table(quality);
    const auto& basis = dct_basis();
    const int by = blocks_along(height);
    const int bx = blocks_along(width);
    Plane mask(height, width);
    std::array<double, 64> coeff{};
    std::array<double, 64> tmp{};
    std::size_t at = 0;
    for (int b0 = 0; b0 < by; ++b0) {
        for (int b1 = 0; b1 < bx; ++b1) {
            for (int i = 0; i < 64; ++i, at += 2) {
                const auto level = static_cast<std::int16_t>(raw[at] | (raw[at + 1] << 8));
                coeff[i] = static_cast<double>(level) * q[i];
            }
            for (int v = 0; v < kBlock; ++v) {
                for (int x = 0; x < kBlock; ++x) {
                    double acc = 0.0;
                    for (int u = 0; u < kBlock; ++u) acc += basis[u * kBlock + x] * coeff[v * kBlock + u];
                    tmp[v * kBlock + x] = acc;
                }
            }
            for (int y = 0; y < kBlock; ++y) {
                for (int x = 0; x < kBlock; ++x) {
                    double acc = 0.0;
                    for (int v = 0; v < kBlock; ++v) acc += basis[v * kBlock + y] * tmp[v * kBlock + x];
                    const int yy = b0 * kBlock + y;
                    const int xx = b1 * kBlock + x;
                    if (yy < height && xx < width) {
                        const double level = std::clamp(std::round(acc), 0.0, 255.0);
                        mask.at(yy, xx) = static_cast<float>(level / 255.0);
                    }
                }
            }
        }
    }
    return mask;
}

struct Header {
    MaskCodec codec;
    int quality;
    int height;
    int width;
    std::uint32_t payload;
};

Header parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize + 4) {
        throw DecodeError("deserialize_mask: truncated input");
    }
    if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw DecodeError("deserialize_mask: bad magic");
    }
    if (bytes[4] != kVersion) {
        throw DecodeError("deserialize_mask: unsupported version");
    }
    if (bytes[5] > 1) {
        throw DecodeError("deserialize_mask: unknown codec id");
    }
    Header h{bytes[5] == 0 ? MaskCodec::lossless : MaskCodec::lossy_block, bytes[6], get_u16(bytes, 7),
             get_u16(bytes, 9), get_u32(bytes, 11)};
    if (bytes.size() != kHeaderSize + h.payload + 4) {
        throw DecodeError("deserialize_mask: length mismatch");
    }
    const std::uint32_t stored = get_u32(bytes, kHeaderSize + h.payload);
    const auto actual = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(kHeaderSize + h.payload)));
    if (stored != actual) {
        throw DecodeError("deserialize_mask: checksum mismatch");
    }
    if (h.height == 0 || h.width == 0) {
        throw DecodeError("deserialize_mask: empty dimensions");
    }
    return h;
}

} // namespace

std::vector<std::uint8_t> serialize_mask(const Plane& mask, MaskCodec codec, int quality) {
    if (mask.height <= 0 || mask.width <= 0 || mask.height > 65535 || mask.width > 65535) {
        throw InvalidArgument("serialize_mask: unsupported dimensions");
    }
    for (float v : mask.data) {
        if (v != 0.0f && v != 1.0f) {
            throw InvalidArgument("serialize_mask: mask must be binary");
        }
    }
    std::vector<std::uint8_t> raw;
    if (codec == MaskCodec::lossless) {
        raw.reserve(mask.data.size());
        for (float v : mask.data) raw.push_back(v != 0.0f ? 1 : 0);
    } else {
        raw = encode_lossy(mask, quality);
    }
    const auto payload = deflate(raw);

    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    out.push_back(kVersion);
    out.push_back(codec == MaskCodec::lossless ? 0 : 1);
    out.push_back(static_cast<std::uint8_t>(std::clamp(quality, 1, 100)));
    put_u16(out, static_cast<std::uint16_t>(mask.height));
    put_u16(out, static_cast<std::uint16_t>(mask.width));
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    put_u32(out, static_cast<std::uint32_t>(crc32(0L, out.data(), static_cast<uInt>(out.size()))));
    return out;
}

MaskCodec peek_mask_codec(std::span<const std::uint8_t> bytes) { return parse_header(bytes).codec; }

Plane deserialize_mask(std::span<const std::uint8_t> bytes) {
    const Header h = parse_header(bytes);
    const auto payload = bytes.subspan(kHeaderSize, h.payload);
    if (h.codec == MaskCodec::lossless) {
        const auto raw = inflate(payload, static_cast<std::size_t>(h.height) * h.width);
        Plane mask(h.height, h.width);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (raw[i] > 1) throw DecodeError("deserialize_mask: non-binary lossless payload");
            mask.data[i] = static_cast<float>(raw[i]);
        }
        return mask;
    }
    const std::size_t coeffs = static_cast<std::size_t>(blocks_along(h.height)) * blocks_along(h.width) * 64 * 2;
    const auto raw = inflate(payload, coeffs);
    return decode_lossy(raw, h.height, h.width, h.quality);
}

} // namespace highsync::preprocess
