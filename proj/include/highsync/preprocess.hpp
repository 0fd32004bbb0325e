#pragma once

#include "highsync/frames.hpp"
#include "highsync/synthgen.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace highsync::preprocess {

enum class CropPolicy { per_frame, max_height };
enum class MaskCodec { lossless, lossy_block };

std::string to_string(CropPolicy policy);
std::string to_string(MaskCodec codec);
CropPolicy parse_crop_policy(std::string_view text);
MaskCodec parse_mask_codec(std::string_view text);

// Sub-pixel box in frame coordinates (pixel y covers [y, y + 1)).
struct BoundingBox {
    double top = 0.0;
    double bottom = 0.0;
    double left = 0.0;
    double right = 0.0;

    double height() const { return bottom - top; }
    double width() const { return right - left; }
};

inline constexpr double kDefaultMaskFraction = 0.5;
inline constexpr int kDefaultLossyQuality = 6;

struct MaskOptions {
    double mask_fraction = kDefaultMaskFraction;
    MaskCodec codec = MaskCodec::lossless;
    int lossy_quality = kDefaultLossyQuality;
};

struct PreprocessedClip {
    Frames frames;          // T x S x S x C
    Frames masked_frames;   // frames * (1 - mask)
    std::vector<Plane> masks;
    std::vector<BoundingBox> crop_boxes;
    CropPolicy policy = CropPolicy::per_frame;
    MaskOptions mask_options;
    std::vector<double> eye_row;  // eye-centre row in crop coordinates
};

// Stand-in detector: head top to the lowest face pixel vertically, head extent horizontally.
BoundingBox detect_face_box(int t, const synthgen::SyntheticClip& clip);

// Throws InvalidArgument for out_size < 32, InvalidInput for boxes shorter than 8 px.
PreprocessedClip crop_and_resize(const synthgen::SyntheticClip& clip, CropPolicy policy, int out_size,
                                 const MaskOptions& mask_options = {});

// Bilinear crop of one frame; output is out_size x out_size x C.
void resample_box(std::span<const float> frame, int height, int width, int channels, const BoundingBox& box,
                  int out_size, std::span<float> out);

// Rows at or below (1 - mask_fraction) * out_size are 1.
Plane build_lip_mask(int out_size, double mask_fraction);

// First masked row for the given geometry.
int mask_boundary_row(int out_size, double mask_fraction);

void apply_mask(std::span<const float> frame, const Plane& mask, int channels, std::span<float> out);

// Binary container: magic, codec, dims, payload, CRC32. Lossless stores the bits; lossy_block
// stores 8x8 DCT coefficients quantised with the JPEG luminance table at `quality`.
std::vector<std::uint8_t> serialize_mask(const Plane& mask, MaskCodec codec, int quality = kDefaultLossyQuality);

// Throws DecodeError on malformed or corrupted input.
Plane deserialize_mask(std::span<const std::uint8_t> bytes);

// Codec recorded in a serialized mask header (throws DecodeError if malformed).
MaskCodec peek_mask_codec(std::span<const std::uint8_t> bytes);

} // namespace highsync::preprocess
