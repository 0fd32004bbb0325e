#include "highsync/preprocess.hpp"

#include "highsync/errors.hpp"

#include <algorithm>
#include <cmath>

namespace highsync::preprocess {

std::string to_string(CropPolicy policy) {
    return policy == CropPolicy::per_frame ? "per_frame" : "max_height";
}

std::string to_string(MaskCodec codec) {
    return codec == MaskCodec::lossless ? "lossless" : "lossy_block";
}

CropPolicy parse_crop_policy(std::string_view text) {
    if (text == "per_frame") return CropPolicy::per_frame;
    if (text == "max_height") return CropPolicy::max_height;
    throw InvalidArgument("unknown crop policy: " + std::string(text));
}

MaskCodec parse_mask_codec(std::string_view text) {
    if (text == "lossless") return MaskCodec::lossless;
    if (text == "lossy_block") return MaskCodec::lossy_block;
    throw InvalidArgument("unknown mask codec: " + std::string(text));
}

BoundingBox detect_face_box(int t, const synthgen::SyntheticClip& clip) {
    if (t < 0 || t >= clip.frames.count) {
        throw InvalidArgument("detect_face_box: frame index out of range");
    }
    const auto& f = clip.face;
    return BoundingBox{f.head_top(), clip.jaw_bottom[t], f.center_x - f.head_radius, f.center_x + f.head_radius};
}

void resample_box(std::span<const float> frame, int height, int width, int channels, const BoundingBox& box,
                  int out_size, std::span<float> out) {
    const double sy = box.height() / out_size;
    const double sx = box.width() / out_size;
    for (int i = 0; i < out_size; ++i) {
        // Output pixel centre mapped into source index space (centres at integer + 0.5).
        const double v = box.top + (i + 0.5) * sy - 0.5;
        const int y0 = static_cast<int>(std::floor(v));
        const double wy = v - y0;
        const int ya = std::clamp(y0, 0, height - 1);
        const int yb = std::clamp(y0 + 1, 0, height - 1);
        for (int j = 0; j < out_size; ++j) {
            const double u = box.left + (j + 0.5) * sx - 0.5;
            const int x0 = static_cast<int>(std::floor(u));
            const double wx = u - x0;
            const int xa = std::clamp(x0, 0, width - 1);
            const int xb = std::clamp(x0 + 1, 0, width - 1);
            for (int c = 0; c < channels; ++c) {
                auto px = [&](int y, int x) {
                    return static_cast<double>(frame[(static_cast<std::size_t>(y) * width + x) * channels + c]);
                };
                const double top = px(ya, xa) * (1.0 - wx) + px(ya, xb) * wx;
                const double bot = px(yb, xa) * (1.0 - wx) + px(yb, xb) * wx;
                out[(static_cast<std::size_t>(i) * out_size + j) * channels + c] =
                    static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
}

int mask_boundary_row(int out_size, double mask_fraction) {
    return static_cast<int>(std::ceil((1.0 - mask_fraction) * out_size - 1e-9));
}

Plane build_lip_mask(int out_size, double mask_fraction) {
    if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) {
        throw InvalidArgument("build_lip_mask: mask_fraction must lie in (0, 1)");
    }
    if (out_size <= 0) {
        throw InvalidArgument("build_lip_mask: out_size must be positive");
    }
    Plane mask(out_size, out_size);
    for (int y = mask_boundary_row(out_size, mask_fraction); y < out_size; ++y) {
        for (int x = 0; x < out_size; ++x) {
            mask.at(y, x) = 1.0f;
        }
    }
    return mask;
}

void apply_mask(std::span<const float> frame, const Plane& mask, int channels, std::span<float> out) {
    const std::size_t pixels = mask.data.size();
    for (std::size_t p = 0; p < pixels; ++p) {
        const float keep = 1.0f - mask.data[p];
        for (int c = 0; c < channels; ++c) {
            out[p * channels + c] = frame[p * channels + c] * keep;
        }
    }
}

PreprocessedClip crop_and_resize(const synthgen::SyntheticClip& clip, CropPolicy policy, int out_size,
                                 const MaskOptions& mask_options) {
    if (out_size < 32) {
        throw InvalidArgument("crop_and_resize: out_size must be >= 32");
    }
    const int frames = clip.frames.count;
    PreprocessedClip out;
    out.policy = policy;
    out.mask_options = mask_options;
    out.crop_boxes.reserve(frames);
    for (int t = 0; t < frames; ++t) {
        out.crop_boxes.push_back(detect_face_box(t, clip));
    }
    if (policy == CropPolicy::max_height && frames > 0) {
        double tallest = 0.0;
        for (const auto& b : out.crop_boxes) {
            tallest = std::max(tallest, b.height());
        }
        // Anchored at the head top, so the upper face lands on the same rows in every crop.
        for (auto& b : out.crop_boxes) {
            b.bottom = b.top + tallest;
        }
    }
    for (const auto& b : out.crop_boxes) {
        if (b.height() < 8.0 || b.width() < 8.0) {
            throw InvalidInput("crop_and_resize: degenerate face box (height " + std::to_string(b.height()) + ")");
        }
    }

    const int channels = clip.frames.channels;
    out.frames = Frames(frames, out_size, out_size, channels);
    out.masked_frames = Frames(frames, out_size, out_size, channels);
    out.eye_row.resize(frames);

    const Plane ideal = build_lip_mask(out_size, mask_options.mask_fraction);
    const Plane stored = deserialize_mask(serialize_mask(ideal, mask_options.codec, mask_options.lossy_quality));
    out.masks.assign(frames, stored);

    for (int t = 0; t < frames; ++t) {
        const auto& box = out.crop_boxes[t];
        resample_box(clip.frames.frame(t), clip.frames.height, clip.frames.width, channels, box, out_size,
                     out.frames.frame(t));
        apply_mask(out.frames.frame(t), out.masks[t], channels, out.masked_frames.frame(t));
        out.eye_row[t] = (clip.face.eye_row() - box.top) * out_size / box.height();
    }
    return out;
}

} // namespace highsync::preprocess
