#pragma once

#include "highsync/frames.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace highsync::synthgen {

using Rgb = std::array<float, 3>;

inline constexpr double kDefaultSampleRate = 16000.0;
inline constexpr double kDefaultFps = 25.0;

// Per-frame RMS divided by this constant gives the mouth aperture (before clamping).
// envelope_random audio peaks near RMS 0.46, so apertures cover [0, 1] with mild saturation.
inline constexpr double kApertureCalibration = 0.4;

// Eyebrow lift in pixels at eyebrow_coupling == 1 and aperture == 1.
inline constexpr double kEyebrowShift = 4.0;

enum class AudioKind { silent, tone_sequence, envelope_random };

struct SyntheticAudio {
    std::vector<float> samples;
    double sample_rate = kDefaultSampleRate;
    double duration = 0.0;
};

struct FaceParams {
    double center_x = 32.0;
    double center_y = 30.0;
    double head_radius = 22.0;
    double eye_offset = 15.0;       // eye centre, pixels below head top
    double eye_radius = 3.0;
    double eye_spacing = 16.0;      // distance between eye centres
    double eyebrow_gap = 3.0;       // clearance between eye top and eyebrow bottom
    double mouth_center_y = 40.0;   // row where the upper lip meets the mouth opening
    double mouth_width = 12.0;
    double lip_thickness = 2.0;
    double max_mouth_height = 8.0;
    double eyebrow_coupling = 0.0;  // in [0, 1]

    Rgb background{0.20f, 0.30f, 0.45f};
    Rgb skin{0.88f, 0.70f, 0.56f};
    Rgb eye{0.10f, 0.12f, 0.30f};
    Rgb eyebrow{0.30f, 0.18f, 0.10f};
    Rgb lip{0.72f, 0.28f, 0.30f};
    Rgb mouth_interior{0.10f, 0.02f, 0.04f};

    double head_top() const { return center_y - head_radius; }
    double eye_row() const { return head_top() + eye_offset; }
    // Rows at or above this line never change with aperture.
    double jaw_pivot() const { return mouth_center_y - max_mouth_height; }
    double closed_jaw_bottom() const { return center_y + head_radius; }
    double jaw_bottom(double aperture) const { return closed_jaw_bottom() + aperture * max_mouth_height; }
    double eyebrow_top(double aperture) const {
        return eye_row() - eye_radius - eyebrow_gap - 2.0 - eyebrow_coupling * aperture * kEyebrowShift;
    }
};

struct SyntheticClip {
    Frames frames;  // T x H x W x C
    double fps = kDefaultFps;
    std::vector<double> aperture;
    SyntheticAudio audio;
    FaceParams face;
    std::vector<double> jaw_bottom;
};

// Deterministic for fixed arguments. Throws InvalidArgument on duration <= 0 or sample_rate < 1000.
SyntheticAudio synth_audio(AudioKind kind, double duration, double sample_rate, std::uint64_t seed);

// Raw per-frame RMS over the samples belonging to each video frame.
std::vector<double> frame_rms(const SyntheticAudio& audio, double fps);

// Number of video frames spanned by the audio at the given frame rate.
int frame_count(const SyntheticAudio& audio, double fps);

// Smoothed frame-rate RMS envelope, before calibration.
std::vector<double> audio_envelope(const SyntheticAudio& audio, double fps);

std::vector<double> audio_to_aperture(const SyntheticAudio& audio, double fps);

// Throws InvalidArgument if the face at full aperture does not fit in height x width.
void validate_face(const FaceParams& face, int height, int width);

// Renders one frame into `out` (H x W x channels, channels 1 or 3).
void render_frame(const FaceParams& face, double aperture, int height, int width, int channels,
                  std::span<float> out);

SyntheticClip render_clip(const SyntheticAudio& audio, const FaceParams& face, double fps, int height,
                          int width, int channels = 3);

// Same as render_clip with an explicit aperture track (audio is kept as metadata only).
SyntheticClip render_clip_with_apertures(const SyntheticAudio& audio, std::vector<double> aperture,
                                         const FaceParams& face, double fps, int height, int width,
                                         int channels = 3);

// Random identity (colours) with mild geometry jitter. eyebrow_coupling is set by the caller.
FaceParams random_face(std::uint64_t seed);

} // namespace highsync::synthgen
