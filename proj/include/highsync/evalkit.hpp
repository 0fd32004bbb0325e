#pragma once

#include "highsync/frames.hpp"
#include "highsync/preprocess.hpp"
#include "highsync/synthgen.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace highsync::evalkit {

// Aperture below this counts as closed lips.
inline constexpr double kClosedThreshold = 0.1;
// Leakage verdict thresholds on Pearson correlation.
inline constexpr double kLeakySourceCorrelation = 0.3;
inline constexpr double kCleanDrivingCorrelation = 0.7;
inline constexpr double kLowConfidence = 0.5;

struct ApertureEstimate {
    double aperture = 0.0;
    double confidence = 0.0;
    bool low_confidence() const { return confidence < kLowConfidence; }
};

struct ApertureTrace {
    std::vector<double> aperture;
    std::vector<double> confidence;
};

// Maps raw-frame coordinates of the synthetic face into the frame being measured.
struct CropMeta {
    preprocess::BoundingBox box;  // region of the raw frame shown by the measured frame
    int frame_height = 0;
    int frame_width = 0;

    static CropMeta identity(int height, int width) {
        return {{0.0, static_cast<double>(height), 0.0, static_cast<double>(width)}, height, width};
    }
};

// Maps each mouth-band pixel's luminance to an interior weight between the interior colour and the
// frame's own upper-lip level, then sums the weight of the run below the lip line in each column:
// the result is the opening height. Calibrating on the frame tolerates the colour drift of
// generated frames. Frames whose lip is not clearly brighter than the interior get low confidence
// and aperture 0. Requires RGB.
ApertureEstimate estimate_aperture(std::span<const float> frame, int channels, const synthgen::FaceParams& face,
                                   const CropMeta& crop);

ApertureTrace estimate_trace(const Frames& frames, const synthgen::FaceParams& face,
                             const std::vector<preprocess::BoundingBox>& boxes);

struct SilenceReport {
    double silent_score = 0.0;
    double threshold = kClosedThreshold;
    std::vector<bool> closed;
    std::size_t frames() const { return closed.size(); }
};

SilenceReport silence_report(std::span<const double> aperture, double threshold = kClosedThreshold);

// Pearson correlation; 0 when either input has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

enum class AudioPolicy { silent, shuffled };
std::string to_string(AudioPolicy policy);
AudioPolicy parse_audio_policy(const std::string& text);

struct LeakageReport {
    AudioPolicy policy = AudioPolicy::silent;
    double source_correlation = 0.0;   // generated trace vs source clip ground truth
    double driving_correlation = 0.0;  // generated trace vs driving audio ground truth (shuffled only)
    bool clean = false;
    std::string verdict() const { return clean ? "clean" : "leaky"; }
};

LeakageReport leakage_verdict(AudioPolicy policy, std::span<const double> generated, std::span<const double> source,
                              std::span<const double> driving);

// Uniform random permutation with no fixed points. Throws InvalidArgument for n < 2.
std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed);

bool is_derangement(std::span<const std::size_t> perm);

// Mean absolute error restricted to mask == 1 pixels, averaged over frames.
double masked_region_error(const Frames& generated, const Frames& truth, const std::vector<Plane>& masks);

} // namespace highsync::evalkit
