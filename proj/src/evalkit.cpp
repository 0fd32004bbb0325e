#include "highsync/evalkit.hpp"

#include "highsync/errors.hpp"
#include "highsync/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

namespace highsync::evalkit {

namespace {

// Weight below which a pixel ends an interior run.
constexpr double kRunWeight = 0.1;

double luminance(const float* rgb) { return 0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]; }

double luminance(const std::array<float, 3>& rgb) { return luminance(rgb.data()); }

} // namespace

ApertureEstimate estimate_aperture(std::span<const float> frame, int channels, const synthgen::FaceParams& face,
                                   const CropMeta& crop) {
    if (channels != 3) {
        throw InvalidArgument("estimate_aperture: RGB frames required");
    }
    const double sy = crop.frame_height / crop.box.height();
    const double sx = crop.frame_width / crop.box.width();
    auto to_row = [&](double raw) { return (raw - crop.box.top) * sy; };
    auto at = [&](int y, int x) { return luminance(&frame[(static_cast<std::size_t>(y) * crop.frame_width + x) * 3]); };

    // Vertical band: from one pixel above the upper lip to one below the deepest possible opening.
    // Only interior weight is summed, so the lower lip need not be inside; stopping early keeps
    // the chin outline (background pixels) of small faces out of the band.
    const double raw_y0 = face.mouth_center_y - face.lip_thickness - 1.0;
    const double raw_y1 = face.mouth_center_y + face.max_mouth_height + 1.0;
    // Horizontal band: mouth interior with a margin so anti-aliased side edges are excluded.
    const double raw_x0 = face.center_x - 0.5 * face.mouth_width + 1.5;
    const double raw_x1 = face.center_x + 0.5 * face.mouth_width - 1.5;

    const int y0 = std::clamp(static_cast<int>(std::floor(to_row(raw_y0))), 0, crop.frame_height);
    const int y1 = std::clamp(static_cast<int>(std::ceil(to_row(raw_y1))), 0, crop.frame_height);
    const int x0 = std::clamp(static_cast<int>(std::ceil((raw_x0 - crop.box.left) * sx)), 0, crop.frame_width);
    const int x1 = std::clamp(static_cast<int>(std::floor((raw_x1 - crop.box.left) * sx)), 0, crop.frame_width);
    if (y1 <= y0 || x1 <= x0) {
        return {0.0, 0.0};
    }

    // The upper lip never moves, so its luminance in this very frame calibrates the lip level.
    // Generated frames drift in colour; a fixed palette would misread them.
    const double lip_mid = to_row(face.mouth_center_y - 0.5 * face.lip_thickness);
    const int lip_row = std::clamp(static_cast<int>(std::floor(lip_mid)), 0, crop.frame_height - 1);
    std::vector<double> lip_levels;
    for (int x = x0; x < x1; ++x) lip_levels.push_back(at(lip_row, x));
    std::nth_element(lip_levels.begin(), lip_levels.begin() + lip_levels.size() / 2, lip_levels.end());
    const double lip_level = lip_levels[lip_levels.size() / 2];
    const double interior_level = luminance(face.mouth_interior);
    const double palette_contrast = luminance(face.lip) - interior_level;
    const double contrast = lip_level - interior_level;
    // Full confidence once the lip stands at least half the palette contrast above the interior.
    const double confidence = std::clamp(contrast / (0.5 * palette_contrast), 0.0, 1.0);
    if (confidence < kLowConfidence) {
        return {0.0, confidence};
    }

    // Interior weight is linear in luminance between the interior and the calibrated lip level,
    // so anti-aliased interior/lip edges contribute their exact coverage. Per column only the
    // contiguous run that starts at the lip line counts: dark specks elsewhere in the band are
    // not an opening.
    auto weight = [&](int y, int x) { return std::clamp((lip_level - at(y, x)) / contrast, 0.0, 1.0); };
    const int seam0 = std::clamp(static_cast<int>(std::floor(to_row(face.mouth_center_y - 1.0))), y0, y1);
    const int seam1 = std::clamp(static_cast<int>(std::ceil(to_row(face.mouth_center_y + 1.0))), y0, y1);
    double interior_rows = 0.0;
    for (int x = x0; x < x1; ++x) {
        int y = seam0;
        while (y < seam1 && weight(y, x) < kRunWeight) ++y;
        if (y == seam1) continue;
        // The edge pixels on either side of the run carry its anti-aliased fraction.
        if (y > y0) interior_rows += weight(y - 1, x);
        for (; y < y1; ++y) {
            const double w = weight(y, x);
            interior_rows += w;
            if (w < kRunWeight) break;
        }
    }
    const double height_raw = interior_rows / (x1 - x0) / sy;
    return {std::clamp(height_raw / face.max_mouth_height, 0.0, 1.0), confidence};
}

ApertureTrace estimate_trace(const Frames& frames, const synthgen::FaceParams& face,
                             const std::vector<preprocess::BoundingBox>& boxes) {
    if (static_cast<int>(boxes.size()) != frames.count) {
        throw InvalidArgument("estimate_trace: one crop box per frame required");
    }
    ApertureTrace trace;
    trace.aperture.reserve(frames.count);
    trace.confidence.reserve(frames.count);
    for (int t = 0; t < frames.count; ++t) {
        const CropMeta meta{boxes[t], frames.height, frames.width};
        const auto est = estimate_aperture(frames.frame(t), frames.channels, face, meta);
        trace.aperture.push_back(est.aperture);
        trace.confidence.push_back(est.confidence);
    }
    return trace;
}

SilenceReport silence_report(std::span<const double> aperture, double threshold) {
    SilenceReport report;
    report.threshold = threshold;
    report.closed.reserve(aperture.size());
    std::size_t closed = 0;
    for (double a : aperture) {
        const bool c = a < threshold;
        report.closed.push_back(c);
        closed += c ? 1 : 0;
    }
    report.silent_score = aperture.empty() ? 0.0 : static_cast<double>(closed) / static_cast<double>(aperture.size());
    return report;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InvalidArgument("pearson: length mismatch");
    }
    const auto n = static_cast<double>(a.size());
    if (a.size() < 2) return 0.0;
    // A constant trace has zero variance; test it exactly rather than through the rounded mean.
    auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    if (constant(a) || constant(b)) return 0.0;
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::string to_string(AudioPolicy policy) { return policy == AudioPolicy::silent ? "silent" : "shuffled"; }

AudioPolicy parse_audio_policy(const std::string& text) {
    if (text == "silent") return AudioPolicy::silent;
    if (text == "shuffled") return AudioPolicy::shuffled;
    throw InvalidArgument("unknown audio policy: " + text);
}

LeakageReport leakage_verdict(AudioPolicy policy, std::span<const double> generated, std::span<const double> source,
                              std::span<const double> driving) {
    LeakageReport r;
    r.policy = policy;
    r.source_correlation = pearson(generated, source);
    if (policy == AudioPolicy::shuffled) {
        r.driving_correlation = pearson(generated, driving);
        r.clean = r.source_correlation < kLeakySourceCorrelation && r.driving_correlation > kCleanDrivingCorrelation;
    } else {
        r.clean = r.source_correlation < kLeakySourceCorrelation;
    }
    return r;
}

std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed) {
    if (n < 2) {
        throw InvalidArgument("derangement: need at least 2 elements");
    }
    Rng rng(mix_seed(seed, 0xDE7A));
    std::vector<std::size_t> perm(n);
    do {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t i = n - 1; i > 0; --i) {
            std::swap(perm[i], perm[rng.below(i + 1)]);
        }
    } while (!is_derangement(perm));
    return perm;
}

bool is_derangement(std::span<const std::size_t> perm) {
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] == i || perm[i] >= perm.size() || seen[perm[i]]) return false;
        seen[perm[i]] = true;
    }
    return true;
}

double masked_region_error(const Frames& generated, const Frames& truth, const std::vector<Plane>& masks) {
    if (!generated.same_shape(truth) || static_cast<int>(masks.size()) != generated.count) {
        throw InvalidArgument("masked_region_error: shape mismatch");
    }
    double total = 0.0;
    for (int t = 0; t < generated.count; ++t) {
        double acc = 0.0;
        std::size_t n = 0;
        const auto& m = masks[t];
        for (int y = 0; y < generated.height; ++y) {
            for (int x = 0; x < generated.width; ++x) {
                if (m.at(y, x) < 0.5f) continue;
                for (int c = 0; c < generated.channels; ++c) {
                    acc += std::abs(generated.at(t, y, x, c) - truth.at(t, y, x, c));
                    ++n;
                }
            }
        }
        total += n > 0 ? acc / static_cast<double>(n) : 0.0;
    }
    return generated.count > 0 ? total / generated.count : 0.0;
}

} // namespace highsync::evalkit
