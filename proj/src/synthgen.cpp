#include "highsync/synthgen.hpp"

#include "highsync/errors.hpp"
#include "highsync/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace highsync::synthgen {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kSuperSamples = 4;

void fill_tone_sequence(std::vector<float>& out, double sample_rate, Rng& rng) {
    const auto n = out.size();
    const auto ramp = static_cast<std::size_t>(0.008 * sample_rate);
    std::size_t pos = 0;
    bool voiced = rng.bernoulli(0.5);
    while (pos < n) {
        const auto len = static_cast<std::size_t>(rng.uniform(0.08, 0.32) * sample_rate);
        const auto end = std::min(n, pos + std::max<std::size_t>(len, 1));
        const double amp = rng.uniform(0.35, 0.9);
        const double freq = rng.uniform(120.0, 360.0);
        if (voiced) {
            const std::size_t seg = end - pos;
            for (std::size_t i = 0; i < seg; ++i) {
                double env = 1.0;
                if (ramp > 0) {
                    env = std::min({1.0, static_cast<double>(i) / ramp, static_cast<double>(seg - 1 - i) / ramp});
                }
                out[pos + i] = static_cast<float>(amp * env * std::sin(kTwoPi * freq * i / sample_rate));
            }
        }
        pos = end;
        voiced = !voiced;
    }
}

void fill_envelope_random(std::vector<float>& out, double sample_rate, Rng& rng) {
    const auto n = out.size();
    constexpr double knot_spacing = 0.1;
    const auto knots = static_cast<std::size_t>(n / (knot_spacing * sample_rate)) + 2;
    std::vector<double> level(knots);
    for (auto& v : level) {
        v = rng.bernoulli(0.3) ? 0.0 : rng.uniform(0.1, 0.9);
    }
    const double f1 = rng.uniform(110.0, 220.0);
    const double f2 = rng.uniform(300.0, 600.0);
    const double phase = rng.uniform(0.0, kTwoPi);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        const double u = t / knot_spacing;
        const auto k = static_cast<std::size_t>(u);
        const double frac = u - static_cast<double>(k);
        const double w = 0.5 - 0.5 * std::cos(std::numbers::pi * frac);
        const double env = level[k] * (1.0 - w) + level[k + 1] * w;
        const double carrier = 0.6 * std::sin(kTwoPi * f1 * t) + 0.4 * std::sin(kTwoPi * f2 * t + phase);
        out[i] = static_cast<float>(env * carrier);
    }
}

double rect_coverage(int px, int py, double x0, double x1, double y0, double y1) {
    const double w = std::min(px + 1.0, x1) - std::max<double>(px, x0);
    const double h = std::min(py + 1.0, y1) - std::max<double>(py, y0);
    return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

bool inside_face(const FaceParams& f, double aperture, double x, double y) {
    const double pivot = f.jaw_pivot();
    double yy = y;
    if (y > pivot) {
        const double closed = f.closed_jaw_bottom();
        yy = pivot + (y - pivot) * (closed - pivot) / (f.jaw_bottom(aperture) - pivot);
    }
    const double dx = x - f.center_x;
    const double dy = yy - f.center_y;
    return dx * dx + dy * dy <= f.head_radius * f.head_radius;
}

bool inside_circle(double cx, double cy, double r, double x, double y) {
    return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
}

} // namespace

SyntheticAudio synth_audio(AudioKind kind, double duration, double sample_rate, std::uint64_t seed) {
    if (!(duration > 0.0)) {
        throw InvalidArgument("synth_audio: duration must be positive, got " + std::to_string(duration));
    }
    if (!(sample_rate >= 1000.0)) {
        throw InvalidArgument("synth_audio: sample_rate must be >= 1000, got " + std::to_string(sample_rate));
    }
    SyntheticAudio audio;
    audio.sample_rate = sample_rate;
    audio.duration = duration;
    audio.samples.assign(static_cast<std::size_t>(std::llround(sample_rate * duration)), 0.0f);

    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
    switch (kind) {
    case AudioKind::silent:
        break;
    case AudioKind::tone_sequence:
        fill_tone_sequence(audio.samples, sample_rate, rng);
        break;
    case AudioKind::envelope_random:
        fill_envelope_random(audio.samples, sample_rate, rng);
        break;
    }
    return audio;
}

int frame_count(const SyntheticAudio& audio, double fps) {
    return static_cast<int>(std::llround(fps * audio.duration));
}

std::vector<double> frame_rms(const SyntheticAudio& audio, double fps) {
    if (!(fps > 0.0)) {
        throw InvalidArgument("frame_rms: fps must be positive");
    }
    const int frames = frame_count(audio, fps);
    const auto n = static_cast<long long>(audio.samples.size());
    const double per_frame = audio.sample_rate / fps;
    std::vector<double> rms(frames, 0.0);
    for (int t = 0; t < frames; ++t) {
        const long long lo = std::min(n, std::llround(t * per_frame));
        const long long hi = std::min(n, std::llround((t + 1) * per_frame));
        if (hi <= lo) {
            continue;
        }
        double acc = 0.0;
        for (long long i = lo; i < hi; ++i) {
            acc += static_cast<double>(audio.samples[i]) * audio.samples[i];
        }
        rms[t] = std::sqrt(acc / static_cast<double>(hi - lo));
    }
    return rms;
}

std::vector<double> audio_envelope(const SyntheticAudio& audio, double fps) {
    const auto rms = frame_rms(audio, fps);
    const auto n = rms.size();
    std::vector<double> env(n);
    for (std::size_t t = 0; t < n; ++t) {
        const double prev = rms[t == 0 ? 0 : t - 1];
        const double next = rms[t + 1 < n ? t + 1 : t];
        env[t] = 0.25 * prev + 0.5 * rms[t] + 0.25 * next;
    }
    return env;
}

std::vector<double> audio_to_aperture(const SyntheticAudio& audio, double fps) {
    auto env = audio_envelope(audio, fps);
    for (auto& v : env) {
        v = std::clamp(v / kApertureCalibration, 0.0, 1.0);
    }
    return env;
}

void validate_face(const FaceParams& f, int height, int width) {
    auto fail = [](const std::string& what) { throw InvalidArgument("face does not fit: " + what); };
    if (f.head_top() < 0.0) fail("head top above frame");
    if (f.center_x - f.head_radius < 0.0 || f.center_x + f.head_radius > width) fail("head wider than frame");
    if (f.jaw_bottom(1.0) > height) fail("open jaw below frame");
    if (f.eyebrow_top(1.0) < 0.0) fail("eyebrow above frame");
    if (f.jaw_pivot() <= f.center_y) fail("jaw pivot must lie below head centre");
    if (f.jaw_pivot() < f.eye_row() + f.eye_radius) fail("eye region overlaps the jaw");
    if (f.mouth_center_y - f.lip_thickness <= f.jaw_pivot()) fail("upper lip above jaw pivot");
    if (f.mouth_center_y + f.max_mouth_height + f.lip_thickness >= f.closed_jaw_bottom()) fail("lower lip below jaw");
    if (f.mouth_width >= 2.0 * f.head_radius) fail("mouth wider than head");
    if (f.eyebrow_coupling < 0.0 || f.eyebrow_coupling > 1.0) fail("eyebrow_coupling outside [0, 1]");
    if (f.max_mouth_height <= 0.0) fail("max_mouth_height must be positive");
}

void render_frame(const FaceParams& f, double aperture, int height, int width, int channels,
                  std::span<float> out) {
    if (channels != 1 && channels != 3) {
        throw InvalidArgument("render_frame: channels must be 1 or 3");
    }
    aperture = std::clamp(aperture, 0.0, 1.0);
    const double left_eye_x = f.center_x - 0.5 * f.eye_spacing;
    const double right_eye_x = f.center_x + 0.5 * f.eye_spacing;
    const double brow_top = f.eyebrow_top(aperture);
    const double brow_half = f.eye_radius + 1.0;
    const double mouth_x0 = f.center_x - 0.5 * f.mouth_width;
    const double mouth_x1 = f.center_x + 0.5 * f.mouth_width;
    const double open = aperture * f.max_mouth_height;
    const double upper_lip0 = f.mouth_center_y - f.lip_thickness;
    const double interior1 = f.mouth_center_y + open;
    const double lower_lip1 = interior1 + f.lip_thickness;

    constexpr double step = 1.0 / kSuperSamples;
    constexpr double weight = 1.0 / (kSuperSamples * kSuperSamples);

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double face_cov = 0.0;
            double eye_cov = 0.0;
            for (int sy = 0; sy < kSuperSamples; ++sy) {
                const double yy = y + (sy + 0.5) * step;
                for (int sx = 0; sx < kSuperSamples; ++sx) {
                    const double xx = x + (sx + 0.5) * step;
                    if (inside_face(f, aperture, xx, yy)) {
                        face_cov += weight;
                        if (inside_circle(left_eye_x, f.eye_row(), f.eye_radius, xx, yy) ||
                            inside_circle(right_eye_x, f.eye_row(), f.eye_radius, xx, yy)) {
                            eye_cov += weight;
                        }
                    }
                }
            }
            // Rectangles are disjoint, so their exact area coverages add.
            const double brow = rect_coverage(x, y, left_eye_x - brow_half, left_eye_x + brow_half, brow_top, brow_top + 2.0) +
                                rect_coverage(x, y, right_eye_x - brow_half, right_eye_x + brow_half, brow_top, brow_top + 2.0);
            const double lip = rect_coverage(x, y, mouth_x0, mouth_x1, upper_lip0, f.mouth_center_y) +
                               rect_coverage(x, y, mouth_x0, mouth_x1, interior1, lower_lip1);
            const double interior = rect_coverage(x, y, mouth_x0, mouth_x1, f.mouth_center_y, interior1);
            const double base = 1.0 - brow - lip - interior;

            float rgb[3];
            for (int c = 0; c < 3; ++c) {
                double v = f.background[c] * (1.0 - face_cov) + f.skin[c] * (face_cov - eye_cov) + f.eye[c] * eye_cov;
                v = v * base + f.eyebrow[c] * brow + f.lip[c] * lip + f.mouth_interior[c] * interior;
                rgb[c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
            const std::size_t idx = (static_cast<std::size_t>(y) * width + x) * channels;
            if (channels == 3) {
                out[idx] = rgb[0];
                out[idx + 1] = rgb[1];
                out[idx + 2] = rgb[2];
            } else {
                out[idx] = 0.299f * rgb[0] + 0.587f * rgb[1] + 0.114f * rgb[2];
            }
        }
    }
}

SyntheticClip render_clip_with_apertures(const SyntheticAudio& audio, std::vector<double> aperture,
                                         const FaceParams& face, double fps, int height, int width,
                                         int channels) {
    if (height < 32 || width < 32) {
        throw InvalidArgument("render_clip: frame must be at least 32x32");
    }
    validate_face(face, height, width);
    SyntheticClip clip;
    clip.fps = fps;
    clip.audio = audio;
    clip.face = face;
    clip.aperture = std::move(aperture);
    const int frames = static_cast<int>(clip.aperture.size());
    clip.frames = Frames(frames, height, width, channels);
    clip.jaw_bottom.resize(frames);
    for (int t = 0; t < frames; ++t) {
        clip.aperture[t] = std::clamp(clip.aperture[t], 0.0, 1.0);
        render_frame(face, clip.aperture[t], height, width, channels, clip.frames.frame(t));
        clip.jaw_bottom[t] = face.jaw_bottom(clip.aperture[t]);
    }
    return clip;
}

SyntheticClip render_clip(const SyntheticAudio& audio, const FaceParams& face, double fps, int height,
                          int width, int channels) {
    return render_clip_with_apertures(audio, audio_to_aperture(audio, fps), face, fps, height, width, channels);
}

FaceParams random_face(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xFACE));
    FaceParams f;
    f.head_radius = rng.uniform(20.5, 23.0);
    f.eye_offset = rng.uniform(13.5, 16.0);
    f.eyebrow_gap = rng.uniform(2.0, 5.0);
    f.eye_spacing = rng.uniform(14.0, 18.0);
    f.mouth_width = rng.uniform(10.0, 14.0);

    f.background = {static_cast<float>(rng.uniform(0.05, 0.5)), static_cast<float>(rng.uniform(0.05, 0.5)),
                    static_cast<float>(rng.uniform(0.1, 0.6))};
    const double tone = rng.uniform(0.0, 1.0);
    f.skin = {static_cast<float>(0.95 - 0.35 * tone), static_cast<float>(0.78 - 0.35 * tone),
              static_cast<float>(0.66 - 0.32 * tone)};
    f.lip = {static_cast<float>(rng.uniform(0.6, 0.85)), static_cast<float>(rng.uniform(0.15, 0.32)),
             static_cast<float>(rng.uniform(0.2, 0.4))};
    f.eye = {static_cast<float>(rng.uniform(0.05, 0.2)), static_cast<float>(rng.uniform(0.05, 0.25)),
             static_cast<float>(rng.uniform(0.1, 0.4))};
    const double brow = rng.uniform(0.1, 0.35);
    f.eyebrow = {static_cast<float>(brow), static_cast<float>(0.6 * brow), static_cast<float>(0.35 * brow)};
    return f;
}

} // namespace highsync::synthgen
