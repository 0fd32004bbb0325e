#include "highsync/audio_features.hpp"

#include "highsync/errors.hpp"

#include <algorithm>
#include <cmath>

namespace highsync {

std::vector<float> audio_frame_features(const synthgen::SyntheticAudio& audio, double fps, int bins) {
    if (bins <= 0 || !(fps > 0.0)) {
        throw InvalidArgument("audio_frame_features: bins and fps must be positive");
    }
    const int frames = synthgen::frame_count(audio, fps);
    const auto n = static_cast<long long>(audio.samples.size());
    const double per_frame = audio.sample_rate / fps;
    std::vector<float> out(static_cast<std::size_t>(frames) * bins, 0.0f);
    for (int t = 0; t < frames; ++t) {
        const double start = t * per_frame;
        for (int b = 0; b < bins; ++b) {
            const long long lo = std::min(n, std::llround(start + b * per_frame / bins));
            const long long hi = std::min(n, std::llround(start + (b + 1) * per_frame / bins));
            if (hi <= lo) continue;
            double acc = 0.0;
            for (long long i = lo; i < hi; ++i) acc += static_cast<double>(audio.samples[i]) * audio.samples[i];
            out[static_cast<std::size_t>(t) * bins + b] = static_cast<float>(std::sqrt(acc / (hi - lo)));
        }
    }
    return out;
}

} // namespace highsync
