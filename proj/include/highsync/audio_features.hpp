#pragma once

#include "highsync/synthgen.hpp"

#include <vector>

namespace highsync {

// Fixed front end for the trainable audio encoder: each video frame's samples are split into
// `bins` equal sub-windows and their RMS values form the frame's feature row. Silence maps to
// exact zeros. Output is frames x bins, row-major.
inline constexpr int kAudioBins = 16;

std::vector<float> audio_frame_features(const synthgen::SyntheticAudio& audio, double fps, int bins = kAudioBins);

} // namespace highsync
