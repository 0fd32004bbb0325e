#pragma once

#include "highsync/dataset.hpp"
#include "highsync/evalkit.hpp"
#include "highsync/stream.hpp"

#include <functional>
#include <string>
#include <vector>

namespace highsync::model_eval {

// Streams a clip's masked frames and per-frame references, driven by `audio_features`
// (T x bins), and decodes the result. The seed is mixed with the clip index by callers.
Frames generate_frames(Model& model, const ClipTensors& clip, const torch::Tensor& audio_features,
                       const stream::StreamOptions& options, const diffusion::NoiseSchedule& schedule,
                       stream::LatentLedger* ledger = nullptr);

// Aperture trace of generated frames, measured with the clip's face geometry and crop boxes.
evalkit::ApertureTrace generated_trace(const Frames& frames, const ClipTensors& clip);

struct ClipRow {
    std::string id;
    std::string driving_id;  // clip whose audio drove the generation; empty for silence
    int frames = 0;
    double silent_score = 0.0;
    double source_correlation = 0.0;
    double driving_correlation = 0.0;
    double mean_aperture = 0.0;
};

struct SilenceEvaluation {
    double silent_score = 0.0;      // pooled over every frame of every clip
    evalkit::LeakageReport leakage;  // silent-policy audit on the same generations
    std::vector<ClipRow> rows;
};

struct ShuffledEvaluation {
    evalkit::LeakageReport leakage;
    std::vector<std::size_t> permutation;
    std::vector<ClipRow> rows;
};

using Progress = std::function<void(const ClipRow&)>;

// Every clip driven by silent audio (all-zero front-end features) of its own length.
SilenceEvaluation evaluate_silence(Model& model, const std::vector<ClipTensors>& clips,
                                   const stream::StreamOptions& options, const diffusion::NoiseSchedule& schedule,
                                   const Progress& progress = {});

// Clip i driven by the audio of clip sigma(i), sigma a seeded derangement. Correlations are
// pooled over clips. Throws InvalidArgument for fewer than two clips.
ShuffledEvaluation evaluate_shuffled(Model& model, const std::vector<ClipTensors>& clips, std::uint64_t seed,
                                     const stream::StreamOptions& options, const diffusion::NoiseSchedule& schedule,
                                     const Progress& progress = {});

// Mean absolute lower-face error of own-audio generations against the ground-truth crops.
double masked_region_error(Model& model, const std::vector<ClipTensors>& clips, const stream::StreamOptions& options,
                           const diffusion::NoiseSchedule& schedule);

} // namespace highsync::model_eval
