#pragma once

#include "highsync/dataset.hpp"
#include "highsync/model.hpp"
#include "highsync/preprocess.hpp"
#include "highsync/synthgen.hpp"

// Small models and clips shared by the torch test binaries.
namespace toy {

inline highsync::nets::ModelConfig tiny_config() {
    highsync::nets::ModelConfig c;
    c.image_size = 32;
    c.ae_width = 8;
    c.base_width = 8;
    c.groups = 4;
    c.heads = 2;
    c.audio_dim = 16;
    return c;
}

// A rendered, cropped and encoded clip of `frames` frames.
inline highsync::ClipTensors clip(highsync::Model& model, std::uint64_t seed, int frames) {
    using namespace highsync;
    const double fps = synthgen::kDefaultFps;
    auto face = synthgen::random_face(seed);
    face.eyebrow_coupling = 1.0;
    const auto audio = synthgen::synth_audio(synthgen::AudioKind::envelope_random, frames / fps,
                                             synthgen::kDefaultSampleRate, seed);
    const auto raw = synthgen::render_clip(audio, face, fps, 64, 64);
    io::PreparedClip p;
    p.clip = preprocess::crop_and_resize(raw, preprocess::CropPolicy::max_height, model.cfg.image_size,
                                         {model.cfg.mask_fraction});
    p.audio = raw.audio;
    p.aperture = raw.aperture;
    p.face = raw.face;
    p.fps = fps;
    p.id = "toy_" + std::to_string(seed);
    return clip_tensors(p, model.autoencoder, model.cfg.audio_bins);
}

inline highsync::Dataset dataset(highsync::Model& model, int clips, int frames) {
    highsync::Dataset d;
    for (int i = 0; i < clips; ++i) d.clips.push_back(clip(model, 100 + i, frames));
    return d;
}

} // namespace toy
