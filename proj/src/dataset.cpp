#include "highsync/dataset.hpp"

#include "highsync/audio_features.hpp"
#include "highsync/errors.hpp"
#include "highsync/hash.hpp"

#include <cstring>

namespace highsync {

torch::Tensor frames_to_tensor(const Frames& f) {
    auto t = torch::from_blob(const_cast<float*>(f.data.data()), {f.count, f.height, f.width, f.channels}, torch::kFloat32);
    return t.permute({0, 3, 1, 2}).contiguous();
}

Frames tensor_to_frames(const torch::Tensor& t) {
    auto hwc = t.detach().to(torch::kFloat32).permute({0, 2, 3, 1}).contiguous();
    Frames f(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), static_cast<int>(hwc.size(2)),
             static_cast<int>(hwc.size(3)));
    std::memcpy(f.data.data(), hwc.data_ptr<float>(), f.data.size() * sizeof(float));
    return f;
}

torch::Tensor encode_frames(nets::Autoencoder& ae, const torch::Tensor& frames, int chunk) {
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> parts;
    for (std::int64_t i = 0; i < frames.size(0); i += chunk) {
        parts.push_back(ae->encode(frames.slice(0, i, std::min<std::int64_t>(i + chunk, frames.size(0)))));
    }
    return torch::cat(parts, 0);
}

ClipTensors clip_tensors(const io::PreparedClip& p, nets::Autoencoder& ae, int audio_bins) {
    ClipTensors c;
    c.id = p.id;
    c.frames = frames_to_tensor(p.clip.frames);
    c.latents = encode_frames(ae, c.frames);
    c.masked_latents = encode_frames(ae, frames_to_tensor(p.clip.masked_frames));
    const auto feats = audio_frame_features(p.audio, p.fps, audio_bins);
    const auto t = static_cast<std::int64_t>(feats.size() / audio_bins);
    if (t != c.frames.size(0)) {
        throw InvalidInput("clip " + p.id + ": audio covers " + std::to_string(t) + " frames, video has " +
                           std::to_string(c.frames.size(0)));
    }
    c.audio = torch::tensor(feats).view({t, audio_bins});
    c.aperture = p.aperture;
    c.face = p.face;
    c.crop_boxes = p.clip.crop_boxes;
    c.masks = p.clip.masks;
    return c;
}

Dataset load_dataset(const std::filesystem::path& root, nets::Autoencoder& ae, int audio_bins) {
    const auto dirs = io::list_clips(root);
    if (dirs.empty()) {
        throw PreconditionError("no prepared clips under " + (root / "clips").string());
    }
    Dataset d;
    d.content_hash = hash_tree(root);
    for (const auto& dir : dirs) {
        const auto p = io::load_prepared(dir);
        if (d.clips.empty()) {
            d.policy = preprocess::to_string(p.clip.policy);
            d.codec = preprocess::to_string(p.clip.mask_options.codec);
        }
        d.clips.push_back(clip_tensors(p, ae, audio_bins));
    }
    return d;
}

} // namespace highsync
