#pragma once

#include "highsync/frames.hpp"
#include "highsync/io.hpp"
#include "highsync/nets.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace highsync {

// Frames <-> T x C x H x W tensors.
torch::Tensor frames_to_tensor(const Frames& frames);
Frames tensor_to_frames(const torch::Tensor& t);
// Encodes in chunks without gradients.
torch::Tensor encode_frames(nets::Autoencoder& ae, const torch::Tensor& frames, int chunk = 64);

// A prepared clip held as tensors, with latents encoded by the frozen autoencoder.
struct ClipTensors {
    std::string id;
    torch::Tensor frames;          // T x C x H x W (ground truth crops)
    torch::Tensor latents;         // T x c x h x w
    torch::Tensor masked_latents;  // T x c x h x w
    torch::Tensor audio;           // T x bins front-end features of the clip's own audio
    std::vector<double> aperture;
    synthgen::FaceParams face;
    std::vector<preprocess::BoundingBox> crop_boxes;
    std::vector<Plane> masks;
    int length() const { return static_cast<int>(frames.size(0)); }
};

ClipTensors clip_tensors(const io::PreparedClip& prepared, nets::Autoencoder& ae, int audio_bins);

struct Dataset {
    std::vector<ClipTensors> clips;
    std::string content_hash;  // hash of the prepared directory
    std::string policy;
    std::string codec;
};

// Loads every prepared clip under root/clips. Throws PreconditionError if there are none.
Dataset load_dataset(const std::filesystem::path& root, nets::Autoencoder& ae, int audio_bins);

} // namespace highsync
