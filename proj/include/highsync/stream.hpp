#pragma once

#include "highsync/diffusion.hpp"
#include "highsync/model.hpp"
#include "highsync/stream_plan.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace highsync::stream {

// Per-frame inputs of a whole video.
struct StreamInputs {
    torch::Tensor masked_latents;  // T x c x h x w
    torch::Tensor ref_latents;     // T x c x h x w, each frame's own reference
    torch::Tensor audio_features;  // T x bins front-end rows of the driving audio
};

enum class BoundaryMode { overwrite, average };

struct StreamOptions {
    int ddim_steps = 20;
    double guidance_scale = 1.5;
    std::uint64_t seed = 0;
    BoundaryMode boundary = BoundaryMode::overwrite;
    bool use_motion = true;
    ShortVideoPolicy short_video = ShortVideoPolicy::reject;
};

// Counts retained latent frames (the group in flight plus the boundary cache).
class LatentLedger {
public:
    void acquire(std::int64_t frames);
    void release(std::int64_t frames);
    std::int64_t live() const { return live_; }
    std::int64_t peak() const { return peak_; }

private:
    std::int64_t live_ = 0;
    std::int64_t peak_ = 0;
};

// Initial noise for one video frame, a pure function of (seed, frame index). Overlapped frames
// therefore start from the same noise in both groups.
torch::Tensor frame_noise(std::uint64_t seed, int frame, int channels, int size);

// Noise predictor over one group: conditional calls use the reference features, unconditional
// calls drop them. Audio tokens are always present.
diffusion::EpsFn make_eps_fn(Model& model, const torch::Tensor& masked, const std::vector<torch::Tensor>& ref,
                             const torch::Tensor& audio_tokens, bool use_motion);

struct StreamResult {
    torch::Tensor latents;  // T x c x h x w final latents
    int groups = 0;
    std::int64_t peak_cached_latents = 0;
};

// Called after each group with its range, the video frames [first_new, end_new) it contributes and
// the group's full final latents (12 frames, including those an earlier group already produced).
using FrameSink = std::function<void(const GroupRange& range, int first_new, int end_new, const torch::Tensor& latents)>;

// Generates the video group by group. Only the boundary cache (the previous group's last two
// frames at every DDIM step) crosses group boundaries.
StreamResult generate_streaming(Model& model, const StreamInputs& inputs, const StreamOptions& options,
                                const diffusion::NoiseSchedule& schedule, const FrameSink& sink = {},
                                LatentLedger* ledger = nullptr);

} // namespace highsync::stream
