#include "highsync/stream.hpp"

#include "highsync/errors.hpp"
#include "highsync/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace highsync::stream {

void LatentLedger::acquire(std::int64_t frames) {
    live_ += frames;
    peak_ = std::max(peak_, live_);
}

void LatentLedger::release(std::int64_t frames) {
    if (frames > live_) throw ConfigurationError("latent ledger released more than it holds");
    live_ -= frames;
}

torch::Tensor frame_noise(std::uint64_t seed, int frame, int channels, int size) {
    auto gen = at::detail::createCPUGenerator(mix_seed(seed, static_cast<std::uint64_t>(frame), 0x5EED));
    return torch::randn({channels, size, size}, gen, torch::kFloat32);
}

diffusion::EpsFn make_eps_fn(Model& model, const torch::Tensor& masked, const std::vector<torch::Tensor>& ref,
                             const torch::Tensor& audio_tokens, bool use_motion) {
    nets::MotionStackImpl* motion = use_motion ? model.motion.get() : nullptr;
    auto denoiser = model.denoiser;
    return [denoiser, masked, ref, audio_tokens, motion](const torch::Tensor& z, int t, bool conditional) mutable {
        auto tt = torch::full({z.size(0)}, t, torch::kInt64);
        return denoiser->forward(z, masked, tt, conditional ? ref : std::vector<torch::Tensor>{}, audio_tokens,
                                 motion);
    };
}

namespace {

// Repeats the last frame until the sequence holds `frames` entries.
torch::Tensor pad_frames(const torch::Tensor& t, int frames) {
    if (t.size(0) >= frames) return t;
    std::vector<std::int64_t> shape(t.sizes().begin(), t.sizes().end());
    shape[0] = frames - t.size(0);
    return torch::cat({t, t.slice(0, t.size(0) - 1).expand(shape).contiguous()}, 0);
}

} // namespace

StreamResult generate_streaming(Model& model, const StreamInputs& inputs, const StreamOptions& options,
                                const diffusion::NoiseSchedule& schedule, const FrameSink& sink,
                                LatentLedger* ledger) {
    const auto total = static_cast<int>(inputs.masked_latents.size(0));
    if (inputs.ref_latents.size(0) != total || inputs.audio_features.size(0) != total) {
        throw InvalidArgument("generate_streaming: masked latents, references and audio must cover the same frames");
    }
    if (options.use_motion && model.cfg.frames != kGroupFrames) {
        throw ConfigurationError("generate_streaming: motion modules were built for " +
                                 std::to_string(model.cfg.frames) + "-frame sequences");
    }
    const auto groups = plan_groups(total, options.short_video);
    const auto plan = diffusion::DdimPlan::make(schedule, options.ddim_steps);
    const int padded = std::max(total, kGroupFrames);
    const int channels = static_cast<int>(inputs.masked_latents.size(1));
    const int size = static_cast<int>(inputs.masked_latents.size(2));

    torch::NoGradGuard guard;
    LatentLedger local;
    LatentLedger& counter = ledger != nullptr ? *ledger : local;

    const auto masked = pad_frames(inputs.masked_latents, padded);
    const auto refs = pad_frames(inputs.ref_latents, padded);
    // Audio tokens are computed once for the whole video so windows may span group boundaries.
    std::vector<int> all(padded);
    for (int i = 0; i < padded; ++i) all[i] = i;
    const auto audio = model.audio_encoder->forward(
        nets::audio_windows(pad_frames(inputs.audio_features, padded), all, model.cfg.window_radius));

    StreamResult result;
    result.latents = torch::empty({padded, channels, size, size});
    std::vector<torch::Tensor> cache;  // previous group's last frames at every step
    int cache_first = -1;              // video index of the first cached frame
    int done = 0;                      // frames [0, done) are final

    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto range = groups[g];
        const bool last = g + 1 == groups.size();
        counter.acquire(kGroupFrames);

        std::vector<torch::Tensor> noise;
        for (int f = range.start; f < range.end; ++f) noise.push_back(frame_noise(options.seed, f, channels, size));
        const auto ref = model.reference_net->forward(refs.slice(0, range.start, range.end));
        const auto eps = make_eps_fn(model, masked.slice(0, range.start, range.end), ref,
                                     audio.slice(0, range.start, range.end), options.use_motion);

        if (!cache.empty() && static_cast<int>(cache.size()) != plan.steps()) {
            throw ConfigurationError("boundary cache does not match the timestep plan");
        }
        const int inject = cache.empty() ? -1 : cache_first - range.start;
        std::vector<torch::Tensor> next(last ? 0 : plan.steps());
        diffusion::StepHook hook = [&](int step, torch::Tensor& z) {
            if (inject >= 0) {
                auto slot = z.slice(0, inject, inject + kOverlapFrames);
                if (options.boundary == BoundaryMode::overwrite) {
                    slot.copy_(cache[step]);
                } else {
                    slot.copy_(0.5 * (slot + cache[step]));
                }
                cache[step] = torch::Tensor();
                counter.release(kOverlapFrames);
            }
            if (!last) {
                next[step] = z.slice(0, kGroupFrames - kOverlapFrames, kGroupFrames).clone();
                counter.acquire(kOverlapFrames);
            }
        };
        auto z = diffusion::ddim_sample(torch::stack(noise), eps, plan, schedule, options.guidance_scale, hook);

        // Frames already produced by an earlier group keep the earlier value.
        const int first_new = std::max(done, range.start);
        auto fresh = z.slice(0, first_new - range.start, range.size());
        result.latents.slice(0, first_new, range.end).copy_(fresh);
        if (sink) sink(range, first_new, std::min(range.end, total), z);
        done = range.end;
        cache = std::move(next);
        cache_first = range.end - kOverlapFrames;
        counter.release(kGroupFrames);
        ++result.groups;
    }
    result.latents = result.latents.slice(0, 0, total);
    result.peak_cached_latents = counter.peak();
    return result;
}

} // namespace highsync::stream
