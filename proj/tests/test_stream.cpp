#include "highsync/errors.hpp"
#include "highsync/stream.hpp"

#include "toy.hpp"

#include <doctest.h>

using namespace highsync;
using namespace highsync::stream;

namespace {

// Tiny model whose motion modules are active (random instead of zero output projections).
Model active_model() {
    torch::manual_seed(11);
    Model m(toy::tiny_config());
    torch::NoGradGuard guard;
    for (auto& p : m.motion->parameters()) p.normal_(0.0, 0.05);
    m.train(false);
    return m;
}

StreamInputs random_inputs(const Model& m, int frames) {
    torch::manual_seed(frames);
    const int s = m.cfg.latent_size();
    return {torch::randn({frames, m.cfg.latent_channels, s, s}), torch::randn({frames, m.cfg.latent_channels, s, s}),
            torch::rand({frames, m.cfg.audio_bins})};
}

StreamOptions fast(int steps = 3) {
    StreamOptions o;
    o.ddim_steps = steps;
    o.seed = 21;
    return o;
}

bool identical(const torch::Tensor& a, const torch::Tensor& b) { return torch::equal(a, b); }

} // namespace

TEST_CASE("frame noise is a pure function of seed and frame") {
    CHECK(identical(frame_noise(1, 5, 4, 8), frame_noise(1, 5, 4, 8)));
    CHECK_FALSE(identical(frame_noise(1, 5, 4, 8), frame_noise(1, 6, 4, 8)));
    CHECK_FALSE(identical(frame_noise(1, 5, 4, 8), frame_noise(2, 5, 4, 8)));
}

TEST_CASE("latent ledger tracks live and peak counts") {
    LatentLedger l;
    l.acquire(12);
    l.acquire(2);
    l.release(12);
    CHECK(l.live() == 2);
    CHECK(l.peak() == 14);
    CHECK_THROWS_AS(l.release(3), ConfigurationError);
}

TEST_CASE("a 12-frame stream equals one ddim_sample call bit for bit") {
    auto model = active_model();
    const auto in = random_inputs(model, 12);
    const auto opt = fast();
    const auto schedule = diffusion::NoiseSchedule::linear();
    const auto streamed = generate_streaming(model, in, opt, schedule);
    CHECK(streamed.groups == 1);

    torch::NoGradGuard guard;
    std::vector<int> all(12);
    for (int i = 0; i < 12; ++i) all[i] = i;
    const auto audio = model.audio_encoder->forward(nets::audio_windows(in.audio_features, all, model.cfg.window_radius));
    const auto ref = model.reference_net->forward(in.ref_latents);
    std::vector<torch::Tensor> noise;
    for (int f = 0; f < 12; ++f) noise.push_back(frame_noise(opt.seed, f, model.cfg.latent_channels, model.cfg.latent_size()));
    const auto direct = diffusion::ddim_sample(torch::stack(noise), make_eps_fn(model, in.masked_latents, ref, audio, true),
                                               diffusion::DdimPlan::make(schedule, opt.ddim_steps), schedule,
                                               opt.guidance_scale);
    CHECK(identical(streamed.latents, direct));
}

TEST_CASE("overlapped frames are bit-identical across groups") {
    auto model = active_model();
    const auto in = random_inputs(model, 25);  // groups [0,12) [10,22) [13,25)
    std::vector<std::pair<GroupRange, torch::Tensor>> groups;
    auto sink = [&](const GroupRange& r, int, int, const torch::Tensor& z) { groups.emplace_back(r, z.clone()); };
    const auto schedule = diffusion::NoiseSchedule::linear();
    const auto out = generate_streaming(model, in, fast(), schedule, sink);
    REQUIRE(groups.size() == 3);
    CHECK(out.latents.size(0) == 25);
    for (std::size_t g = 1; g < groups.size(); ++g) {
        const auto& [prev_r, prev] = groups[g - 1];
        const auto& [r, z] = groups[g];
        const int first = prev_r.end - kOverlapFrames;
        CHECK(identical(z.slice(0, first - r.start, first - r.start + kOverlapFrames),
                        prev.slice(0, first - prev_r.start, first - prev_r.start + kOverlapFrames)));
    }
    // The assembled video keeps the earlier group's value for shared frames.
    CHECK(identical(out.latents.slice(0, 0, 12), groups[0].second));

    auto avg = fast();
    avg.boundary = BoundaryMode::average;
    std::vector<torch::Tensor> avg_groups;
    generate_streaming(model, in, avg, schedule,
                       [&](const GroupRange&, int, int, const torch::Tensor& z) { avg_groups.push_back(z.clone()); });
    CHECK_FALSE(identical(avg_groups[1].slice(0, 0, 2), avg_groups[0].slice(0, 10, 12)));
}

TEST_CASE("cached latents stay constant with video length") {
    auto model = active_model();
    const auto schedule = diffusion::NoiseSchedule::linear();
    auto opt = fast(2);
    opt.guidance_scale = 1.0;
    const auto short_run = generate_streaming(model, random_inputs(model, 24), opt, schedule);
    const auto long_run = generate_streaming(model, random_inputs(model, 480), opt, schedule);
    CHECK(long_run.groups == 48);
    CHECK(long_run.peak_cached_latents == short_run.peak_cached_latents);
    CHECK(long_run.peak_cached_latents == kGroupFrames + kOverlapFrames * opt.ddim_steps);
}

TEST_CASE("streaming is deterministic") {
    auto model = active_model();
    const auto in = random_inputs(model, 22);
    const auto schedule = diffusion::NoiseSchedule::linear();
    CHECK(identical(generate_streaming(model, in, fast(), schedule).latents,
                    generate_streaming(model, in, fast(), schedule).latents));
}

TEST_CASE("short videos are rejected or padded") {
    auto model = active_model();
    const auto in = random_inputs(model, 5);
    const auto schedule = diffusion::NoiseSchedule::linear();
    CHECK_THROWS_AS(generate_streaming(model, in, fast(), schedule), InvalidArgument);
    auto pad = fast();
    pad.short_video = ShortVideoPolicy::pad;
    const auto out = generate_streaming(model, in, pad, schedule);
    CHECK(out.latents.size(0) == 5);
    CHECK(out.groups == 1);
}

TEST_CASE("mismatched input lengths are rejected") {
    auto model = active_model();
    auto in = random_inputs(model, 14);
    in.audio_features = in.audio_features.slice(0, 0, 13);
    CHECK_THROWS_AS(generate_streaming(model, in, fast(), diffusion::NoiseSchedule::linear()), InvalidArgument);
}
