#include <doctest.h>

#include "highsync/audio_features.hpp"
#include "highsync/errors.hpp"
#include "highsync/evalkit.hpp"
#include "highsync/preprocess.hpp"
#include "highsync/rng.hpp"
#include "highsync/stream_plan.hpp"
#include "highsync/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace highsync;
using namespace highsync::evalkit;

namespace {

synthgen::SyntheticClip clip_with(const std::vector<double>& aperture, std::uint64_t seed = 0) {
    const auto face = synthgen::random_face(seed);
    const auto audio = synthgen::synth_audio(synthgen::AudioKind::silent, aperture.size() / 25.0, 16000, 0);
    return synthgen::render_clip_with_apertures(audio, aperture, face, 25.0, 64, 64);
}

} // namespace

TEST_CASE("estimator on rendered frames at a known aperture") {
    const auto face = synthgen::FaceParams{};
    std::vector<float> frame(64 * 64 * 3);
    synthgen::render_frame(face, 0.7, 64, 64, 3, frame);
    CHECK(std::abs(estimate_aperture(frame, 3, face, CropMeta::identity(64, 64)).aperture - 0.7) < 0.02);
    synthgen::render_frame(face, 0.0, 64, 64, 3, frame);
    CHECK(std::abs(estimate_aperture(frame, 3, face, CropMeta::identity(64, 64)).aperture) < 0.02);
}

TEST_CASE("all-black frame gives zero with low confidence") {
    const std::vector<float> black(64 * 64 * 3, 0.0f);
    const auto est = estimate_aperture(black, 3, synthgen::FaceParams{}, CropMeta::identity(64, 64));
    CHECK(est.aperture == 0.0);
    CHECK(est.low_confidence());
}

TEST_CASE("estimator tolerates darkened, noisy frames") {
    Rng rng(12);
    for (int k = 0; k < 20; ++k) {
        const auto face = synthgen::random_face(100 + k);
        const double aperture = rng.uniform(0.0, 1.0);
        std::vector<float> frame(64 * 64 * 3);
        synthgen::render_frame(face, aperture, 64, 64, 3, frame);
        const double gain = rng.uniform(0.6, 0.9);
        for (auto& v : frame) v = static_cast<float>(std::clamp(v * gain + rng.uniform(-0.03, 0.03), 0.0, 1.0));
        const auto est = estimate_aperture(frame, 3, face, CropMeta::identity(64, 64));
        CHECK_FALSE(est.low_confidence());
        CHECK(std::abs(est.aperture - aperture) < 0.1);
    }
}

TEST_CASE("estimator works through both crop policies") {
    Rng rng(5);
    std::vector<double> truth;
    for (int i = 0; i < 40; ++i) truth.push_back(rng.uniform());
    const auto clip = clip_with(truth, 17);
    for (auto policy : {preprocess::CropPolicy::per_frame, preprocess::CropPolicy::max_height}) {
        const auto out = preprocess::crop_and_resize(clip, policy, 64);
        const auto trace = estimate_trace(out.frames, clip.face, out.crop_boxes);
        for (int t = 0; t < clip.frames.count; ++t) {
            CHECK(std::abs(trace.aperture[t] - truth[t]) < 0.05);
        }
    }
}

TEST_CASE("silence report counts frames below the threshold") {
    const std::vector<double> a{0.0, 0.05, 0.099, 0.1, 0.5, 1.0};
    const auto r = silence_report(a);
    CHECK(r.frames() == 6);
    CHECK(r.silent_score == doctest::Approx(0.5));
    CHECK(r.closed == std::vector<bool>{true, true, true, false, false, false});
    CHECK(silence_report(a, 0.6).silent_score == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("ground-truth closed video scores 1.0") {
    const auto clip = clip_with(std::vector<double>(125, 0.0), 3);
    const auto trace = estimate_trace(clip.frames, clip.face,
                                      std::vector<preprocess::BoundingBox>(125, {0.0, 64.0, 0.0, 64.0}));
    CHECK(silence_report(trace.aperture).silent_score == 1.0);
}

TEST_CASE("silence score is monotone in the threshold") {
    Rng rng(9);
    std::vector<double> a;
    for (int i = 0; i < 200; ++i) a.push_back(rng.uniform());
    double prev = -1.0;
    for (double tau = 0.0; tau <= 1.0; tau += 0.05) {
        const double s = silence_report(a, tau).silent_score;
        CHECK(s >= prev);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
        prev = s;
    }
}

TEST_CASE("pearson against a textbook two-pass computation") {
    Rng rng(3);
    std::vector<double> x(50);
    std::vector<double> y(50);
    for (int i = 0; i < 50; ++i) {
        x[i] = rng.uniform();
        y[i] = 0.3 * x[i] + rng.uniform();
    }
    double mx = 0, my = 0;
    for (int i = 0; i < 50; ++i) { mx += x[i] / 50; my += y[i] / 50; }
    double num = 0, dx = 0, dy = 0;
    for (int i = 0; i < 50; ++i) {
        num += (x[i] - mx) * (y[i] - my);
        dx += (x[i] - mx) * (x[i] - mx);
        dy += (y[i] - my) * (y[i] - my);
    }
    CHECK(pearson(x, y) == doctest::Approx(num / std::sqrt(dx * dy)).epsilon(1e-12));
    CHECK(pearson(x, x) == doctest::Approx(1.0));
    std::vector<double> flat(50, 0.2);
    CHECK(pearson(x, flat) == 0.0);
    CHECK_THROWS_AS(pearson(x, std::vector<double>(3)), InvalidArgument);
}

TEST_CASE("identity stub is leaky and oracle stub is clean") {
    Rng rng(21);
    std::vector<double> source;
    std::vector<double> driving;
    for (int i = 0; i < 125; ++i) {
        source.push_back(rng.uniform());
        driving.push_back(rng.uniform());
    }
    // Identity "model" copies the source frames, so its trace is the source trace.
    const auto identity = leakage_verdict(AudioPolicy::silent, source, source, {});
    CHECK(identity.source_correlation == doctest::Approx(1.0));
    CHECK(identity.verdict() == "leaky");

    // Oracle renders from the driving audio; under silence that is an all-closed trace.
    const std::vector<double> closed(125, 0.0);
    const auto oracle_silent = leakage_verdict(AudioPolicy::silent, closed, source, {});
    CHECK(oracle_silent.source_correlation == 0.0);
    CHECK(oracle_silent.clean);

    const auto oracle_shuffled = leakage_verdict(AudioPolicy::shuffled, driving, source, driving);
    CHECK(oracle_shuffled.driving_correlation == doctest::Approx(1.0));
    CHECK(std::abs(oracle_shuffled.source_correlation) < 0.3);
    CHECK(oracle_shuffled.clean);

    const auto copy_shuffled = leakage_verdict(AudioPolicy::shuffled, source, source, driving);
    CHECK_FALSE(copy_shuffled.clean);
}

TEST_CASE("derangements have no fixed points and are seed-deterministic") {
    for (std::size_t n : {2u, 3u, 5u, 20u}) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto p = derangement(n, seed);
            CHECK(is_derangement(p));
            CHECK(p == derangement(n, seed));
        }
    }
    CHECK(derangement(2, 0) == std::vector<std::size_t>{1, 0});
    CHECK_THROWS_AS(derangement(1, 0), InvalidArgument);
    CHECK_FALSE(is_derangement(std::vector<std::size_t>{0, 2, 1}));
    CHECK_FALSE(is_derangement(std::vector<std::size_t>{1, 1, 0}));
}

TEST_CASE("derangements of three are uniform over both choices") {
    int first = 0;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
        if (derangement(3, seed) == std::vector<std::size_t>{1, 2, 0}) ++first;
    }
    // Binomial(2000, 0.5): 3 sigma is about 67.
    CHECK(std::abs(first - 1000) < 67);
}

TEST_CASE("masked region error only looks under the mask") {
    Frames a(2, 4, 4, 1);
    Frames b(2, 4, 4, 1);
    Plane m(4, 4);
    for (int x = 0; x < 4; ++x) m.at(3, x) = 1.0f;
    b.at(0, 0, 0, 0) = 1.0f;  // outside the mask
    b.at(1, 3, 1, 0) = 0.8f;  // inside
    const double err = masked_region_error(a, b, {m, m});
    CHECK(err == doctest::Approx((0.0 + 0.8 / 4.0) / 2.0));
    CHECK_THROWS_AS(masked_region_error(a, b, {m}), InvalidArgument);
}

TEST_CASE("audio front end matches per-bin RMS and is zero on silence") {
    const auto audio = synthgen::synth_audio(synthgen::AudioKind::envelope_random, 1.0, 16000, 4);
    const auto feats = audio_frame_features(audio, 25.0, 16);
    REQUIRE(feats.size() == 25 * 16);
    // 640 samples per frame, 40 per bin.
    for (int t : {0, 7, 24}) {
        for (int b : {0, 5, 15}) {
            double acc = 0.0;
            for (int i = 0; i < 40; ++i) {
                const double s = audio.samples[t * 640 + b * 40 + i];
                acc += s * s;
            }
            CHECK(feats[t * 16 + b] == doctest::Approx(std::sqrt(acc / 40.0)).epsilon(1e-6));
        }
    }
    const auto silent = audio_frame_features(synthgen::synth_audio(synthgen::AudioKind::silent, 1.0, 16000, 0), 25.0);
    CHECK(std::all_of(silent.begin(), silent.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("group planning") {
    using stream::plan_groups;
    auto g = plan_groups(12);
    REQUIRE(g.size() == 1);
    CHECK((g[0].start == 0 && g[0].end == 12));
    g = plan_groups(22);
    REQUIRE(g.size() == 2);
    CHECK((g[1].start == 10 && g[1].end == 22));
    g = plan_groups(25);
    REQUIRE(g.size() == 3);
    CHECK((g[2].start == 13 && g[2].end == 25));
    CHECK(g[1].end - g[2].start == 9);
    CHECK_THROWS_AS(plan_groups(11), InvalidArgument);
    g = plan_groups(5, stream::ShortVideoPolicy::pad);
    CHECK((g.size() == 1 && g[0].end == 12));
}

TEST_CASE("group plans tile every length with at least two frames of overlap") {
    for (int total = 12; total <= 500; ++total) {
        const auto g = stream::plan_groups(total);
        CHECK(g.front().start == 0);
        CHECK(g.back().end == total);
        for (std::size_t i = 0; i < g.size(); ++i) {
            CHECK(g[i].size() == 12);
            if (i > 0) {
                CHECK(g[i - 1].end - g[i].start >= 2);
                CHECK(g[i].start > g[i - 1].start);
            }
        }
    }
}
