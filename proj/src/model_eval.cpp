#include "highsync/model_eval.hpp"

#include "highsync/errors.hpp"
#include "highsync/rng.hpp"

#include <numeric>

namespace highsync::model_eval {

Frames generate_frames(Model& model, const ClipTensors& clip, const torch::Tensor& audio_features,
                       const stream::StreamOptions& options, const diffusion::NoiseSchedule& schedule,
                       stream::LatentLedger* ledger) {
    if (audio_features.size(0) != clip.length()) {
        throw InvalidArgument("generate_frames: driving audio covers " + std::to_string(audio_features.size(0)) +
                              " frames, clip " + clip.id + " has " + std::to_string(clip.length()));
    }
    torch::NoGradGuard guard;
    stream::StreamInputs in{clip.masked_latents, clip.latents, audio_features};
    std::vector<torch::Tensor> decoded;
    auto sink = [&](const stream::GroupRange& range, int first, int end, const torch::Tensor& z) {
        decoded.push_back(model.autoencoder->decode(z.slice(0, first - range.start, end - range.start)));
    };
    stream::generate_streaming(model, in, options, schedule, sink, ledger);
    return tensor_to_frames(torch::cat(decoded, 0));
}

evalkit::ApertureTrace generated_trace(const Frames& frames, const ClipTensors& clip) {
    return evalkit::estimate_trace(frames, clip.face, clip.crop_boxes);
}

namespace {

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

stream::StreamOptions for_clip(const stream::StreamOptions& options, std::size_t index) {
    auto o = options;
    o.seed = mix_seed(options.seed, index, 0xC11D);
    return o;
}

} // namespace

SilenceEvaluation evaluate_silence(Model& model, const std::vector<ClipTensors>& clips,
                                   const stream::StreamOptions& options, const diffusion::NoiseSchedule& schedule,
                                   const Progress& progress) {
    if (clips.empty()) throw InvalidArgument("evaluate_silence: no clips");
    SilenceEvaluation out;
    std::vector<double> generated, source;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& c = clips[i];
        const auto silent = torch::zeros_like(c.audio);
        const auto trace = generated_trace(generate_frames(model, c, silent, for_clip(options, i), schedule), c);
        const auto report = evalkit::silence_report(trace.aperture);
        ClipRow row;
        row.id = c.id;
        row.frames = c.length();
        row.silent_score = report.silent_score;
        row.source_correlation = evalkit::pearson(trace.aperture, c.aperture);
        row.mean_aperture = mean(trace.aperture);
        out.rows.push_back(row);
        if (progress) progress(row);
        generated.insert(generated.end(), trace.aperture.begin(), trace.aperture.end());
        source.insert(source.end(), c.aperture.begin(), c.aperture.end());
    }
    out.silent_score = evalkit::silence_report(generated).silent_score;
    out.leakage = evalkit::leakage_verdict(evalkit::AudioPolicy::silent, generated, source, {});
    return out;
}

ShuffledEvaluation evaluate_shuffled(Model& model, const std::vector<ClipTensors>& clips, std::uint64_t seed,
                                     const stream::StreamOptions& options, const diffusion::NoiseSchedule& schedule,
                                     const Progress& progress) {
    if (clips.size() < 2) throw InvalidArgument("evaluate_shuffled: the shuffled policy needs at least two clips");
    ShuffledEvaluation out;
    out.permutation = evalkit::derangement(clips.size(), seed);
    std::vector<double> generated, source, driving;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& c = clips[i];
        const auto& d = clips[out.permutation[i]];
        // Driving audio is cut or zero-extended to the source length.
        const int n = c.length();
        auto audio = torch::zeros_like(c.audio);
        const int shared = std::min(n, d.length());
        audio.slice(0, 0, shared).copy_(d.audio.slice(0, 0, shared));
        std::vector<double> drive(d.aperture.begin(), d.aperture.begin() + shared);
        drive.resize(n, 0.0);

        const auto trace = generated_trace(generate_frames(model, c, audio, for_clip(options, i), schedule), c);
        ClipRow row;
        row.id = c.id;
        row.driving_id = d.id;
        row.frames = n;
        row.silent_score = evalkit::silence_report(trace.aperture).silent_score;
        row.source_correlation = evalkit::pearson(trace.aperture, c.aperture);
        row.driving_correlation = evalkit::pearson(trace.aperture, drive);
        row.mean_aperture = mean(trace.aperture);
        out.rows.push_back(row);
        if (progress) progress(row);
        generated.insert(generated.end(), trace.aperture.begin(), trace.aperture.end());
        source.insert(source.end(), c.aperture.begin(), c.aperture.end());
        driving.insert(driving.end(), drive.begin(), drive.end());
    }
    out.leakage = evalkit::leakage_verdict(evalkit::AudioPolicy::shuffled, generated, source, driving);
    return out;
}

double masked_region_error(Model& model, const std::vector<ClipTensors>& clips, const stream::StreamOptions& options,
                           const diffusion::NoiseSchedule& schedule) {
    if (clips.empty()) throw InvalidArgument("masked_region_error: no clips");
    double total = 0.0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& c = clips[i];
        const auto generated = generate_frames(model, c, c.audio, for_clip(options, i), schedule);
        total += evalkit::masked_region_error(generated, tensor_to_frames(c.frames), c.masks);
    }
    return total / static_cast<double>(clips.size());
}

} // namespace highsync::model_eval
