#include "highsync/pipeline.hpp"

#include "highsync/errors.hpp"
#include "highsync/hash.hpp"
#include "highsync/io.hpp"
#include "highsync/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#ifndef HIGHSYNC_GIT_REV
#define HIGHSYNC_GIT_REV "unknown"
#endif

namespace highsync::pipeline {

std::string git_revision() { return HIGHSYNC_GIT_REV; }

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void say(const Log& log, const std::string& text) {
    if (log) log(text);
}

std::string file_hash(const fs::path& path) {
    const auto bytes = io::read_file(path);
    return sha256_hex(bytes);
}

// Runs body(i) for i in [0, n) on up to `jobs` threads. Each index is independent.
void parallel_for(int n, int jobs, const std::function<void(int)>& body) {
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(jobs);
    for (int j = 0; j < jobs; ++j) {
        threads.emplace_back([&, j] {
            try {
                for (int i = j; i < n; i += jobs) body(i);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::string clip_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%04d", i);
    return buf;
}

std::string audio_kind_name(synthgen::AudioKind k) {
    switch (k) {
    case synthgen::AudioKind::silent: return "silent";
    case synthgen::AudioKind::tone_sequence: return "tone_sequence";
    case synthgen::AudioKind::envelope_random: return "envelope_random";
    }
    return "unknown";
}

Json step_json(const trainer::StepRecord& r) {
    return Json{{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"wall_seconds", r.wall_seconds}};
}

Json run_json(const RunRecord& r) {
    return Json{{"command", r.command},
                {"config", r.config},
                {"seeds", r.seeds},
                {"dataset_hash", r.dataset_hash},
                {"checkpoint_hashes", r.checkpoint_hashes},
                {"results", r.results},
                {"tool_version", kToolVersion},
                {"git_revision", git_revision()},
                {"wall_seconds", r.wall_seconds},
                {"peak_cached_latents", r.peak_cached_latents}};
}

Json stream_json(const stream::StreamOptions& o) {
    return Json{{"ddim_steps", o.ddim_steps},
                {"guidance_scale", o.guidance_scale},
                {"seed", o.seed},
                {"boundary", o.boundary == stream::BoundaryMode::overwrite ? "overwrite" : "average"},
                {"use_motion", o.use_motion},
                {"short_video", o.short_video == stream::ShortVideoPolicy::reject ? "reject" : "pad"}};
}

Json stage_json(const trainer::StageConfig& s) {
    return Json{{"stage", s.stage},
                {"steps", s.steps},
                {"batch_size", s.batch_size},
                {"learning_rate", s.learning_rate},
                {"frames_per_sample", s.frames_per_sample},
                {"weight_decay", s.weight_decay},
                {"grad_clip", s.grad_clip},
                {"ref_dropout_rate", s.ref_dropout_rate},
                {"seed", s.seed},
                {"trainable_groups", s.trainable_groups()}};
}

ClipTensors truncate(const ClipTensors& c, int frames) {
    ClipTensors t = c;
    t.frames = c.frames.slice(0, 0, frames);
    t.latents = c.latents.slice(0, 0, frames);
    t.masked_latents = c.masked_latents.slice(0, 0, frames);
    t.audio = c.audio.slice(0, 0, frames);
    t.aperture.resize(frames);
    t.crop_boxes.resize(frames);
    t.masks.resize(frames);
    return t;
}

// Frames (and their masked twins) of every stride-th frame of each prepared clip.
torch::Tensor collect_frames(const std::vector<fs::path>& roots, int stride) {
    std::vector<torch::Tensor> parts;
    for (const auto& root : roots) {
        for (const auto& dir : io::list_clips(root)) {
            const auto p = io::load_prepared(dir);
            auto idx = torch::arange(0, p.clip.frames.count, stride, torch::kInt64);
            parts.push_back(frames_to_tensor(p.clip.frames).index_select(0, idx));
            parts.push_back(frames_to_tensor(p.clip.masked_frames).index_select(0, idx));
        }
    }
    if (parts.empty()) throw PreconditionError("no prepared clips found for autoencoder pretraining");
    return torch::cat(parts, 0);
}

std::string combined_hash(const std::vector<fs::path>& roots) {
    std::string all;
    for (const auto& r : roots) all += hash_tree(r);
    return sha256_hex(all);
}

} // namespace

// ---------------------------------------------------------------------------------------------
// Manifests

Json read_manifest(const fs::path& dir) {
    const auto path = dir / "manifest.json";
    if (!fs::exists(path)) return Json{{"runs", Json::array()}};
    return io::read_json(path);
}

void append_manifest(const fs::path& dir, const RunRecord& record) {
    fs::create_directories(dir);
    auto m = read_manifest(dir);
    if (!m.contains("runs") || !m["runs"].is_array()) {
        throw DecodeError("manifest " + (dir / "manifest.json").string() + " has no run list");
    }
    m["runs"].push_back(run_json(record));
    io::write_json(dir / "manifest.json", m);
}

std::optional<Json> find_run(const fs::path& dir, const std::string& command, const Json& config) {
    const auto m = read_manifest(dir);
    const auto& runs = m["runs"];
    for (auto it = runs.rbegin(); it != runs.rend(); ++it) {
        if ((*it)["command"] == command && (*it)["config"] == config) return *it;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------------------------
// Data

Json to_json(const DatagenConfig& c) {
    return Json{{"clips", c.clips},
                {"duration", c.duration},
                {"fps", c.fps},
                {"size", c.size},
                {"eyebrow_coupling", c.eyebrow_coupling},
                {"audio", audio_kind_name(c.audio)},
                {"seed", c.seed}};
}

void datagen(const DatagenConfig& cfg, const fs::path& out, int jobs) {
    if (cfg.clips < 1) throw InvalidArgument("datagen: need at least one clip");
    if (!(cfg.eyebrow_coupling >= 0.0 && cfg.eyebrow_coupling <= 1.0)) {
        throw InvalidArgument("datagen: eyebrow coupling must lie in [0, 1]");
    }
    parallel_for(cfg.clips, jobs, [&](int i) {
        auto face = synthgen::random_face(mix_seed(cfg.seed, static_cast<std::uint64_t>(i), 0xFACE));
        face.eyebrow_coupling = cfg.eyebrow_coupling;
        const auto audio = synthgen::synth_audio(cfg.audio, cfg.duration, synthgen::kDefaultSampleRate,
                                                 mix_seed(cfg.seed, static_cast<std::uint64_t>(i), 0xA0D1));
        const auto clip = synthgen::render_clip(audio, face, cfg.fps, cfg.size, cfg.size);
        io::save_clip(out / "clips" / clip_name(i), clip, Json{{"id", clip_name(i)}});
    });
    RunRecord rec;
    rec.command = "datagen";
    rec.config = to_json(cfg);
    rec.seeds = Json{{"datagen", cfg.seed}};
    rec.dataset_hash = hash_tree(out);
    append_manifest(out, rec);
}

Json to_json(const PreprocessConfig& c) {
    return Json{{"crop_policy", preprocess::to_string(c.policy)},
                {"mask_codec", preprocess::to_string(c.mask.codec)},
                {"mask_fraction", c.mask.mask_fraction},
                {"lossy_quality", c.mask.lossy_quality},
                {"size", c.size}};
}

void preprocess_clips(const fs::path& in, const fs::path& out, const PreprocessConfig& cfg, int jobs) {
    const auto dirs = io::list_clips(in);
    if (dirs.empty()) throw PreconditionError("no clips under " + (in / "clips").string());
    parallel_for(static_cast<int>(dirs.size()), jobs, [&](int i) {
        const auto clip = io::load_clip(dirs[i]);
        io::PreparedClip p;
        p.clip = preprocess::crop_and_resize(clip, cfg.policy, cfg.size, cfg.mask);
        p.audio = clip.audio;
        p.aperture = clip.aperture;
        p.face = clip.face;
        p.fps = clip.fps;
        p.id = dirs[i].filename().string();
        io::save_prepared(out / "clips" / p.id, p);
    });
    RunRecord rec;
    rec.command = "preprocess";
    rec.config = Json{{"preprocess", to_json(cfg)}, {"input_hash", hash_tree(in)}};
    rec.dataset_hash = hash_tree(out);
    append_manifest(out, rec);
}

// ---------------------------------------------------------------------------------------------
// Models

Json to_json(const PretrainConfig& c) {
    return Json{{"steps", c.ae.steps},
                {"batch_size", c.ae.batch_size},
                {"learning_rate", c.ae.learning_rate},
                {"seed", c.ae.seed},
                {"frame_stride", c.frame_stride},
                {"model", config_to_json(c.model)}};
}

PretrainResult pretrain(const std::vector<fs::path>& data, const std::vector<fs::path>& heldout, const fs::path& out,
                        const PretrainConfig& cfg, const Log& log) {
    const auto start = Clock::now();
    const auto frames = collect_frames(data, cfg.frame_stride);
    say(log, "autoencoder: " + std::to_string(frames.size(0)) + " training images");
    torch::manual_seed(cfg.ae.seed);
    Model model(cfg.model);
    PretrainResult result;
    result.log = trainer::pretrain_autoencoder(model.autoencoder, frames, cfg.ae, [&](const trainer::StepRecord& r) {
        if ((r.step + 1) % 100 == 0) say(log, "autoencoder step " + std::to_string(r.step + 1) + " loss " + std::to_string(r.loss));
    });
    const auto held = collect_frames(heldout.empty() ? data : heldout, cfg.frame_stride);
    result.heldout_error = trainer::reconstruction_error(model.autoencoder, held);
    say(log, "autoencoder held-out error " + std::to_string(result.heldout_error));

    fs::create_directories(out);
    const auto ckpt = out / "autoencoder.ckpt";
    save_checkpoint(model, ckpt, Json{{"stage", 0}, {"heldout_error", result.heldout_error}});
    std::ofstream metrics(out / "metrics.jsonl");
    for (const auto& r : result.log) metrics << step_json(r).dump() << "\n";

    RunRecord rec;
    rec.command = "pretrain-ae";
    rec.config = Json{{"pretrain", to_json(cfg)}, {"data_hash", combined_hash(data)},
                      {"heldout_hash", combined_hash(heldout)}};
    rec.seeds = Json{{"autoencoder", cfg.ae.seed}};
    rec.dataset_hash = combined_hash(data);
    rec.checkpoint_hashes = Json{{"autoencoder.ckpt", file_hash(ckpt)}};
    rec.results = Json{{"heldout_error", result.heldout_error}};
    rec.wall_seconds = seconds_since(start);
    append_manifest(out, rec);
    return result;
}

Json to_json(const TrainConfig& c) {
    return Json{{"stage", stage_json(c.stage)}, {"model", config_to_json(c.model)}, {"init_seed", c.init_seed}};
}

TrainSummary train(const TrainConfig& cfg, const fs::path& data, const fs::path& init, const fs::path& out,
                   const Log& log) {
    cfg.stage.validate();
    cfg.model.validate();
    const bool two = cfg.stage.stage == 2;
    if (!fs::exists(init)) {
        throw PreconditionError(std::string(two ? "stage-1 checkpoint" : "autoencoder checkpoint") +
                                " not found: " + init.string());
    }
    const auto start = Clock::now();
    const auto info = read_checkpoint_info(init);
    const int init_stage = info.header["extra"].value("stage", -1);
    if (two && init_stage != 1) {
        throw PreconditionError("stage 2 needs a stage-1 checkpoint, " + init.string() + " is from stage " +
                                std::to_string(init_stage));
    }
    torch::manual_seed(cfg.init_seed);
    Model model(cfg.model);
    if (two) {
        load_groups(model, init, {"autoencoder", "denoiser", "reference_net", "audio_encoder"});
    } else {
        load_groups(model, init, {"autoencoder"});
    }
    model.set_trainable({});
    model.train(false);

    say(log, "loading " + data.string());
    const auto dataset = load_dataset(data, model.autoencoder, cfg.model.audio_bins);
    const auto schedule = diffusion::NoiseSchedule::linear();

    fs::create_directories(out);
    std::ofstream metrics(out / "metrics.jsonl");
    trainer::TrainCallbacks callbacks;
    callbacks.on_step = [&](const trainer::StepRecord& r) {
        metrics << step_json(r).dump() << "\n";
        if ((r.step + 1) % 50 == 0) {
            metrics.flush();
            say(log, "stage " + std::to_string(cfg.stage.stage) + " step " + std::to_string(r.step + 1) + "/" +
                         std::to_string(cfg.stage.steps) + " loss " + std::to_string(r.loss));
        }
    };
    TrainSummary summary;
    summary.result = trainer::train_stage(model, dataset, cfg.stage, schedule, callbacks);
    for (const auto& id : summary.result.skipped_clips) say(log, "warning: skipped short clip " + id);

    summary.checkpoint = out / "model.ckpt";
    save_checkpoint(model, summary.checkpoint,
                    Json{{"stage", cfg.stage.stage}, {"dataset_hash", dataset.content_hash},
                         {"crop_policy", dataset.policy}, {"mask_codec", dataset.codec}, {"init", file_hash(init)}});

    const auto& res = summary.result;
    auto mean_loss = [&](std::size_t from, std::size_t to) {
        double s = 0.0;
        for (std::size_t i = from; i < to; ++i) s += res.log[i].loss;
        return to > from ? s / static_cast<double>(to - from) : 0.0;
    };
    const std::size_t n = res.log.size();
    Json results{{"stage", cfg.stage.stage},
                 {"steps", static_cast<int>(n)},
                 {"initial_loss", mean_loss(0, std::min<std::size_t>(n, 50))},
                 {"final_loss", mean_loss(n - std::min<std::size_t>(n, 50), n)},
                 {"skipped_clips", res.skipped_clips},
                 {"hashes_before", res.hashes_before},
                 {"hashes_after", res.hashes_after}};
    if (two) {
        const double a = res.step0_loss_without_motion;
        const double b = res.step0_loss_with_motion;
        results["step0_loss_without_motion"] = a;
        results["step0_loss_with_motion"] = b;
        results["step0_relative_difference"] = std::abs(a - b) / std::max(std::abs(a), 1e-30);
    }
    io::write_json(out / "summary.json", results);

    RunRecord rec;
    rec.command = "train";
    rec.config = Json{{"train", to_json(cfg)}, {"data_hash", hash_tree(data)}, {"init_hash", file_hash(init)}};
    rec.seeds = Json{{"init", cfg.init_seed}, {"stage", cfg.stage.seed}};
    rec.dataset_hash = dataset.content_hash;
    rec.checkpoint_hashes = Json{{"init", file_hash(init)}, {"model.ckpt", file_hash(summary.checkpoint)}};
    rec.results = results;
    rec.wall_seconds = seconds_since(start);
    append_manifest(out, rec);
    return summary;
}

// ---------------------------------------------------------------------------------------------
// Evaluation

Json to_json(const EvalConfig& c) {
    return Json{{"stream", stream_json(c.stream)}, {"clips", c.clips}, {"duration", c.duration}, {"seed", c.seed}};
}

std::vector<ClipTensors> load_eval_clips(const fs::path& data, Model& model, const EvalConfig& cfg) {
    const auto dirs = io::list_clips(data);
    if (static_cast<int>(dirs.size()) < cfg.clips) {
        throw PreconditionError(data.string() + " holds " + std::to_string(dirs.size()) + " clips, " +
                                std::to_string(cfg.clips) + " requested");
    }
    std::vector<ClipTensors> clips;
    for (int i = 0; i < cfg.clips; ++i) {
        const auto p = io::load_prepared(dirs[i]);
        const int frames = static_cast<int>(std::lround(cfg.duration * p.fps));
        if (p.clip.frames.count < frames) {
            throw InvalidInput("clip " + p.id + " is shorter than " + std::to_string(cfg.duration) + " s");
        }
        clips.push_back(truncate(clip_tensors(p, model.autoencoder, model.cfg.audio_bins), frames));
    }
    return clips;
}

namespace {

Json rows_json(const std::vector<model_eval::ClipRow>& rows) {
    Json out = Json::array();
    for (const auto& r : rows) {
        Json j{{"id", r.id}, {"frames", r.frames}, {"silent_score", r.silent_score},
               {"source_correlation", r.source_correlation}, {"mean_aperture", r.mean_aperture}};
        if (!r.driving_id.empty()) {
            j["driving_id"] = r.driving_id;
            j["driving_correlation"] = r.driving_correlation;
        }
        out.push_back(j);
    }
    return out;
}

void log_row(const Log& log, const model_eval::ClipRow& r) {
    std::ostringstream s;
    s << r.id << ": silent " << r.silent_score << ", source corr " << r.source_correlation;
    if (!r.driving_id.empty()) s << ", driving corr " << r.driving_correlation;
    say(log, s.str());
}

// A checkpoint counts as untrained when it never went through stage 2.
bool untrained(const CheckpointInfo& info) { return info.header["extra"].value("stage", -1) < 2; }

} // namespace

Json silence_json(const model_eval::SilenceEvaluation& e) {
    return Json{{"silent_score", e.silent_score},
                {"threshold", evalkit::kClosedThreshold},
                {"source_correlation", e.leakage.source_correlation},
                {"verdict", e.leakage.verdict()},
                {"rows", rows_json(e.rows)}};
}

Json shuffled_json(const model_eval::ShuffledEvaluation& e) {
    return Json{{"source_correlation", e.leakage.source_correlation},
                {"driving_correlation", e.leakage.driving_correlation},
                {"verdict", e.leakage.verdict()},
                {"permutation", e.permutation},
                {"rows", rows_json(e.rows)}};
}

Json eval_silence(const fs::path& checkpoint, const fs::path& data, const EvalConfig& cfg, const fs::path& out,
                  const Log& log) {
    const auto start = Clock::now();
    CheckpointInfo info;
    Model model = load_checkpoint(checkpoint, &info);
    model.train(false);
    const auto clips = load_eval_clips(data, model, cfg);
    const auto eval = model_eval::evaluate_silence(model, clips, cfg.stream, diffusion::NoiseSchedule::linear(),
                                                   [&](const model_eval::ClipRow& r) { log_row(log, r); });
    auto report = silence_json(eval);
    report["duration"] = cfg.duration;
    report["flagged_untrained"] = untrained(info);
    fs::create_directories(out);
    io::write_json(out / "report.json", report);

    RunRecord rec;
    rec.command = "eval-silence";
    rec.config = Json{{"eval", to_json(cfg)}, {"data_hash", hash_tree(data)}, {"checkpoint", file_hash(checkpoint)}};
    rec.seeds = Json{{"stream", cfg.stream.seed}};
    rec.dataset_hash = rec.config["data_hash"];
    rec.checkpoint_hashes = Json{{"model", rec.config["checkpoint"]}};
    rec.results = Json{{"silent_score", eval.silent_score}, {"verdict", eval.leakage.verdict()}};
    rec.wall_seconds = seconds_since(start);
    rec.peak_cached_latents = 2 * cfg.stream.ddim_steps + stream::kGroupFrames;
    append_manifest(out, rec);
    return report;
}

Json eval_leakage(const fs::path& checkpoint, const fs::path& data, evalkit::AudioPolicy policy,
                  const EvalConfig& cfg, const fs::path& out, const Log& log) {
    const auto start = Clock::now();
    CheckpointInfo info;
    Model model = load_checkpoint(checkpoint, &info);
    model.train(false);
    const auto clips = load_eval_clips(data, model, cfg);
    const auto schedule = diffusion::NoiseSchedule::linear();
    auto progress = [&](const model_eval::ClipRow& r) { log_row(log, r); };
    Json report;
    if (policy == evalkit::AudioPolicy::silent) {
        report = silence_json(model_eval::evaluate_silence(model, clips, cfg.stream, schedule, progress));
    } else {
        report = shuffled_json(model_eval::evaluate_shuffled(model, clips, cfg.seed, cfg.stream, schedule, progress));
    }
    report["policy"] = evalkit::to_string(policy);
    report["flagged_untrained"] = untrained(info);
    fs::create_directories(out);
    io::write_json(out / "report.json", report);

    RunRecord rec;
    rec.command = "eval-leakage";
    rec.config = Json{{"eval", to_json(cfg)}, {"policy", evalkit::to_string(policy)},
                      {"data_hash", hash_tree(data)}, {"checkpoint", file_hash(checkpoint)}};
    rec.seeds = Json{{"stream", cfg.stream.seed}, {"derangement", cfg.seed}};
    rec.dataset_hash = rec.config["data_hash"];
    rec.checkpoint_hashes = Json{{"model", rec.config["checkpoint"]}};
    rec.results = Json{{"verdict", report["verdict"]}};
    rec.wall_seconds = seconds_since(start);
    rec.peak_cached_latents = 2 * cfg.stream.ddim_steps + stream::kGroupFrames;
    append_manifest(out, rec);
    return report;
}

Json infer(const fs::path& checkpoint, const fs::path& clip, const InferConfig& cfg, const fs::path& out,
           const Log& log) {
    const auto start = Clock::now();
    Model model = load_checkpoint(checkpoint);
    model.train(false);
    const auto prepared = io::load_prepared(clip);
    const auto tensors = clip_tensors(prepared, model.autoencoder, model.cfg.audio_bins);
    const int frames = tensors.length();
    torch::Tensor audio;
    std::string driving = prepared.id;
    if (cfg.silent) {
        audio = torch::zeros_like(tensors.audio);
        driving.clear();
    } else if (!cfg.audio_clip.empty()) {
        const auto other = io::load_prepared(cfg.audio_clip);
        audio = clip_tensors(other, model.autoencoder, model.cfg.audio_bins).audio;
        driving = other.id;
        if (audio.size(0) < frames) {
            audio = torch::cat({audio, torch::zeros({frames - audio.size(0), audio.size(1)})}, 0);
        }
        audio = audio.slice(0, 0, frames);
    } else {
        audio = tensors.audio;
    }
    stream::LatentLedger ledger;
    say(log, "generating " + std::to_string(frames) + " frames");
    const auto video = model_eval::generate_frames(model, tensors, audio, cfg.stream,
                                                   diffusion::NoiseSchedule::linear(), &ledger);
    fs::create_directories(out / "frames");
    for (int t = 0; t < video.count; ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "%04d.png", t);
        io::write_png(out / "frames" / name, video.frame(t), video.height, video.width, video.channels);
    }
    const auto trace = model_eval::generated_trace(video, tensors);
    Json result{{"clip", prepared.id},
                {"driving", cfg.silent ? Json("silent") : Json(driving)},
                {"frames", frames},
                {"generated_aperture", trace.aperture},
                {"confidence", trace.confidence},
                {"source_aperture", tensors.aperture},
                {"silent_score", evalkit::silence_report(trace.aperture).silent_score}};
    io::write_json(out / "trace.json", result);

    RunRecord rec;
    rec.command = "infer";
    rec.config = Json{{"stream", stream_json(cfg.stream)}, {"silent", cfg.silent},
                      {"audio_clip", cfg.audio_clip.string()}, {"clip", clip.string()}};
    rec.seeds = Json{{"stream", cfg.stream.seed}};
    rec.dataset_hash = hash_tree(clip);
    rec.checkpoint_hashes = Json{{"model", file_hash(checkpoint)}};
    rec.results = Json{{"silent_score", result["silent_score"]}};
    rec.wall_seconds = seconds_since(start);
    rec.peak_cached_latents = ledger.peak();
    append_manifest(out, rec);
    return result;
}

// ---------------------------------------------------------------------------------------------
// Ablation

std::vector<AblationRow> AblationConfig::rows() const {
    using preprocess::CropPolicy;
    using preprocess::MaskCodec;
    std::vector<AblationRow> r{
        {"baseline", CropPolicy::per_frame, MaskCodec::lossless, false, true},
        {"preprocess", CropPolicy::max_height, MaskCodec::lossless, false, false},
        {"masked", CropPolicy::per_frame, MaskCodec::lossless, true, false},
        {"both", CropPolicy::max_height, MaskCodec::lossless, true, true},
    };
    if (lossy_row) r.push_back({"lossy", CropPolicy::max_height, MaskCodec::lossy_block, true, false});
    return r;
}

Json to_json(const AblationConfig& c) {
    return Json{{"train_data", to_json(c.train_data)},
                {"test_data", to_json(c.test_data)},
                {"pretrain", to_json(c.pretrain)},
                {"stage1", stage_json(c.stage1)},
                {"stage2", stage_json(c.stage2)},
                {"model", config_to_json(c.model)},
                {"eval", to_json(c.eval)},
                {"reconstruction_clips", c.reconstruction_clips},
                {"lossy_row", c.lossy_row},
                {"seed", c.seed}};
}

namespace {

std::string prepared_name(preprocess::CropPolicy p, preprocess::MaskCodec c) {
    return preprocess::to_string(p) + "_" + preprocess::to_string(c);
}

// Runs `make` unless `dir` records a run of `command` with exactly this config.
template <typename F>
void cached(const fs::path& dir, const std::string& command, const Json& config, const Log& log, F make) {
    if (find_run(dir, command, config)) {
        say(log, "reusing " + dir.string());
        return;
    }
    make();
}

} // namespace

Json ablate(const AblationConfig& cfg, const fs::path& work, int jobs, const Log& log) {
    const auto start = Clock::now();
    const auto rows = cfg.rows();
    const auto data = work / "data";

    // Synthetic clips.
    for (const auto& [name, dc] : {std::pair{"train", cfg.train_data}, std::pair{"test", cfg.test_data}}) {
        const auto dir = data / name;
        cached(dir, "datagen", to_json(dc), log, [&] {
            say(log, std::string("generating ") + name + " clips");
            datagen(dc, dir, jobs);
        });
    }

    // Preprocessed variants needed by the rows.
    std::vector<std::pair<preprocess::CropPolicy, preprocess::MaskCodec>> variants;
    for (const auto& r : rows) {
        std::pair v{r.policy, r.codec};
        if (std::find(variants.begin(), variants.end(), v) == variants.end()) variants.push_back(v);
    }
    auto prepared = [&](preprocess::CropPolicy p, preprocess::MaskCodec c, const std::string& split) {
        return work / "prepared" / prepared_name(p, c) / split;
    };
    for (const auto& [policy, codec] : variants) {
        for (const std::string split : {"train", "test"}) {
            PreprocessConfig pc;
            pc.policy = policy;
            pc.mask.codec = codec;
            pc.mask.mask_fraction = cfg.model.mask_fraction;
            pc.size = cfg.model.image_size;
            const auto in = data / split;
            const auto out = prepared(policy, codec, split);
            const Json key{{"preprocess", to_json(pc)}, {"input_hash", hash_tree(in)}};
            cached(out, "preprocess", key, log, [&] {
                say(log, "preprocessing " + out.string());
                preprocess_clips(in, out, pc, jobs);
            });
        }
    }

    // Shared autoencoder over both crop policies.
    const std::vector<fs::path> ae_train{prepared(preprocess::CropPolicy::per_frame, preprocess::MaskCodec::lossless, "train"),
                                         prepared(preprocess::CropPolicy::max_height, preprocess::MaskCodec::lossless, "train")};
    const std::vector<fs::path> ae_test{prepared(preprocess::CropPolicy::per_frame, preprocess::MaskCodec::lossless, "test"),
                                        prepared(preprocess::CropPolicy::max_height, preprocess::MaskCodec::lossless, "test")};
    for (std::size_t i = 0; i < ae_train.size(); ++i) {
        if (!fs::exists(ae_train[i])) {
            // The lossless variants are always part of the matrix, but guard against custom rows.
            throw ConfigurationError("ablation needs the lossless per_frame and max_height variants");
        }
    }
    auto pcfg = cfg.pretrain;
    pcfg.model = cfg.model;
    pcfg.ae.seed = mix_seed(cfg.seed, 0xAE);
    const auto ae_dir = work / "autoencoder";
    const Json ae_key{{"pretrain", to_json(pcfg)}, {"data_hash", combined_hash(ae_train)},
                      {"heldout_hash", combined_hash(ae_test)}};
    cached(ae_dir, "pretrain-ae", ae_key, log, [&] { pretrain(ae_train, ae_test, ae_dir, pcfg, log); });
    const auto ae_ckpt = ae_dir / "autoencoder.ckpt";

    // Stage 1 per preprocessed variant, stage 2 per row.
    auto stage_cfg = [&](const trainer::StageConfig& base, std::uint64_t tag, bool masked) {
        TrainConfig tc;
        tc.stage = base;
        tc.stage.seed = mix_seed(cfg.seed, tag);
        tc.model = cfg.model;
        tc.model.masked_attention = masked;
        tc.init_seed = mix_seed(cfg.seed, tag, 0x1417);
        return tc;
    };
    auto run_train = [&](const TrainConfig& tc, const fs::path& data_dir, const fs::path& init, const fs::path& out) {
        const Json key{{"train", to_json(tc)}, {"data_hash", hash_tree(data_dir)}, {"init_hash", file_hash(init)}};
        cached(out, "train", key, log, [&] { train(tc, data_dir, init, out, log); });
        return out / "model.ckpt";
    };
    std::map<std::string, fs::path> stage1;
    for (const auto& [policy, codec] : variants) {
        const auto name = prepared_name(policy, codec);
        stage1[name] = run_train(stage_cfg(cfg.stage1, 1, true), prepared(policy, codec, "train"), ae_ckpt,
                                 work / "stage1" / name);
    }

    Json report_rows = Json::array();
    for (const auto& row : rows) {
        const auto name = prepared_name(row.policy, row.codec);
        const auto ckpt = run_train(stage_cfg(cfg.stage2, 2, row.masked_attention), prepared(row.policy, row.codec, "train"),
                                    stage1[name], work / "stage2" / row.name);
        const auto test = prepared(row.policy, row.codec, "test");
        const auto eval_dir = work / "eval" / row.name;

        const auto silence_dir = eval_dir / "silence";
        const Json sil_key{{"eval", to_json(cfg.eval)}, {"data_hash", hash_tree(test)}, {"checkpoint", file_hash(ckpt)}};
        cached(silence_dir, "eval-silence", sil_key, log, [&] {
            say(log, row.name + ": silence test");
            eval_silence(ckpt, test, cfg.eval, silence_dir, log);
        });
        const auto silence = io::read_json(silence_dir / "report.json");

        Json shuffled = nullptr;
        if (row.shuffled_audit) {
            const auto dir = eval_dir / "shuffled";
            const Json key{{"eval", to_json(cfg.eval)}, {"policy", "shuffled"}, {"data_hash", hash_tree(test)},
                           {"checkpoint", file_hash(ckpt)}};
            cached(dir, "eval-leakage", key, log, [&] {
                say(log, row.name + ": shuffled-audio audit");
                eval_leakage(ckpt, test, evalkit::AudioPolicy::shuffled, cfg.eval, dir, log);
            });
            shuffled = io::read_json(dir / "report.json");
        }

        const auto rec_dir = eval_dir / "reconstruction";
        auto rec_eval = cfg.eval;
        rec_eval.clips = cfg.reconstruction_clips;
        const Json rec_key{{"eval", to_json(rec_eval)}, {"data_hash", hash_tree(test)}, {"checkpoint", file_hash(ckpt)}};
        cached(rec_dir, "eval-reconstruction", rec_key, log, [&] {
            say(log, row.name + ": masked-region reconstruction");
            const auto t0 = Clock::now();
            Model model = load_checkpoint(ckpt);
            model.train(false);
            const auto clips = load_eval_clips(test, model, rec_eval);
            const double err = model_eval::masked_region_error(model, clips, rec_eval.stream,
                                                               diffusion::NoiseSchedule::linear());
            io::write_json(rec_dir / "report.json", Json{{"masked_region_error", err}, {"clips", rec_eval.clips}});
            RunRecord rec;
            rec.command = "eval-reconstruction";
            rec.config = rec_key;
            rec.results = Json{{"masked_region_error", err}};
            rec.wall_seconds = seconds_since(t0);
            append_manifest(rec_dir, rec);
        });
        const auto recon = io::read_json(rec_dir / "report.json");
        const auto summary = io::read_json(work / "stage2" / row.name / "summary.json");

        Json r{{"name", row.name},
               {"crop_policy", preprocess::to_string(row.policy)},
               {"mask_codec", preprocess::to_string(row.codec)},
               {"masked_attention", row.masked_attention},
               {"silent_score", silence["silent_score"]},
               {"silent_source_correlation", silence["source_correlation"]},
               {"silent_verdict", silence["verdict"]},
               {"masked_region_error", recon["masked_region_error"]},
               {"stage2_step0_relative_difference", summary["step0_relative_difference"]},
               {"shuffled", shuffled}};
        report_rows.push_back(r);
        say(log, row.name + ": silence score " + std::to_string(silence["silent_score"].get<double>()));
    }

    auto score = [&](const std::string& name) -> std::optional<double> {
        for (const auto& r : report_rows) {
            if (r["name"] == name) return r["silent_score"].get<double>();
        }
        return std::nullopt;
    };
    Json checks = Json::object();
    const auto both = score("both"), pre = score("preprocess"), masked = score("masked"), base = score("baseline");
    checks["strict_ordering"] = *both > *pre && *pre > *masked && *masked > *base;
    checks["both_at_least_0_90"] = *both >= 0.90;
    checks["baseline_at_most_0_50"] = *base <= 0.50;
    if (const auto lossy = score("lossy")) checks["lossy_worse_than_lossless"] = *lossy < *both;

    Json report{{"rows", report_rows}, {"checks", checks}, {"config", to_json(cfg)}};
    const auto out = work / "report";
    fs::create_directories(out);
    io::write_json(out / "report.json", report);
    {
        std::ofstream md(out / "report.md");
        md << render_report(report);
    }
    RunRecord rec;
    rec.command = "ablate";
    rec.config = to_json(cfg);
    rec.seeds = Json{{"ablation", cfg.seed}};
    rec.dataset_hash = hash_tree(data / "train");
    rec.results = checks;
    rec.wall_seconds = seconds_since(start);
    append_manifest(out, rec);
    return report;
}

std::string render_report(const Json& report) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(3);
    s << "| configuration | crop | mask codec | masked attention | silence score | silent src corr | "
         "shuffled src corr | shuffled drv corr | masked-region MAE |\n";
    s << "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : report.at("rows")) {
        s << "| " << r["name"].get<std::string>() << " | " << r["crop_policy"].get<std::string>() << " | "
          << r["mask_codec"].get<std::string>() << " | " << (r["masked_attention"].get<bool>() ? "on" : "off") << " | "
          << r["silent_score"].get<double>() << " | " << r["silent_source_correlation"].get<double>() << " | ";
        if (r["shuffled"].is_null()) {
            s << "- | - | ";
        } else {
            s << r["shuffled"]["source_correlation"].get<double>() << " | "
              << r["shuffled"]["driving_correlation"].get<double>() << " | ";
        }
        s << r["masked_region_error"].get<double>() << " |\n";
    }
    s << "\n";
    for (const auto& [k, v] : report.at("checks").items()) {
        s << "- " << k << ": " << (v.get<bool>() ? "yes" : "no") << "\n";
    }
    return s.str();
}

} // namespace highsync::pipeline
