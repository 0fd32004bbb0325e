#pragma once

#include "highsync/model_eval.hpp"
#include "highsync/preprocess.hpp"
#include "highsync/synthgen.hpp"
#include "highsync/trainer.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace highsync::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "1.0.0";
std::string git_revision();

using Log = std::function<void(const std::string&)>;

// One entry of an artifact directory's manifest.json. The file holds {"runs": [...]} and is
// only ever appended to.
struct RunRecord {
    std::string command;
    Json config = Json::object();
    Json seeds = Json::object();
    std::string dataset_hash;
    Json checkpoint_hashes = Json::object();
    Json results = Json::object();
    double wall_seconds = 0.0;
    std::int64_t peak_cached_latents = 0;
};

void append_manifest(const fs::path& dir, const RunRecord& record);
// Empty {"runs": []} when absent.
Json read_manifest(const fs::path& dir);
// The most recent run whose command and config equal the given ones, if any.
std::optional<Json> find_run(const fs::path& dir, const std::string& command, const Json& config);

// ---------------------------------------------------------------------------------------------
// Data

struct DatagenConfig {
    int clips = 50;
    double duration = 4.0;
    double fps = synthgen::kDefaultFps;
    int size = 64;
    double eyebrow_coupling = 1.0;
    synthgen::AudioKind audio = synthgen::AudioKind::envelope_random;
    std::uint64_t seed = 1;
};
Json to_json(const DatagenConfig& c);

// Writes out/clips/clip_NNNN and a manifest entry. Each clip uses a random face with the
// configured coupling.
void datagen(const DatagenConfig& cfg, const fs::path& out, int jobs = 1);

struct PreprocessConfig {
    preprocess::CropPolicy policy = preprocess::CropPolicy::per_frame;
    preprocess::MaskOptions mask;
    int size = 64;
};
Json to_json(const PreprocessConfig& c);

// Manifest config: {"preprocess": ..., "input_hash": hash of `in`}.
void preprocess_clips(const fs::path& in, const fs::path& out, const PreprocessConfig& cfg, int jobs = 1);

// ---------------------------------------------------------------------------------------------
// Models

struct PretrainConfig {
    trainer::AutoencoderConfig ae;
    nets::ModelConfig model;
    int frame_stride = 4;  // every n-th frame (and its masked twin) of each clip is used
};
Json to_json(const PretrainConfig& c);

struct PretrainResult {
    double heldout_error = 0.0;
    std::vector<trainer::StepRecord> log;
};

// Trains the autoencoder on frames of the prepared directories and measures the mean absolute
// reconstruction error on the held-out directories. Writes out/autoencoder.ckpt.
PretrainResult pretrain(const std::vector<fs::path>& data, const std::vector<fs::path>& heldout, const fs::path& out,
                        const PretrainConfig& cfg, const Log& log = {});

struct TrainConfig {
    trainer::StageConfig stage;
    nets::ModelConfig model;
    std::uint64_t init_seed = 0;  // initialisation of the groups the stage creates
};
Json to_json(const TrainConfig& c);

struct TrainSummary {
    trainer::TrainResult result;
    fs::path checkpoint;
};

// Stage 1 starts from `init` = autoencoder checkpoint; stage 2 from `init` = stage-1 checkpoint
// (PreconditionError naming the file when missing). Writes out/model.ckpt, out/metrics.jsonl and
// out/summary.json.
TrainSummary train(const TrainConfig& cfg, const fs::path& data, const fs::path& init, const fs::path& out,
                   const Log& log = {});

// ---------------------------------------------------------------------------------------------
// Evaluation

struct EvalConfig {
    stream::StreamOptions stream;
    int clips = 20;
    double duration = 5.0;
    std::uint64_t seed = 0;
};
Json to_json(const EvalConfig& c);

// Loads up to cfg.clips prepared clips, cut to cfg.duration seconds.
std::vector<ClipTensors> load_eval_clips(const fs::path& data, Model& model, const EvalConfig& cfg);

Json silence_json(const model_eval::SilenceEvaluation& e);
Json shuffled_json(const model_eval::ShuffledEvaluation& e);

// Writes out/report.json and returns it. A checkpoint without trained motion modules is flagged.
Json eval_silence(const fs::path& checkpoint, const fs::path& data, const EvalConfig& cfg, const fs::path& out,
                  const Log& log = {});
Json eval_leakage(const fs::path& checkpoint, const fs::path& data, evalkit::AudioPolicy policy,
                  const EvalConfig& cfg, const fs::path& out, const Log& log = {});

struct InferConfig {
    stream::StreamOptions stream;
    bool silent = false;        // drive with all-zero audio features
    fs::path audio_clip;        // prepared clip whose audio drives the generation (default: own)
};

// Streams one prepared clip, writing out/frames/NNNN.png and out/trace.json (per-frame
// generated aperture next to the source aperture).
Json infer(const fs::path& checkpoint, const fs::path& clip, const InferConfig& cfg, const fs::path& out,
           const Log& log = {});

// ---------------------------------------------------------------------------------------------
// Ablation

struct AblationRow {
    std::string name;
    preprocess::CropPolicy policy = preprocess::CropPolicy::per_frame;
    preprocess::MaskCodec codec = preprocess::MaskCodec::lossless;
    bool masked_attention = false;
    bool shuffled_audit = false;
};

struct AblationConfig {
    DatagenConfig train_data;
    DatagenConfig test_data{20, 5.0, synthgen::kDefaultFps, 64, 1.0, synthgen::AudioKind::envelope_random, 2};
    PretrainConfig pretrain;
    trainer::StageConfig stage1 = trainer::StageConfig::stage_one();
    trainer::StageConfig stage2 = trainer::StageConfig::stage_two();
    nets::ModelConfig model;
    EvalConfig eval;
    int reconstruction_clips = 5;
    bool lossy_row = true;
    std::uint64_t seed = 0;

    std::vector<AblationRow> rows() const;
};
Json to_json(const AblationConfig& c);

// Runs (or reuses, when an identical run is recorded) every step of the matrix under `work`
// and writes work/report/report.json and report.md.
Json ablate(const AblationConfig& cfg, const fs::path& work, int jobs = 1, const Log& log = {});

// Markdown table of an ablation report.
std::string render_report(const Json& report);

} // namespace highsync::pipeline
