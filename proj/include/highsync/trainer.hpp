#pragma once

#include "highsync/dataset.hpp"
#include "highsync/diffusion.hpp"
#include "highsync/model.hpp"
#include "highsync/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace highsync::trainer {

struct StageConfig {
    int stage = 1;
    int steps = 2000;
    int batch_size = 16;
    double learning_rate = 2e-4;
    int frames_per_sample = 1;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    double ref_dropout_rate = 0.1;
    std::uint64_t seed = 0;

    static StageConfig stage_one();
    static StageConfig stage_two();
    std::vector<std::string> trainable_groups() const;
    void validate() const;
};

// Frames [start, start + frames) of one clip plus the reference frame index.
struct SampleIndex {
    int clip = 0;
    int start = 0;
    int frames = 1;
    int reference = 0;
};

// Stage 1: one target frame and a different reference frame. Stage 2: 12 consecutive frames and
// one shared reference drawn uniformly from the frames outside the window. Clips that are too
// short are skipped; their ids are appended to `skipped` once.
std::vector<SampleIndex> sample_batch(const Dataset& data, const StageConfig& cfg, Rng& rng,
                                      std::vector<std::string>* skipped = nullptr);

struct Batch {
    int frames_per_sample = 1;
    torch::Tensor latents;         // (B * F) x c x h x w
    torch::Tensor masked;          // (B * F) x c x h x w
    torch::Tensor ref_latents;     // B x c x h x w
    torch::Tensor audio_windows;   // (B * F) x K x bins
    torch::Tensor frames;          // (B * F) x C x H x W
    std::vector<SampleIndex> index;
    int samples() const { return static_cast<int>(index.size()); }
};

Batch assemble_batch(const Dataset& data, const std::vector<SampleIndex>& index, int window_radius);

// Random draws for one loss evaluation: per-sample timestep (shared by a sample's frames),
// per-frame noise, per-sample reference dropout.
struct LossDraw {
    std::vector<int> timesteps;  // per frame
    torch::Tensor noise;
    std::vector<bool> drop_reference;  // per sample
};

using DropoutHook = std::function<void(bool reference_dropped, bool audio_dropped)>;

LossDraw draw_loss_inputs(const Batch& batch, const diffusion::NoiseSchedule& schedule, double ref_dropout_rate,
                          Rng& rng, const DropoutHook& hook = {});

// Decoded one-step estimate vs ground truth (mean per-frame Euclidean norm). Motion modules run
// when use_motion is set.
torch::Tensor training_loss(Model& model, const Batch& batch, const LossDraw& draw,
                            const diffusion::NoiseSchedule& schedule, bool use_motion);

struct StepRecord {
    int step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    std::vector<StepRecord> log;
    std::vector<std::string> skipped_clips;
    std::map<std::string, std::string> hashes_before;
    std::map<std::string, std::string> hashes_after;
    // Stage 2 only: the first batch evaluated without and with the motion modules.
    double step0_loss_without_motion = 0.0;
    double step0_loss_with_motion = 0.0;
};

struct TrainCallbacks {
    std::function<void(const StepRecord&)> on_step;
    DropoutHook on_dropout;
};

// Trains the stage's groups; every other group is frozen and verified byte-identical afterwards
// (throws ConfigurationError on violation).
TrainResult train_stage(Model& model, const Dataset& data, const StageConfig& cfg,
                        const diffusion::NoiseSchedule& schedule, const TrainCallbacks& callbacks = {});

struct AutoencoderConfig {
    int steps = 1500;
    int batch_size = 32;
    double learning_rate = 2e-3;
    std::uint64_t seed = 0;
};

// Reconstruction pretraining on N x C x H x W frames (L1 loss), then sets the latent scale to the
// inverse latent standard deviation.
std::vector<StepRecord> pretrain_autoencoder(nets::Autoencoder& ae, const torch::Tensor& frames,
                                             const AutoencoderConfig& cfg,
                                             const std::function<void(const StepRecord&)>& on_step = {});
// Mean absolute reconstruction error with the clamped decoder.
double reconstruction_error(nets::Autoencoder& ae, const torch::Tensor& frames);

} // namespace highsync::trainer
