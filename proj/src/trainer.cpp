#include "highsync/trainer.hpp"

#include "highsync/errors.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <chrono>
#include <set>

namespace highsync::trainer {

StageConfig StageConfig::stage_one() { return StageConfig{}; }

StageConfig StageConfig::stage_two() {
    StageConfig c;
    c.stage = 2;
    c.steps = 1000;
    c.batch_size = 4;
    c.frames_per_sample = 12;
    return c;
}

std::vector<std::string> StageConfig::trainable_groups() const {
    if (stage == 1) return {"denoiser", "reference_net", "audio_encoder"};
    return {"motion"};
}

void StageConfig::validate() const {
    if (stage != 1 && stage != 2) throw InvalidArgument("stage must be 1 or 2");
    if (stage == 1 && frames_per_sample != 1) throw InvalidArgument("stage 1 trains on single frames");
    if (stage == 2 && frames_per_sample != 12) throw InvalidArgument("stage 2 trains on 12-frame sequences");
    if (steps < 0 || batch_size < 1 || !(learning_rate > 0.0)) throw InvalidArgument("invalid optimisation settings");
    if (!(ref_dropout_rate >= 0.0 && ref_dropout_rate <= 1.0)) throw InvalidArgument("ref_dropout_rate outside [0, 1]");
}

std::vector<SampleIndex> sample_batch(const Dataset& data, const StageConfig& cfg, Rng& rng,
                                      std::vector<std::string>* skipped) {
    const int f = cfg.frames_per_sample;
    std::vector<int> eligible;
    for (std::size_t i = 0; i < data.clips.size(); ++i) {
        if (data.clips[i].length() >= f + 1) {
            eligible.push_back(static_cast<int>(i));
        } else if (skipped != nullptr &&
                   std::find(skipped->begin(), skipped->end(), data.clips[i].id) == skipped->end()) {
            skipped->push_back(data.clips[i].id);
        }
    }
    if (eligible.empty()) {
        throw PreconditionError("no clip is long enough for " + std::to_string(f) + "-frame samples");
    }
    std::vector<SampleIndex> out;
    out.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
        SampleIndex s;
        s.clip = eligible[rng.below(eligible.size())];
        s.frames = f;
        const int length = data.clips[s.clip].length();
        s.start = static_cast<int>(rng.below(static_cast<std::uint64_t>(length - f + 1)));
        // Uniform over the length - f frames outside the window.
        int r = static_cast<int>(rng.below(static_cast<std::uint64_t>(length - f)));
        s.reference = r < s.start ? r : r + f;
        if (s.reference >= s.start && s.reference < s.start + f) {
            throw ConfigurationError("sample_batch: reference landed inside the window");
        }
        out.push_back(s);
    }
    return out;
}

Batch assemble_batch(const Dataset& data, const std::vector<SampleIndex>& index, int window_radius) {
    Batch b;
    b.index = index;
    b.frames_per_sample = index.empty() ? 1 : index.front().frames;
    std::vector<torch::Tensor> lat, msk, ref, aud, frm;
    for (const auto& s : index) {
        if (s.frames != b.frames_per_sample) throw InvalidArgument("assemble_batch: mixed sample lengths");
        const auto& c = data.clips[s.clip];
        lat.push_back(c.latents.slice(0, s.start, s.start + s.frames));
        msk.push_back(c.masked_latents.slice(0, s.start, s.start + s.frames));
        frm.push_back(c.frames.slice(0, s.start, s.start + s.frames));
        ref.push_back(c.latents.slice(0, s.reference, s.reference + 1));
        std::vector<int> frames(s.frames);
        for (int i = 0; i < s.frames; ++i) frames[i] = s.start + i;
        aud.push_back(nets::audio_windows(c.audio, frames, window_radius));
    }
    b.latents = torch::cat(lat, 0);
    b.masked = torch::cat(msk, 0);
    b.ref_latents = torch::cat(ref, 0);
    b.audio_windows = torch::cat(aud, 0);
    b.frames = torch::cat(frm, 0);
    return b;
}

LossDraw draw_loss_inputs(const Batch& batch, const diffusion::NoiseSchedule& schedule, double ref_dropout_rate,
                          Rng& rng, const DropoutHook& hook) {
    LossDraw d;
    for (int s = 0; s < batch.samples(); ++s) {
        const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.num_train_timesteps)));
        for (int f = 0; f < batch.frames_per_sample; ++f) d.timesteps.push_back(t);
        const bool drop = rng.bernoulli(ref_dropout_rate);
        d.drop_reference.push_back(drop);
        // Audio is never dropped: there is no code path that could report otherwise.
        if (hook) hook(drop, diffusion::GuidanceConfig::audio_dropout_rate != 0.0);
    }
    auto gen = at::detail::createCPUGenerator(rng.next());
    d.noise = torch::randn(batch.latents.sizes(), gen, batch.latents.options());
    return d;
}

torch::Tensor training_loss(Model& model, const Batch& batch, const LossDraw& draw,
                            const diffusion::NoiseSchedule& schedule, bool use_motion) {
    const int f = batch.frames_per_sample;
    if (use_motion && f != model.cfg.frames) {
        throw InvalidArgument("training_loss: motion training needs exactly " + std::to_string(model.cfg.frames) + " frames");
    }
    std::vector<float> keep_v;
    for (bool d : draw.drop_reference) keep_v.push_back(d ? 0.0f : 1.0f);
    auto keep = torch::tensor(keep_v).to(batch.latents.dtype()).view({-1, 1, 1});
    auto ref = model.reference_net->forward(batch.ref_latents);
    for (auto& r : ref) r = (r * keep).repeat_interleave(f, 0);
    auto audio = model.audio_encoder->forward(batch.audio_windows);
    auto z_t = diffusion::add_noise(batch.latents, draw.noise, draw.timesteps, schedule);
    std::vector<std::int64_t> tv(draw.timesteps.begin(), draw.timesteps.end());
    auto t = torch::tensor(tv, torch::kInt64);
    auto eps = model.denoiser->forward(z_t, batch.masked, t, ref, audio, use_motion ? model.motion.get() : nullptr);
    auto x0 = diffusion::predict_x0(z_t, eps, draw.timesteps, schedule);
    return diffusion::pixel_l2_loss(model.autoencoder->decode_raw(x0), batch.frames);
}

namespace {

std::vector<torch::Tensor> group_parameters(Model& model, const std::vector<std::string>& groups) {
    std::vector<torch::Tensor> params;
    for (const auto& g : groups) {
        for (auto& p : model.group(g).parameters(true)) params.push_back(p);
    }
    return params;
}

} // namespace

TrainResult train_stage(Model& model, const Dataset& data, const StageConfig& cfg,
                        const diffusion::NoiseSchedule& schedule, const TrainCallbacks& callbacks) {
    cfg.validate();
    const auto groups = cfg.trainable_groups();
    const bool use_motion = cfg.stage == 2;
    TrainResult result;
    result.hashes_before = model.group_hashes();

    model.set_trainable(groups);
    model.train(true);
    auto params = group_parameters(model, groups);
    torch::optim::AdamW opt(params, torch::optim::AdamWOptions(cfg.learning_rate)
                                        .betas({0.9, 0.999})
                                        .weight_decay(cfg.weight_decay));
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(cfg.stage), 0x7EA1));
    const auto start = std::chrono::steady_clock::now();

    for (int step = 0; step < cfg.steps; ++step) {
        const auto index = sample_batch(data, cfg, rng, &result.skipped_clips);
        const auto batch = assemble_batch(data, index, model.cfg.window_radius);
        const auto draw = draw_loss_inputs(batch, schedule, cfg.ref_dropout_rate, rng, callbacks.on_dropout);
        if (step == 0 && use_motion) {
            torch::NoGradGuard guard;
            result.step0_loss_without_motion = training_loss(model, batch, draw, schedule, false).item<double>();
            result.step0_loss_with_motion = training_loss(model, batch, draw, schedule, true).item<double>();
        }
        auto loss = training_loss(model, batch, draw, schedule, use_motion);
        opt.zero_grad();
        loss.backward();
        torch::nn::utils::clip_grad_norm_(params, cfg.grad_clip);
        opt.step();
        StepRecord rec{step, loss.item<double>(), cfg.learning_rate,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
        result.log.push_back(rec);
        if (callbacks.on_step) callbacks.on_step(rec);
    }

    model.set_trainable({});
    model.train(false);
    result.hashes_after = model.group_hashes();
    for (const auto& g : Model::group_names()) {
        const bool trained = std::find(groups.begin(), groups.end(), g) != groups.end();
        if (!trained && result.hashes_before.at(g) != result.hashes_after.at(g)) {
            throw ConfigurationError("frozen group '" + g + "' changed during stage " + std::to_string(cfg.stage));
        }
    }
    return result;
}

std::vector<StepRecord> pretrain_autoencoder(nets::Autoencoder& ae, const torch::Tensor& frames,
                                             const AutoencoderConfig& cfg,
                                             const std::function<void(const StepRecord&)>& on_step) {
    if (frames.dim() != 4 || frames.size(0) == 0) throw InvalidArgument("pretrain_autoencoder: empty frame set");
    {
        torch::NoGradGuard guard;
        ae->latent_scale.fill_(1.0);
    }
    for (auto& p : ae->parameters()) p.set_requires_grad(true);
    ae->train(true);
    torch::optim::Adam opt(ae->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
    Rng rng(mix_seed(cfg.seed, 0xAE));
    std::vector<StepRecord> log;
    const auto start = std::chrono::steady_clock::now();
    const auto n = static_cast<std::uint64_t>(frames.size(0));
    for (int step = 0; step < cfg.steps; ++step) {
        // Drop the learning rate by 10x for the last fifth of training.
        const double lr = step < cfg.steps * 4 / 5 ? cfg.learning_rate : cfg.learning_rate * 0.1;
        for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        std::vector<std::int64_t> idx(cfg.batch_size);
        for (auto& i : idx) i = static_cast<std::int64_t>(rng.below(n));
        auto x = frames.index_select(0, torch::tensor(idx, torch::kInt64));
        auto loss = (ae->reconstruct_raw(x) - x).abs().mean();
        opt.zero_grad();
        loss.backward();
        opt.step();
        StepRecord rec{step, loss.item<double>(), lr,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
        log.push_back(rec);
        if (on_step) on_step(rec);
    }
    ae->train(false);
    for (auto& p : ae->parameters()) p.set_requires_grad(false);
    {
        torch::NoGradGuard guard;
        const auto sample = frames.slice(0, 0, std::min<std::int64_t>(frames.size(0), 512));
        const auto z = ae->encoder->forward(sample);
        ae->latent_scale.fill_(z.std().item<double>());
    }
    return log;
}

double reconstruction_error(nets::Autoencoder& ae, const torch::Tensor& frames) {
    torch::NoGradGuard guard;
    double total = 0.0;
    for (std::int64_t i = 0; i < frames.size(0); i += 64) {
        auto x = frames.slice(0, i, std::min<std::int64_t>(i + 64, frames.size(0)));
        total += (ae->decode(ae->encode(x)) - x).abs().sum().item<double>();
    }
    return total / static_cast<double>(frames.numel());
}

} // namespace highsync::trainer
