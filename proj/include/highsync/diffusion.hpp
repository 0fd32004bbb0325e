#pragma once

#include <torch/torch.h>

#include <functional>
#include <vector>

namespace highsync::diffusion {

struct NoiseSchedule {
    int num_train_timesteps = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;

    // Linear beta from beta_start to beta_end.
    static NoiseSchedule linear(int steps = 1000, double beta_start = 0.00085, double beta_end = 0.012);
    void check_timestep(int t) const;
};

struct DdimPlan {
    int num_train_timesteps = 0;
    std::vector<int> timesteps;  // strictly decreasing
    int steps() const { return static_cast<int>(timesteps.size()); }

    // Evenly spaced: t_i = (n - 1 - i) * (S / n), e.g. 950, 900, ..., 0 for S = 1000, n = 20.
    static DdimPlan make(const NoiseSchedule& schedule, int num_inference_steps = 20);
    // Every training timestep in descending order.
    static DdimPlan full(const NoiseSchedule& schedule);
};

struct GuidanceConfig {
    double ref_dropout_rate = 0.1;
    double guidance_scale = 1.5;
    // The audio condition is never dropped; this is a compile-time constant, not a setting.
    static constexpr double audio_dropout_rate = 0.0;
};

// sqrt(alpha_bar[t]) * latent + sqrt(1 - alpha_bar[t]) * noise.
torch::Tensor add_noise(const torch::Tensor& latent, const torch::Tensor& noise, int t, const NoiseSchedule& s);
// Per-sample timesteps (first dimension of latent).
torch::Tensor add_noise(const torch::Tensor& latent, const torch::Tensor& noise, const std::vector<int>& t,
                        const NoiseSchedule& s);
// One-step clean estimate (z_t - sqrt(1 - a) * eps) / sqrt(a), per-sample timesteps.
torch::Tensor predict_x0(const torch::Tensor& z_t, const torch::Tensor& eps, const std::vector<int>& t,
                         const NoiseSchedule& s);
// Mean over samples of the Euclidean norm of (decoded - target).
torch::Tensor pixel_l2_loss(const torch::Tensor& decoded, const torch::Tensor& target);

// Deterministic DDIM update from t to t_prev (t_prev < 0 means alpha_bar_prev = 1).
torch::Tensor ddim_step(const torch::Tensor& z, const torch::Tensor& eps, int t, int t_prev, const NoiseSchedule& s);

// Noise predictor: (latents, timestep, conditional) -> eps. The unconditional call drops the
// reference features only.
using EpsFn = std::function<torch::Tensor(const torch::Tensor& z, int t, bool conditional)>;
// Called after each DDIM step with the step index and the post-step latents, which it may edit.
using StepHook = std::function<void(int step, torch::Tensor& z)>;

// uncond + g * (cond - uncond); g == 1 evaluates the conditional branch only.
torch::Tensor guided_eps(const EpsFn& eps, const torch::Tensor& z, int t, double guidance_scale);

torch::Tensor ddim_sample(const torch::Tensor& initial_noise, const EpsFn& eps, const DdimPlan& plan,
                          const NoiseSchedule& schedule, double guidance_scale, const StepHook& hook = {},
                          std::vector<torch::Tensor>* trajectory = nullptr);

} // namespace highsync::diffusion
