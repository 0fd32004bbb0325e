#include "highsync/diffusion.hpp"

#include "highsync/errors.hpp"

#include <cmath>
#include <string>

namespace highsync::diffusion {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 2 || !(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        throw InvalidArgument("NoiseSchedule::linear: invalid parameters");
    }
    NoiseSchedule s;
    s.num_train_timesteps = steps;
    s.beta.resize(steps);
    s.alpha_bar.resize(steps);
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        s.beta[i] = beta_start + (beta_end - beta_start) * i / (steps - 1);
        prod *= 1.0 - s.beta[i];
        s.alpha_bar[i] = prod;
    }
    return s;
}

void NoiseSchedule::check_timestep(int t) const {
    if (t < 0 || t >= num_train_timesteps) {
        throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(num_train_timesteps) + ")");
    }
}

DdimPlan DdimPlan::make(const NoiseSchedule& schedule, int n) {
    if (n < 1 || n > schedule.num_train_timesteps) {
        throw ConfigurationError("DdimPlan: inference steps must lie in [1, num_train_timesteps]");
    }
    DdimPlan p;
    p.num_train_timesteps = schedule.num_train_timesteps;
    const int stride = schedule.num_train_timesteps / n;
    for (int i = 0; i < n; ++i) p.timesteps.push_back((n - 1 - i) * stride);
    return p;
}

DdimPlan DdimPlan::full(const NoiseSchedule& schedule) {
    DdimPlan p;
    p.num_train_timesteps = schedule.num_train_timesteps;
    for (int t = schedule.num_train_timesteps - 1; t >= 0; --t) p.timesteps.push_back(t);
    return p;
}

namespace {

torch::Tensor per_sample(const std::vector<int>& t, const NoiseSchedule& s, const torch::Tensor& like, bool sqrt_one_minus) {
    std::vector<double> v;
    v.reserve(t.size());
    for (int ti : t) {
        s.check_timestep(ti);
        v.push_back(sqrt_one_minus ? std::sqrt(1.0 - s.alpha_bar[ti]) : std::sqrt(s.alpha_bar[ti]));
    }
    std::vector<std::int64_t> shape(like.dim(), 1);
    shape[0] = static_cast<std::int64_t>(t.size());
    return torch::tensor(v, torch::kFloat64).to(like.dtype()).view(shape);
}

} // namespace

torch::Tensor add_noise(const torch::Tensor& latent, const torch::Tensor& noise, int t, const NoiseSchedule& s) {
    s.check_timestep(t);
    return std::sqrt(s.alpha_bar[t]) * latent + std::sqrt(1.0 - s.alpha_bar[t]) * noise;
}

torch::Tensor add_noise(const torch::Tensor& latent, const torch::Tensor& noise, const std::vector<int>& t,
                        const NoiseSchedule& s) {
    if (static_cast<std::int64_t>(t.size()) != latent.size(0)) {
        throw InvalidArgument("add_noise: one timestep per sample required");
    }
    return per_sample(t, s, latent, false) * latent + per_sample(t, s, latent, true) * noise;
}

torch::Tensor predict_x0(const torch::Tensor& z_t, const torch::Tensor& eps, const std::vector<int>& t,
                         const NoiseSchedule& s) {
    return (z_t - per_sample(t, s, z_t, true) * eps) / per_sample(t, s, z_t, false);
}

torch::Tensor pixel_l2_loss(const torch::Tensor& decoded, const torch::Tensor& target) {
    return (decoded - target).flatten(1).norm(2, 1).mean();
}

torch::Tensor ddim_step(const torch::Tensor& z, const torch::Tensor& eps, int t, int t_prev, const NoiseSchedule& s) {
    s.check_timestep(t);
    const double a = s.alpha_bar[t];
    const double a_prev = t_prev < 0 ? 1.0 : s.alpha_bar[t_prev];
    auto x0 = (z - std::sqrt(1.0 - a) * eps) / std::sqrt(a);
    return std::sqrt(a_prev) * x0 + std::sqrt(1.0 - a_prev) * eps;
}

torch::Tensor guided_eps(const EpsFn& eps, const torch::Tensor& z, int t, double g) {
    auto cond = eps(z, t, true);
    if (g == 1.0) return cond;
    auto uncond = eps(z, t, false);
    return uncond + g * (cond - uncond);
}

torch::Tensor ddim_sample(const torch::Tensor& initial_noise, const EpsFn& eps, const DdimPlan& plan,
                          const NoiseSchedule& schedule, double guidance_scale, const StepHook& hook,
                          std::vector<torch::Tensor>* trajectory) {
    if (plan.num_train_timesteps != schedule.num_train_timesteps || plan.timesteps.empty()) {
        throw ConfigurationError("ddim_sample: plan does not belong to this schedule");
    }
    for (std::size_t i = 1; i < plan.timesteps.size(); ++i) {
        if (plan.timesteps[i] >= plan.timesteps[i - 1]) throw ConfigurationError("ddim_sample: timesteps must decrease");
    }
    torch::NoGradGuard guard;
    auto z = initial_noise.clone();
    if (trajectory != nullptr) trajectory->clear();
    for (int i = 0; i < plan.steps(); ++i) {
        const int t = plan.timesteps[i];
        const int t_prev = i + 1 < plan.steps() ? plan.timesteps[i + 1] : -1;
        z = ddim_step(z, guided_eps(eps, z, t, guidance_scale), t, t_prev, schedule);
        if (hook) hook(i, z);
        if (trajectory != nullptr) trajectory->push_back(z.clone());
    }
    return z;
}

} // namespace highsync::diffusion
