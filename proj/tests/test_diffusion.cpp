#include "highsync/diffusion.hpp"
#include "highsync/errors.hpp"

#include <doctest.h>

#include <cmath>

using namespace highsync;
using namespace highsync::diffusion;

TEST_CASE("linear schedule endpoints and cumulative product") {
    auto s = NoiseSchedule::linear();
    REQUIRE(s.num_train_timesteps == 1000);
    CHECK(s.beta.front() == doctest::Approx(0.00085));
    CHECK(s.beta.back() == doctest::Approx(0.012));
    double prod = 1.0;
    for (int t = 0; t < 1000; ++t) {
        prod *= 1.0 - (0.00085 + (0.012 - 0.00085) * t / 999.0);
        if (t % 97 == 0) CHECK(s.alpha_bar[t] == doctest::Approx(prod).epsilon(1e-12));
    }
    for (int t = 1; t < 1000; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    CHECK_THROWS_AS(s.check_timestep(1000), InvalidArgument);
    CHECK_THROWS_AS(s.check_timestep(-1), InvalidArgument);
}

TEST_CASE("ddim plan has twenty evenly spaced descending steps") {
    auto s = NoiseSchedule::linear();
    auto p = DdimPlan::make(s, 20);
    REQUIRE(p.steps() == 20);
    for (int i = 0; i < 20; ++i) CHECK(p.timesteps[i] == 950 - 50 * i);
    CHECK_THROWS_AS(DdimPlan::make(s, 0), ConfigurationError);
    CHECK_THROWS_AS(DdimPlan::make(s, 1001), ConfigurationError);
    CHECK(DdimPlan::full(s).steps() == 1000);
}

TEST_CASE("add_noise matches the closed form elementwise") {
    auto s = NoiseSchedule::linear();
    torch::manual_seed(0);
    auto x = torch::randn({3, 5}, torch::kFloat64);
    auto n = torch::randn({3, 5}, torch::kFloat64);
    for (int t : {0, 250, 999}) {
        auto z = add_noise(x, n, t, s);
        for (int i = 0; i < 15; ++i) {
            const double want = std::sqrt(s.alpha_bar[t]) * x.view(-1)[i].item<double>() +
                                std::sqrt(1.0 - s.alpha_bar[t]) * n.view(-1)[i].item<double>();
            CHECK(z.view(-1)[i].item<double>() == doctest::Approx(want).epsilon(1e-14));
        }
    }
    auto zv = add_noise(x, n, std::vector<int>{0, 250, 999}, s);
    CHECK(torch::allclose(zv[1], add_noise(x[1], n[1], 250, s)));
    CHECK_THROWS_AS(add_noise(x, n, std::vector<int>{1, 2}, s), InvalidArgument);
}

TEST_CASE("predict_x0 inverts add_noise given the true noise") {
    auto s = NoiseSchedule::linear();
    torch::manual_seed(1);
    auto x = torch::randn({4, 2, 3, 3}, torch::kFloat64);
    auto n = torch::randn_like(x);
    std::vector<int> t{0, 10, 500, 990};
    auto x0 = predict_x0(add_noise(x, n, t, s), n, t, s);
    CHECK((x0 - x).abs().max().item<double>() < 1e-9);
    // The final DDIM step lands on the clean estimate.
    auto z = add_noise(x, n, 950, s);
    CHECK((ddim_step(z, n, 950, -1, s) - x).abs().max().item<double>() < 1e-9);
}

TEST_CASE("pixel loss is the mean of per-frame Euclidean norms") {
    auto a = torch::zeros({2, 1, 2, 2});
    auto b = torch::zeros({2, 1, 2, 2});
    b[0].fill_(1.0);  // norm 2
    b[1][0][0][0] = 3.0;
    b[1][0][1][1] = 4.0;  // norm 5
    CHECK(pixel_l2_loss(a, b).item<double>() == doctest::Approx(3.5));
}

TEST_CASE("guidance skips the unconditional branch at scale one") {
    int uncond_calls = 0;
    EpsFn eps = [&](const torch::Tensor& z, int, bool cond) {
        if (!cond) ++uncond_calls;
        return cond ? z * 2.0 : z;
    };
    auto z = torch::ones({1});
    CHECK(guided_eps(eps, z, 10, 1.0).item<double>() == 2.0);
    CHECK(uncond_calls == 0);
    CHECK(guided_eps(eps, z, 10, 1.5).item<double>() == doctest::Approx(1.0 + 1.5 * (2.0 - 1.0)));
    CHECK(uncond_calls == 1);
    static_assert(GuidanceConfig::audio_dropout_rate == 0.0);
}

TEST_CASE("ddim sampling with the exact Gaussian noise predictor recovers the data law") {
    // Data ~ N(mu, sd^2): the optimal predictor is sqrt(1 - a) (z - sqrt(a) mu) / (a sd^2 + 1 - a).
    const double mu = 0.7;
    const double sd = 0.3;
    auto s = NoiseSchedule::linear();
    EpsFn eps = [&](const torch::Tensor& z, int t, bool) {
        const double a = s.alpha_bar[t];
        return std::sqrt(1.0 - a) * (z - std::sqrt(a) * mu) / (a * sd * sd + 1.0 - a);
    };
    torch::manual_seed(3);
    auto noise = torch::randn({20000}, torch::kFloat64);
    std::vector<torch::Tensor> traj;
    auto x = ddim_sample(noise, eps, DdimPlan::full(s), s, 1.0, {}, &traj);
    CHECK(traj.size() == 1000);
    CHECK(x.mean().item<double>() == doctest::Approx(mu + sd * noise.mean().item<double>()).epsilon(0.01));
    CHECK(x.std().item<double>() == doctest::Approx(sd * noise.std().item<double>()).epsilon(0.01));

    auto x20 = ddim_sample(noise, eps, DdimPlan::make(s, 20), s, 1.0, {}, &traj);
    CHECK(traj.size() == 20);
    CHECK(x20.mean().item<double>() == doctest::Approx(mu).epsilon(0.03));
    CHECK(x20.std().item<double>() == doctest::Approx(sd).epsilon(0.05));
}

TEST_CASE("ddim sampling is deterministic and applies hook edits") {
    auto s = NoiseSchedule::linear();
    EpsFn eps = [](const torch::Tensor& z, int, bool) { return z * 0.5; };
    torch::manual_seed(0);
    auto noise = torch::randn({8}, torch::kFloat64);
    auto plan = DdimPlan::make(s, 20);
    auto a = ddim_sample(noise, eps, plan, s, 1.0);
    auto b = ddim_sample(noise, eps, plan, s, 1.0);
    CHECK(torch::equal(a, b));
    int calls = 0;
    StepHook hook = [&](int step, torch::Tensor& z) {
        CHECK(step == calls++);
        if (step == 19) z.zero_();
    };
    CHECK(ddim_sample(noise, eps, plan, s, 1.0, hook).abs().max().item<double>() == 0.0);
    CHECK(calls == 20);
    DdimPlan bad = plan;
    std::swap(bad.timesteps[0], bad.timesteps[1]);
    CHECK_THROWS_AS(ddim_sample(noise, eps, bad, s, 1.0), ConfigurationError);
}
