#include "highsync/nets.hpp"

#include "highsync/errors.hpp"

#include <cmath>

namespace highsync::nets {

namespace F = torch::nn::functional;

int ModelConfig::boundary_row() const {
    return static_cast<int>(std::ceil(attn_size() * (1.0 - mask_fraction) - 1e-9));
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigurationError("model config: " + what); };
    if (ae_factor != 4) fail("ae_factor must be 4");
    if (image_size % 8 != 0 || image_size < 32) fail("image_size must be a multiple of 8 and >= 32");
    if (base_width % groups != 0 || ae_width <= 0) fail("base_width must be divisible by groups");
    if (attn_width() % heads != 0 || audio_dim % heads != 0) fail("widths must be divisible by heads");
    if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) fail("mask_fraction must lie in (0, 1)");
    if (frames < 1 || window_radius < 0 || audio_bins < 1) fail("frames, window_radius, audio_bins out of range");
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim) {
    const int half = dim / 2;
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat64) / half);
    auto args = t.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
    return torch::cat({torch::cos(args), torch::sin(args)}, 1).to(torch::kFloat32);
}

torch::Tensor position_encoding_1d(int length, int dim) {
    return timestep_embedding(torch::arange(length, torch::kFloat64), dim);
}

torch::Tensor position_encoding_2d(int rows, int cols, int dim) {
    const int half = dim / 2;
    auto r = position_encoding_1d(rows, half);  // rows x half
    auto c = position_encoding_1d(cols, dim - half);
    auto grid_r = r.unsqueeze(1).expand({rows, cols, half});
    auto grid_c = c.unsqueeze(0).expand({rows, cols, dim - half});
    return torch::cat({grid_r, grid_c}, 2).reshape({rows * cols, dim}).contiguous();
}

// ---------------------------------------------------------------------------------------------
// Autoencoder

AutoencoderImpl::AutoencoderImpl(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    const int w = cfg.ae_width;
    const int lc = cfg.latent_channels;
    auto conv = [](int in, int out, int k, int stride, int pad) {
        return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
    };
    encoder = register_module(
        "encoder", torch::nn::Sequential(conv(cfg.image_channels, w, 3, 1, 1), torch::nn::SiLU(),
                                         conv(w, w, 4, 2, 1), torch::nn::SiLU(),
                                         conv(w, 2 * w, 3, 1, 1), torch::nn::SiLU(),
                                         conv(2 * w, 2 * w, 4, 2, 1), torch::nn::SiLU(),
                                         conv(2 * w, 2 * w, 3, 1, 1), torch::nn::SiLU(),
                                         conv(2 * w, lc, 1, 1, 0)));
    auto up = [] {
        return torch::nn::Upsample(torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    };
    decoder = register_module(
        "decoder", torch::nn::Sequential(conv(lc, 2 * w, 3, 1, 1), torch::nn::SiLU(),
                                         conv(2 * w, 2 * w, 3, 1, 1), torch::nn::SiLU(), up(),
                                         conv(2 * w, w, 3, 1, 1), torch::nn::SiLU(), up(),
                                         conv(w, w, 3, 1, 1), torch::nn::SiLU(),
                                         conv(w, cfg.image_channels, 3, 1, 1)));
    latent_scale = register_buffer("latent_scale", torch::ones({1}));
}

torch::Tensor AutoencoderImpl::encode(const torch::Tensor& frames) {
    if (frames.dim() != 4 || frames.size(1) != cfg.image_channels || frames.size(2) % cfg.ae_factor != 0 ||
        frames.size(3) % cfg.ae_factor != 0) {
        throw InvalidArgument("encode: expected N x C x H x W with H, W divisible by the compression factor");
    }
    return encoder->forward(frames) / latent_scale;
}

torch::Tensor AutoencoderImpl::decode_raw(const torch::Tensor& latents) {
    if (latents.dim() != 4 || latents.size(1) != cfg.latent_channels) {
        throw InvalidArgument("decode: expected N x latent_channels x h x w");
    }
    return decoder->forward(latents * latent_scale);
}

torch::Tensor AutoencoderImpl::decode(const torch::Tensor& latents) { return decode_raw(latents).clamp(0.0, 1.0); }

torch::Tensor AutoencoderImpl::reconstruct_raw(const torch::Tensor& frames) { return decode_raw(encode(frames)); }

// ---------------------------------------------------------------------------------------------
// Building blocks

ResBlockImpl::ResBlockImpl(int in, int out, int temb_dim, int groups) {
    norm1 = register_module("norm1", torch::nn::GroupNorm(groups, in));
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
    temb_proj = register_module("temb_proj", torch::nn::Linear(temb_dim, out));
    norm2 = register_module("norm2", torch::nn::GroupNorm(groups, out));
    conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
    if (in != out) {
        skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
    auto h = conv1(F::silu(norm1(x)));
    h = h + temb_proj(F::silu(temb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2(F::silu(norm2(h)));
    return (skip ? skip(x) : x) + h;
}

AttentionImpl::AttentionImpl(int query_dim, int context_dim, int heads_, bool bias, bool zero_out) : heads(heads_) {
    to_q = register_module("to_q", torch::nn::Linear(torch::nn::LinearOptions(query_dim, query_dim).bias(bias)));
    to_k = register_module("to_k", torch::nn::Linear(torch::nn::LinearOptions(context_dim, query_dim).bias(bias)));
    to_v = register_module("to_v", torch::nn::Linear(torch::nn::LinearOptions(context_dim, query_dim).bias(bias)));
    to_out = register_module("to_out", torch::nn::Linear(torch::nn::LinearOptions(query_dim, query_dim).bias(bias)));
    if (zero_out) {
        torch::NoGradGuard guard;
        to_out->weight.zero_();
        if (bias) to_out->bias.zero_();
    }
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& context,
                                     const torch::Tensor& logit_bias) {
    const auto b = query.size(0);
    const auto nq = query.size(1);
    const auto nk = context.size(1);
    const auto d = to_q->weight.size(0);
    const auto dh = d / heads;
    auto q = to_q(query).view({b, nq, heads, dh}).transpose(1, 2);
    auto k = to_k(context).view({b, nk, heads, dh}).transpose(1, 2);
    auto v = to_v(context).view({b, nk, heads, dh}).transpose(1, 2);
    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
    if (logit_bias.defined() && logit_bias.numel() > 0) {
        scores = scores + logit_bias;
    }
    auto w = torch::softmax(scores, -1);
    if (record) last_weights = w.detach();
    auto out = torch::matmul(w, v).transpose(1, 2).reshape({b, nq, d});
    return to_out(out);
}

FeedForwardImpl::FeedForwardImpl(int dim, int mult) {
    fc1 = register_module("fc1", torch::nn::Linear(dim, dim * mult));
    fc2 = register_module("fc2", torch::nn::Linear(dim * mult, dim));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) { return fc2(F::gelu(fc1(x))); }

TBlockImpl::TBlockImpl(int dim, int audio_dim, int heads, bool cross_) : cross(cross_) {
    auto ln = [&] { return torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})); };
    ln_self = register_module("ln_self", ln());
    self_attn = register_module("self_attn", Attention(dim, dim, heads, true, false));
    if (cross) {
        // Bias-free with a zero-initialised output: a zero reference contributes exactly nothing.
        ln_ref = register_module("ln_ref", ln());
        ref_attn = register_module("ref_attn", Attention(dim, dim, heads, false, true));
        ln_audio = register_module("ln_audio", ln());
        audio_attn = register_module("audio_attn", Attention(dim, audio_dim, heads, true, false));
    }
    ln_ff = register_module("ln_ff", ln());
    ff = register_module("ff", FeedForward(dim, 4));
}

torch::Tensor TBlockImpl::forward(const torch::Tensor& x_in, const torch::Tensor& pe, const torch::Tensor& ref,
                                  const torch::Tensor& audio, torch::Tensor* feature) {
    auto h = ln_self(x_in) + pe;
    if (feature != nullptr) *feature = h;
    auto x = x_in + self_attn(h, h);
    if (cross) {
        if (ref.defined()) {
            x = x + ref_attn(ln_ref(x) + pe, ref);
        }
        x = x + audio_attn(ln_audio(x) + pe, audio);
    }
    return x + ff(ln_ff(x));
}

torch::Tensor lower_region(int rows, int cols, int boundary_row) {
    auto r = torch::arange(rows).unsqueeze(1).expand({rows, cols});
    return (r >= boundary_row).reshape({rows * cols}).contiguous();
}

MotionModuleImpl::MotionModuleImpl(int dim, int heads, int frames_, int rows, int cols, int boundary_row,
                                   bool masked_, bool upper_attends_)
    : frames(frames_), tokens(rows * cols), masked(masked_), upper_attends(upper_attends_) {
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    attn = register_module("attn", Attention(dim, dim, heads, true, true));
    auto spatial = position_encoding_2d(rows, cols, dim);           // N x D
    auto temporal = position_encoding_1d(frames, dim);              // F x D
    pe = register_buffer("pe", (temporal.unsqueeze(1) + spatial.unsqueeze(0)).reshape({frames * tokens, dim}));
    // A plain member rather than a buffer so dtype conversions of the module leave it boolean.
    lower = lower_region(rows, cols, boundary_row).repeat({frames});
    torch::Tensor bias = torch::zeros({0});
    if (masked) {
        // Row = query, column = key. Only lower queries are restricted.
        auto forbidden = lower.unsqueeze(1) & lower.logical_not().unsqueeze(0);
        bias = torch::zeros({frames * tokens, frames * tokens}).masked_fill(forbidden, kMaskedLogit);
    }
    logit_bias = register_buffer("logit_bias", bias);
}

torch::Tensor MotionModuleImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 3 || x.size(1) != tokens) {
        throw InvalidArgument("motion module: region labels do not match the token count");
    }
    if (x.size(0) % frames != 0) {
        throw InvalidArgument("motion module: batch is not a whole number of sequences");
    }
    const auto b = x.size(0) / frames;
    const auto d = x.size(2);
    auto seq = x.reshape({b, frames * tokens, d});
    auto h = norm(seq) + pe;
    auto y = attn(h, h, logit_bias);
    torch::Tensor out;
    if (masked && !upper_attends) {
        // Upper tokens pass through untouched; lower tokens take the residual update.
        out = torch::where(lower.view({1, -1, 1}), seq + y, seq);
    } else {
        out = seq + y;
    }
    return out.reshape({b * frames, tokens, d});
}

MotionStackImpl::MotionStackImpl(const ModelConfig& cfg) {
    for (int i = 0; i < 3; ++i) {
        blocks.push_back(register_module(
            "block" + std::to_string(i),
            MotionModule(cfg.attn_width(), cfg.heads, cfg.frames, cfg.attn_size(), cfg.attn_size(),
                         cfg.boundary_row(), cfg.masked_attention, cfg.upper_attends)));
    }
}

AudioEncoderImpl::AudioEncoderImpl(const ModelConfig& cfg) {
    fc1 = register_module("fc1", torch::nn::Linear(cfg.audio_bins, cfg.audio_dim));
    fc2 = register_module("fc2", torch::nn::Linear(cfg.audio_dim, cfg.audio_dim));
    offset = register_parameter("offset", torch::randn({cfg.audio_tokens(), cfg.audio_dim}) * 0.02);
}

torch::Tensor AudioEncoderImpl::forward(const torch::Tensor& windows) {
    if (windows.dim() != 3 || windows.size(1) != offset.size(0)) {
        throw InvalidArgument("audio encoder: expected B x window x bins");
    }
    return fc2(F::silu(fc1(windows))) + offset;
}

torch::Tensor audio_windows(const torch::Tensor& features, const std::vector<int>& frames, int radius) {
    const auto total = features.size(0);
    const int k = 2 * radius + 1;
    std::vector<std::int64_t> index;
    std::vector<float> valid;
    index.reserve(frames.size() * k);
    for (int f : frames) {
        for (int o = -radius; o <= radius; ++o) {
            const std::int64_t i = f + o;
            const bool inside = i >= 0 && i < total;
            index.push_back(inside ? i : 0);
            valid.push_back(inside ? 1.0f : 0.0f);
        }
    }
    auto idx = torch::tensor(index, torch::kInt64);
    auto mask = torch::tensor(valid).to(features.dtype()).unsqueeze(1);
    auto rows = features.index_select(0, idx) * mask;
    return rows.reshape({static_cast<std::int64_t>(frames.size()), k, features.size(1)});
}

// ---------------------------------------------------------------------------------------------
// Denoiser and reference network

namespace {

torch::nn::Sequential make_time_mlp(int base) {
    return torch::nn::Sequential(torch::nn::Linear(base, 4 * base), torch::nn::SiLU(),
                                 torch::nn::Linear(4 * base, 4 * base));
}

// Both conversions return contiguous tensors so that downstream kernels see one memory layout
// whether or not the motion modules ran; otherwise results differ in the last bits.
torch::Tensor to_tokens(const torch::Tensor& h) { return h.flatten(2).transpose(1, 2).contiguous(); }

torch::Tensor from_tokens(const torch::Tensor& t, int64_t size) {
    return t.transpose(1, 2).reshape({t.size(0), t.size(2), size, size}).contiguous();
}

torch::Tensor upsample2(const torch::Tensor& h) {
    return F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

} // namespace

DenoiserImpl::DenoiserImpl(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    const int C = cfg.base_width;
    const int D = cfg.attn_width();
    const int temb = 4 * C;
    time_mlp = register_module("time_mlp", make_time_mlp(C));
    conv_in = register_module("conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * cfg.latent_channels, C, 3).padding(1)));
    down0 = register_module("down0", ResBlock(C, C, temb, cfg.groups));
    downsample = register_module("downsample", torch::nn::Conv2d(torch::nn::Conv2dOptions(C, D, 3).stride(2).padding(1)));
    down1 = register_module("down1", ResBlock(D, D, temb, cfg.groups));
    mid = register_module("mid", ResBlock(D, D, temb, cfg.groups));
    up1 = register_module("up1", ResBlock(2 * D, D, temb, cfg.groups));
    for (int i = 0; i < 3; ++i) {
        tblocks.push_back(register_module("tblock" + std::to_string(i), TBlock(D, cfg.audio_dim, cfg.heads, true)));
    }
    upsample_conv = register_module("upsample_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(D, C, 3).padding(1)));
    up0 = register_module("up0", ResBlock(2 * C, C, temb, cfg.groups));
    norm_out = register_module("norm_out", torch::nn::GroupNorm(cfg.groups, C));
    conv_out = register_module("conv_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(C, cfg.latent_channels, 3).padding(1)));
    pe = register_buffer("pe", position_encoding_2d(cfg.attn_size(), cfg.attn_size(), D));
}

std::vector<int> DenoiserImpl::block_widths() const {
    return std::vector<int>(tblocks.size(), cfg.attn_width());
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& z, const torch::Tensor& masked, const torch::Tensor& t,
                                    const std::vector<torch::Tensor>& ref, const torch::Tensor& audio,
                                    MotionStackImpl* motion) {
    if (!ref.empty() && ref.size() != tblocks.size()) {
        throw ConfigurationError("denoiser: reference feature count does not match the transformer blocks");
    }
    if (motion != nullptr && z.size(0) % cfg.frames != 0) {
        throw InvalidArgument("denoiser: motion modules need whole sequences of " + std::to_string(cfg.frames) + " frames");
    }
    const int S = cfg.attn_size();
    auto temb = time_mlp->forward(timestep_embedding(t, cfg.base_width).to(z.dtype()));
    auto block = [&](std::size_t i, const torch::Tensor& h) {
        auto tok = tblocks[i]->forward(to_tokens(h), pe, ref.empty() ? torch::Tensor() : ref[i], audio);
        if (motion != nullptr) tok = motion->blocks[i]->forward(tok);
        return from_tokens(tok, S);
    };
    auto h0 = down0(conv_in(torch::cat({z, masked}, 1)), temb);
    auto h = block(0, down1(downsample(h0), temb));
    auto h1 = h;
    h = block(1, mid(h, temb));
    h = block(2, up1(torch::cat({h, h1}, 1), temb));
    h = upsample_conv(upsample2(h));
    h = up0(torch::cat({h, h0}, 1), temb);
    return conv_out(F::silu(norm_out(h)));
}

ReferenceNetImpl::ReferenceNetImpl(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    const int C = cfg.base_width;
    const int D = cfg.attn_width();
    const int temb = 4 * C;
    time_mlp = register_module("time_mlp", make_time_mlp(C));
    conv_in = register_module("conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.latent_channels, C, 3).padding(1)));
    down0 = register_module("down0", ResBlock(C, C, temb, cfg.groups));
    downsample = register_module("downsample", torch::nn::Conv2d(torch::nn::Conv2dOptions(C, D, 3).stride(2).padding(1)));
    down1 = register_module("down1", ResBlock(D, D, temb, cfg.groups));
    mid = register_module("mid", ResBlock(D, D, temb, cfg.groups));
    up1 = register_module("up1", ResBlock(2 * D, D, temb, cfg.groups));
    for (int i = 0; i < 3; ++i) {
        tblocks.push_back(register_module("tblock" + std::to_string(i), TBlock(D, cfg.audio_dim, cfg.heads, false)));
    }
    pe = register_buffer("pe", position_encoding_2d(cfg.attn_size(), cfg.attn_size(), D));
}

std::vector<int> ReferenceNetImpl::block_widths() const {
    return std::vector<int>(tblocks.size(), cfg.attn_width());
}

std::vector<torch::Tensor> ReferenceNetImpl::forward(const torch::Tensor& ref_latent) {
    const int S = cfg.attn_size();
    auto t = torch::zeros({ref_latent.size(0)});
    auto temb = time_mlp->forward(timestep_embedding(t, cfg.base_width).to(ref_latent.dtype()));
    std::vector<torch::Tensor> features(tblocks.size());
    auto block = [&](std::size_t i, const torch::Tensor& h) {
        return from_tokens(tblocks[i]->forward(to_tokens(h), pe, {}, {}, &features[i]), S);
    };
    auto h0 = down0(conv_in(ref_latent), temb);
    auto h = block(0, down1(downsample(h0), temb));
    auto h1 = h;
    h = block(1, mid(h, temb));
    // The last block is only needed up to its self-attention input; its remaining layers exist to
    // keep the blockwise mirror of the denoiser but never run.
    features[2] = tblocks[2]->ln_self(to_tokens(up1(torch::cat({h, h1}, 1), temb))) + pe;
    return features;
}

} // namespace highsync::nets
