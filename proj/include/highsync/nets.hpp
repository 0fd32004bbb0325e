#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

namespace highsync::nets {

// Architecture hyper-parameters shared by every network.
struct ModelConfig {
    int image_size = 64;
    int image_channels = 3;
    int ae_factor = 4;         // fixed: two stride-2 stages
    int latent_channels = 4;
    int ae_width = 32;
    int base_width = 32;       // denoiser width at the 16x16 level; attention level uses 2x
    int heads = 4;
    int groups = 8;            // GroupNorm groups
    int audio_bins = 16;
    int audio_dim = 64;
    int window_radius = 2;     // audio tokens per frame = 2 * radius + 1
    int frames = 12;           // motion-module sequence length
    double mask_fraction = 0.5;
    bool masked_attention = true;
    bool upper_attends = false;  // upper tokens attend (to everything) instead of bypassing

    int latent_size() const { return image_size / ae_factor; }
    int attn_size() const { return latent_size() / 2; }
    int attn_tokens() const { return attn_size() * attn_size(); }
    int attn_width() const { return 2 * base_width; }
    int audio_tokens() const { return 2 * window_radius + 1; }
    // Latent-grid row (at the attention resolution) where the lower-face region starts.
    int boundary_row() const;
    void validate() const;
};

// Logit used for forbidden attention pairs: exp(kMaskedLogit - max) underflows to exactly 0 in
// float and double.
inline constexpr double kMaskedLogit = -1e9;

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim);
// Sinusoidal encodings; half the channels encode rows, half columns.
torch::Tensor position_encoding_2d(int rows, int cols, int dim);
torch::Tensor position_encoding_1d(int length, int dim);

struct AutoencoderImpl : torch::nn::Module {
    explicit AutoencoderImpl(const ModelConfig& cfg);
    // frames: N x C x H x W in [0, 1]. Latents are divided by the stored scale.
    torch::Tensor encode(const torch::Tensor& frames);
    // Clamped to [0, 1].
    torch::Tensor decode(const torch::Tensor& latents);
    // Unclamped decoder output, used inside training losses.
    torch::Tensor decode_raw(const torch::Tensor& latents);
    torch::Tensor reconstruct_raw(const torch::Tensor& frames);

    ModelConfig cfg;
    torch::nn::Sequential encoder{nullptr};
    torch::nn::Sequential decoder{nullptr};
    torch::Tensor latent_scale;  // buffer: latent std measured after pretraining
};
TORCH_MODULE(Autoencoder);

struct ResBlockImpl : torch::nn::Module {
    ResBlockImpl(int in, int out, int temb_dim, int groups);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    torch::nn::Linear temb_proj{nullptr};
};
TORCH_MODULE(ResBlock);

// Multi-head attention written out explicitly so masks and weights can be inspected.
struct AttentionImpl : torch::nn::Module {
    AttentionImpl(int query_dim, int context_dim, int heads, bool bias, bool zero_out);
    // query: B x Nq x D, context: B x Nk x Dc, logit_bias: Nq x Nk (added before softmax) or undefined.
    torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& context,
                          const torch::Tensor& logit_bias = {});

    int heads;
    torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};
    bool record = false;
    torch::Tensor last_weights;  // B x heads x Nq x Nk when record is set
};
TORCH_MODULE(Attention);

struct FeedForwardImpl : torch::nn::Module {
    FeedForwardImpl(int dim, int mult);
    torch::Tensor forward(const torch::Tensor& x);
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(FeedForward);

// Transformer block: self-attention, then (denoiser only) reference attention and audio
// attention, then a feed-forward layer; all pre-norm with residuals.
struct TBlockImpl : torch::nn::Module {
    TBlockImpl(int dim, int audio_dim, int heads, bool cross);
    // x: B x N x D; pe: N x D. ref: B x N x D or undefined (no reference contribution).
    // feature (optional out): the self-attention input, which the reference network exports.
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& pe, const torch::Tensor& ref,
                          const torch::Tensor& audio, torch::Tensor* feature = nullptr);

    bool cross;
    torch::nn::LayerNorm ln_self{nullptr}, ln_ref{nullptr}, ln_audio{nullptr}, ln_ff{nullptr};
    Attention self_attn{nullptr}, ref_attn{nullptr}, audio_attn{nullptr};
    FeedForward ff{nullptr};
};
TORCH_MODULE(TBlock);

// Token labels for the attention grid: true where the token is in the lower-face region.
torch::Tensor lower_region(int rows, int cols, int boundary_row);

// Spatio-temporal attention over all F x N tokens of a sequence. With masking, lower queries
// see only lower keys and upper tokens bypass the module.
struct MotionModuleImpl : torch::nn::Module {
    MotionModuleImpl(int dim, int heads, int frames, int rows, int cols, int boundary_row, bool masked,
                     bool upper_attends);
    // x: (B * F) x N x D with F == frames.
    torch::Tensor forward(const torch::Tensor& x);

    int frames, tokens;
    bool masked, upper_attends;
    torch::nn::LayerNorm norm{nullptr};
    Attention attn{nullptr};
    torch::Tensor pe;          // buffer: (F * N) x D
    torch::Tensor lower;       // F * N booleans
    torch::Tensor logit_bias;  // buffer: (F * N) x (F * N)
};
TORCH_MODULE(MotionModule);

// One motion module per transformer block of the denoiser.
struct MotionStackImpl : torch::nn::Module {
    explicit MotionStackImpl(const ModelConfig& cfg);
    std::vector<MotionModule> blocks;
};
TORCH_MODULE(MotionStack);

// Per-frame front-end features (bins) -> window tokens with a learned offset embedding.
struct AudioEncoderImpl : torch::nn::Module {
    explicit AudioEncoderImpl(const ModelConfig& cfg);
    // windows: B x K x bins -> B x K x audio_dim
    torch::Tensor forward(const torch::Tensor& windows);
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
    torch::Tensor offset;
};
TORCH_MODULE(AudioEncoder);

// Window of front-end rows centred on each requested frame, zero-padded past the clip ends.
// features: T x bins; returns frames.size() x K x bins.
torch::Tensor audio_windows(const torch::Tensor& features, const std::vector<int>& frames, int radius);

struct DenoiserImpl : torch::nn::Module {
    explicit DenoiserImpl(const ModelConfig& cfg);
    // z, masked: (B * F) x c x h x w; t: (B * F) timesteps; ref: one feature per transformer block,
    // each (B * F) x N x D, or empty for the unconditional branch; audio: (B * F) x K x A encoded
    // tokens. Motion modules run only when `motion` is given, in which case F must equal cfg.frames.
    torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& masked, const torch::Tensor& t,
                          const std::vector<torch::Tensor>& ref, const torch::Tensor& audio,
                          MotionStackImpl* motion = nullptr);
    std::vector<int> block_widths() const;

    ModelConfig cfg;
    torch::nn::Sequential time_mlp{nullptr};
    torch::nn::Conv2d conv_in{nullptr}, downsample{nullptr}, upsample_conv{nullptr}, conv_out{nullptr};
    ResBlock down0{nullptr}, down1{nullptr}, mid{nullptr}, up1{nullptr}, up0{nullptr};
    std::vector<TBlock> tblocks;
    torch::nn::GroupNorm norm_out{nullptr};
    torch::Tensor pe;  // buffer: N x D
};
TORCH_MODULE(Denoiser);

// Mirror of the denoiser up to its last transformer block; exports the self-attention input of
// each block. Runs without noise at timestep 0.
struct ReferenceNetImpl : torch::nn::Module {
    explicit ReferenceNetImpl(const ModelConfig& cfg);
    std::vector<torch::Tensor> forward(const torch::Tensor& ref_latent);
    std::vector<int> block_widths() const;

    ModelConfig cfg;
    torch::nn::Sequential time_mlp{nullptr};
    torch::nn::Conv2d conv_in{nullptr}, downsample{nullptr};
    ResBlock down0{nullptr}, down1{nullptr}, mid{nullptr}, up1{nullptr};
    std::vector<TBlock> tblocks;
    torch::Tensor pe;
};
TORCH_MODULE(ReferenceNet);

} // namespace highsync::nets
