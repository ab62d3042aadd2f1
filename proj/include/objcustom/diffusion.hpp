#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "objcustom/autodiff.hpp"
#include "objcustom/image.hpp"
#include "objcustom/injection.hpp"
#include "objcustom/nn.hpp"

namespace objcustom::diffusion {

struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 2e-2);
    static NoiseSchedule from_betas(std::vector<double> betas);
    int T() const { return static_cast<int>(betas.size()); }
    void validate() const;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor forward_diffuse(const NoiseSchedule& schedule, const Tensor& x0, int t, const Tensor& eps);

enum class CodecMode { Identity, TinyAutoencoder };

// Identity: z = scale * (2x - 1). TinyAutoencoder: the same affine map followed by an
// orthonormal 2x2 stride-2 Haar convolution (4x channels, half resolution).
struct LatentCodec {
    CodecMode mode = CodecMode::Identity;
    double scale = 1.0;

    int latent_channels(int image_channels) const;
    int latent_size(int image_size) const;
    Tensor encode(const ImageTensor& img) const;  // [s*s x c]
    ImageTensor decode(const Tensor& z, int image_size, int image_channels = 3) const;
};

std::string to_string(CodecMode m);
CodecMode codec_from_string(const std::string& s);

struct DenoiserConfig {
    int latent_channels = 3;
    int latent_size = 16;
    int base_width = 16;
    int depth = 2;
    int heads = 4;
    int d_model = 32;
    int T = 1000;

    void validate() const;
};

// Conditioning sequences for a batch: sample s owns rows [offsets[s], offsets[s+1]).
struct CondBatch {
    ad::Var tokens;
    std::vector<int> offsets;
};

struct AttentionBlock {
    nn::Linear q, k, v, o;
    ad::Var operator()(ad::Var h, const CondBatch& cond, int rows_per_sample, int heads) const;
};

struct ResBlock {
    nn::Conv3x3 conv1, conv2;
    nn::Linear time_proj;
    ad::Var operator()(ad::Var x, ad::Var temb, int n, int s) const;
};

// Toy UNet noise predictor. Every down/up level runs a residual conv block
// followed by text cross-attention over c_g; every up level then adds one
// local cross-attention over c_l whose output projection starts at zero.
class Denoiser {
public:
    Denoiser() = default;
    static Denoiser create(ad::ParamStore& store, const DenoiserConfig& cfg, std::mt19937_64& rng,
                           const std::string& prefix = "unet");

    // x_t: [N*s*s x latent_channels]. `local` may be null for a text-only pass.
    ad::Var forward(ad::Var x_t, const std::vector<int>& t, const CondBatch& global, const CondBatch* local) const;

    const DenoiserConfig& config() const { return cfg_; }
    std::vector<ad::Param*> local_output_params() const;

private:
    DenoiserConfig cfg_;
    nn::Linear time_fc1_, time_fc2_;
    nn::Conv3x3 conv_in_, conv_out_;
    std::vector<ResBlock> down_res_;
    std::vector<AttentionBlock> down_text_;
    ResBlock mid_;
    std::vector<nn::Linear> up_skip_;
    std::vector<ResBlock> up_res_;
    std::vector<AttentionBlock> up_text_;
    std::vector<AttentionBlock> up_local_;
};

Tensor timestep_embedding(const std::vector<int>& t, int width);

// Single-sample prediction. When f_msk is given it is added element-wise to the
// fused class token row of c_g before conditioning.
Tensor predict_noise(const Denoiser& model, const Tensor& x_t, int t, const inject::GlobalCondition& c_g,
                     int fused_row, const inject::LocalCondition* c_l, const Tensor* f_msk = nullptr);

// (1 - s) * eps_uncond + s * eps_cond, i.e. eps_uncond + s * (eps_cond - eps_uncond)
// arranged so s = 0 and s = 1 reproduce their inputs exactly.
Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double s);

// Descending timesteps T-1, ... spaced T/steps apart (trailing spacing).
std::vector<int> sampling_timesteps(int T, int steps);

using NoiseFn = std::function<Tensor(const Tensor& x, int t)>;

// Deterministic DDIM (eta = 0) trajectory from x_T; the last step lands on abar = 1.
// When guidance == 1 the unconditional branch is skipped.
Tensor ddim_sample(const NoiseSchedule& schedule, const Tensor& x_T, int steps, const NoiseFn& eps_cond,
                   const NoiseFn& eps_uncond, double guidance);

}  // namespace objcustom::diffusion
