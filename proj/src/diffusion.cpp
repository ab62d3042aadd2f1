#include "objcustom/diffusion.hpp"

#include <cmath>
#include <numbers>

namespace objcustom::diffusion {

// ---- schedule / forward process ------------------------------------------

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("noise schedule needs T >= 1");
    std::vector<double> betas(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t)
        betas[static_cast<std::size_t>(t)] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
    return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    NoiseSchedule s;
    s.betas = std::move(betas);
    double acc = 1.0;
    for (double b : s.betas) {
        s.alphas.push_back(1.0 - b);
        acc *= 1.0 - b;
        s.alpha_bars.push_back(acc);
    }
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    if (betas.empty()) throw ConfigError("empty noise schedule");
    for (std::size_t t = 0; t < betas.size(); ++t) {
        if (!(betas[t] > 0.0 && betas[t] < 1.0)) throw ConfigError("beta_t must lie in (0,1)");
        if (t > 0 && !(alpha_bars[t] < alpha_bars[t - 1])) throw ConfigError("alpha_bar must be strictly decreasing");
    }
}

Tensor forward_diffuse(const NoiseSchedule& schedule, const Tensor& x0, int t, const Tensor& eps) {
    if (t < 0 || t >= schedule.T())
        throw std::out_of_range("timestep " + std::to_string(t) + " outside [0," + std::to_string(schedule.T()) + ")");
    require_shape(x0.same_shape(eps), "forward_diffuse: x0 and eps differ in shape");
    const double a = std::sqrt(schedule.alpha_bars[static_cast<std::size_t>(t)]);
    const double b = std::sqrt(1.0 - schedule.alpha_bars[static_cast<std::size_t>(t)]);
    Tensor xt(x0.rows, x0.cols);
    for (std::size_t i = 0; i < xt.size(); ++i) xt.data[i] = a * x0.data[i] + b * eps.data[i];
    return xt;
}

// ---- codec ---------------------------------------------------------------

std::string to_string(CodecMode m) { return m == CodecMode::Identity ? "identity" : "tiny_autoencoder"; }

CodecMode codec_from_string(const std::string& s) {
    if (s == "identity") return CodecMode::Identity;
    if (s == "tiny_autoencoder") return CodecMode::TinyAutoencoder;
    throw ConfigError("unknown codec mode '" + s + "'");
}

int LatentCodec::latent_channels(int image_channels) const {
    return mode == CodecMode::Identity ? image_channels : 4 * image_channels;
}

int LatentCodec::latent_size(int image_size) const {
    if (mode == CodecMode::Identity) return image_size;
    if (image_size % 2 != 0) throw ConfigError("tiny_autoencoder codec needs an even image size");
    return image_size / 2;
}

Tensor LatentCodec::encode(const ImageTensor& img) const {
    Tensor x = to_rows(img);
    for (auto& v : x.data) v = scale * (2.0 * v - 1.0);
    if (mode == CodecMode::Identity) return x;
    const int s = img.height / 2, c = img.channels;
    require_shape(img.height == img.width && img.height % 2 == 0, "tiny_autoencoder: need an even square image");
    Tensor z(s * s, 4 * c);
    for (int y = 0; y < s; ++y)
        for (int xx = 0; xx < s; ++xx)
            for (int k = 0; k < c; ++k) {
                const double a = x((2 * y) * img.width + 2 * xx, k), b = x((2 * y) * img.width + 2 * xx + 1, k);
                const double d = x((2 * y + 1) * img.width + 2 * xx, k), e = x((2 * y + 1) * img.width + 2 * xx + 1, k);
                const int r = y * s + xx;
                z(r, 4 * k + 0) = 0.5 * (a + b + d + e);
                z(r, 4 * k + 1) = 0.5 * (a - b + d - e);
                z(r, 4 * k + 2) = 0.5 * (a + b - d - e);
                z(r, 4 * k + 3) = 0.5 * (a - b - d + e);
            }
    return z;
}

ImageTensor LatentCodec::decode(const Tensor& z, int image_size, int image_channels) const {
    Tensor x;
    if (mode == CodecMode::Identity) {
        require_shape(z.rows == image_size * image_size && z.cols == image_channels, "decode: latent shape mismatch");
        x = z;
    } else {
        const int s = image_size / 2;
        require_shape(z.rows == s * s && z.cols == 4 * image_channels, "decode: latent shape mismatch");
        x = Tensor(image_size * image_size, image_channels);
        for (int y = 0; y < s; ++y)
            for (int xx = 0; xx < s; ++xx)
                for (int k = 0; k < image_channels; ++k) {
                    const int r = y * s + xx;
                    const double ll = z(r, 4 * k), lh = z(r, 4 * k + 1), hl = z(r, 4 * k + 2), hh = z(r, 4 * k + 3);
                    x((2 * y) * image_size + 2 * xx, k) = 0.5 * (ll + lh + hl + hh);
                    x((2 * y) * image_size + 2 * xx + 1, k) = 0.5 * (ll - lh + hl - hh);
                    x((2 * y + 1) * image_size + 2 * xx, k) = 0.5 * (ll + lh - hl - hh);
                    x((2 * y + 1) * image_size + 2 * xx + 1, k) = 0.5 * (ll - lh - hl + hh);
                }
    }
    for (auto& v : x.data) v = (v / scale + 1.0) / 2.0;
    return from_rows(x, image_size, image_size, true);
}

// ---- denoiser ------------------------------------------------------------

void DenoiserConfig::validate() const {
    if (depth < 1) throw ConfigError("denoiser depth must be >= 1");
    if (latent_size <= 0 || latent_size % (1 << depth) != 0)
        throw ConfigError("latent_size must be divisible by 2^depth");
    if (heads < 1 || base_width % heads != 0) throw ConfigError("base_width must be divisible by heads");
    if (latent_channels < 1 || d_model < 1 || T < 1) throw ConfigError("denoiser widths and T must be positive");
}

namespace {

AttentionBlock make_attention(ad::ParamStore& store, const std::string& name, int width, int d_cond,
                              std::mt19937_64& rng, bool zero_out) {
    AttentionBlock a;
    a.q = nn::Linear::create(store, name + ".q", width, width, rng, false);
    a.k = nn::Linear::create(store, name + ".k", d_cond, width, rng, false);
    a.v = nn::Linear::create(store, name + ".v", d_cond, width, rng, false);
    a.o = nn::Linear::create(store, name + ".o", width, width, rng, true, zero_out ? 0.0 : 0.5);
    return a;
}

ResBlock make_res(ad::ParamStore& store, const std::string& name, int width, std::mt19937_64& rng) {
    ResBlock r;
    r.conv1 = nn::Conv3x3::create(store, name + ".conv1", width, width, rng);
    r.conv2 = nn::Conv3x3::create(store, name + ".conv2", width, width, rng, 0.5);
    r.time_proj = nn::Linear::create(store, name + ".time", width, width, rng);
    return r;
}

}  // namespace

ad::Var AttentionBlock::operator()(ad::Var h, const CondBatch& cond, int rows_per_sample, int heads) const {
    kernels::AttentionLayout layout;
    layout.heads = heads;
    layout.k_offsets = cond.offsets;
    const int n = static_cast<int>(cond.offsets.size()) - 1;
    require_shape(h.rows() == n * rows_per_sample, "attention block: batch size differs between latents and condition");
    for (int s = 0; s <= n; ++s) layout.q_offsets.push_back(s * rows_per_sample);
    const double sc = 1.0 / std::sqrt(static_cast<double>(q.out() / heads));
    ad::Var att = ad::attention(q(h), k(cond.tokens), v(cond.tokens), std::move(layout), sc);
    return ad::add(h, o(att));
}

ad::Var ResBlock::operator()(ad::Var x, ad::Var temb, int n, int s) const {
    ad::Var h = conv1(ad::silu(x), n, s, s);
    h = ad::add_segments(h, time_proj(ad::silu(temb)), s * s);
    h = conv2(ad::silu(h), n, s, s);
    return ad::add(x, h);
}

Denoiser Denoiser::create(ad::ParamStore& store, const DenoiserConfig& cfg, std::mt19937_64& rng,
                          const std::string& prefix) {
    cfg.validate();
    Denoiser d;
    d.cfg_ = cfg;
    const int c = cfg.base_width;
    d.time_fc1_ = nn::Linear::create(store, prefix + ".time.fc1", c, c, rng);
    d.time_fc2_ = nn::Linear::create(store, prefix + ".time.fc2", c, c, rng);
    d.conv_in_ = nn::Conv3x3::create(store, prefix + ".conv_in", cfg.latent_channels, c, rng);
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string n = prefix + ".down" + std::to_string(l);
        d.down_res_.push_back(make_res(store, n + ".res", c, rng));
        d.down_text_.push_back(make_attention(store, n + ".text_attn", c, cfg.d_model, rng, false));
    }
    d.mid_ = make_res(store, prefix + ".mid", c, rng);
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string n = prefix + ".up" + std::to_string(l);
        d.up_skip_.push_back(nn::Linear::create(store, n + ".skip", 2 * c, c, rng));
        d.up_res_.push_back(make_res(store, n + ".res", c, rng));
        d.up_text_.push_back(make_attention(store, n + ".text_attn", c, cfg.d_model, rng, false));
        d.up_local_.push_back(make_attention(store, n + ".local_attn", c, cfg.d_model, rng, true));
    }
    d.conv_out_ = nn::Conv3x3::create(store, prefix + ".conv_out", c, cfg.latent_channels, rng, 0.3);
    return d;
}

std::vector<ad::Param*> Denoiser::local_output_params() const {
    std::vector<ad::Param*> out;
    for (const auto& a : up_local_) {
        out.push_back(&a.o.weight());
        if (a.o.bias() != nullptr) out.push_back(a.o.bias());
    }
    return out;
}

Tensor timestep_embedding(const std::vector<int>& t, int width) {
    Tensor e(static_cast<int>(t.size()), width);
    const int half = width / 2;
    for (std::size_t i = 0; i < t.size(); ++i)
        for (int j = 0; j < half; ++j) {
            const double f = std::exp(-std::log(10000.0) * j / std::max(1, half));
            e(static_cast<int>(i), j) = std::sin(t[i] * f);
            e(static_cast<int>(i), half + j) = std::cos(t[i] * f);
        }
    return e;
}

ad::Var Denoiser::forward(ad::Var x_t, const std::vector<int>& t, const CondBatch& global, const CondBatch* local) const {
    ad::Graph& g = *x_t.g;
    const int n = static_cast<int>(t.size());
    int s = cfg_.latent_size;
    require_shape(x_t.rows() == n * s * s && x_t.cols() == cfg_.latent_channels,
                  "denoiser: latent batch " + x_t.value().shape_str() + " does not match config");
    require_shape(static_cast<int>(global.offsets.size()) == n + 1, "denoiser: global condition batch mismatch");
    if (local != nullptr)
        require_shape(static_cast<int>(local->offsets.size()) == n + 1, "denoiser: local condition batch mismatch");

    ad::Var temb = time_fc2_(ad::silu(time_fc1_(g.constant(timestep_embedding(t, cfg_.base_width)))));
    ad::Var h = conv_in_(x_t, n, s, s);
    std::vector<ad::Var> skips;
    std::vector<int> sizes;
    for (int l = 0; l < cfg_.depth; ++l) {
        h = down_res_[l](h, temb, n, s);
        h = down_text_[l](h, global, s * s, cfg_.heads);
        skips.push_back(h);
        sizes.push_back(s);
        h = ad::avgpool2(h, n, s, s);
        s /= 2;
    }
    h = mid_(h, temb, n, s);
    for (int l = cfg_.depth - 1; l >= 0; --l) {
        h = ad::upsample2(h, n, s, s);
        s *= 2;
        h = up_skip_[l](ad::concat_cols(h, skips[l]));
        h = up_res_[l](h, temb, n, s);
        h = up_text_[l](h, global, s * s, cfg_.heads);
        if (local != nullptr) h = up_local_[l](h, *local, s * s, cfg_.heads);
    }
    return conv_out_(ad::silu(h), n, s, s);
}

Tensor predict_noise(const Denoiser& model, const Tensor& x_t, int t, const inject::GlobalCondition& c_g,
                     int fused_row, const inject::LocalCondition* c_l, const Tensor* f_msk) {
    ad::Graph g;
    Tensor tokens = c_g.tokens;
    if (f_msk != nullptr) {
        require_shape(fused_row >= 0 && fused_row < tokens.rows, "predict_noise: fused row out of range");
        require_shape(f_msk->rows == 1 && f_msk->cols == tokens.cols, "predict_noise: f_msk width mismatch");
        for (int j = 0; j < tokens.cols; ++j) tokens(fused_row, j) += (*f_msk)(0, j);
    }
    CondBatch gb{g.constant(std::move(tokens)), {0, c_g.tokens.rows}};
    std::optional<CondBatch> lb;
    if (c_l != nullptr) lb = CondBatch{g.constant(c_l->tokens), {0, c_l->tokens.rows}};
    return model.forward(g.constant(x_t), {t}, gb, lb ? &*lb : nullptr).value();
}

// ---- guidance / sampling -------------------------------------------------

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double s) {
    require_shape(eps_uncond.same_shape(eps_cond), "cfg_combine: shape mismatch");
    Tensor out(eps_cond.rows, eps_cond.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = (1.0 - s) * eps_uncond.data[i] + s * eps_cond.data[i];
    return out;
}

std::vector<int> sampling_timesteps(int T, int steps) {
    if (steps <= 0) throw std::invalid_argument("sampling steps must be positive");
    if (steps > T) throw std::invalid_argument("sampling steps exceed schedule length");
    std::vector<int> ts;
    for (int i = 0; i < steps; ++i)
        ts.push_back(static_cast<int>(std::lround(T - static_cast<double>(i) * T / steps)) - 1);
    return ts;
}

Tensor ddim_sample(const NoiseSchedule& schedule, const Tensor& x_T, int steps, const NoiseFn& eps_cond,
                   const NoiseFn& eps_uncond, double guidance) {
    const auto ts = sampling_timesteps(schedule.T(), steps);
    Tensor x = x_T;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const double ab = schedule.alpha_bars[static_cast<std::size_t>(t)];
        const double ab_prev = i + 1 < ts.size() ? schedule.alpha_bars[static_cast<std::size_t>(ts[i + 1])] : 1.0;
        const Tensor ec = eps_cond(x, t);
        const Tensor eps = guidance == 1.0 ? ec : cfg_combine(eps_uncond(x, t), ec, guidance);
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        const double pa = std::sqrt(ab_prev), pb = std::sqrt(1.0 - ab_prev);
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double x0 = (x.data[k] - sb * eps.data[k]) / sa;
            x.data[k] = pa * x0 + pb * eps.data[k];
        }
    }
    return x;
}

}  // namespace objcustom::diffusion
