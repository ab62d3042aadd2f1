#include "objcustom/model.hpp"

#include "objcustom/json_util.hpp"

namespace objcustom {

using nlohmann::json;

std::string to_string(IdEncoders e) {
    switch (e) {
        case IdEncoders::Ensemble: return "ensemble";
        case IdEncoders::DetailOnly: return "detail_only";
        case IdEncoders::ReconOnly: return "recon_only";
    }
    return "ensemble";
}

IdEncoders id_encoders_from_string(const std::string& s) {
    if (s == "ensemble") return IdEncoders::Ensemble;
    if (s == "detail_only") return IdEncoders::DetailOnly;
    if (s == "recon_only") return IdEncoders::ReconOnly;
    throw ConfigError("unknown id_encoders '" + s + "' (ensemble | detail_only | recon_only)");
}

void ModelConfig::validate() const {
    detail.validate();
    recon.validate();
    target.validate();
    unet.validate();
    if (detail.role != id::EncoderRole::Detail) throw ConfigError("model.detail must have the detail role");
    if (recon.role != id::EncoderRole::Reconstruction)
        throw ConfigError("model.recon must have the reconstruction role");
    if (target.d_enc != unet.d_model) throw ConfigError("model.target.d_enc must equal unet.d_model");
    if (!(beta_start > 0 && beta_end < 1 && beta_start <= beta_end)) throw ConfigError("model: bad beta range");
    if (image_size <= 0) throw ConfigError("model.image_size must be positive");
    if (null_global_tokens < 1 || null_local_tokens < 1) throw ConfigError("model: null token counts must be >= 1");
    if (!(crop_margin >= 0)) throw ConfigError("model.crop_margin must be >= 0");
    diffusion::LatentCodec codec_probe{codec, codec_scale};
    if (unet.latent_channels != codec_probe.latent_channels(3) || unet.latent_size != codec_probe.latent_size(image_size))
        throw ConfigError("model: unet latent shape does not match the codec (" +
                          std::to_string(codec_probe.latent_size(image_size)) + "^2 x " +
                          std::to_string(codec_probe.latent_channels(3)) + ")");
}

namespace {

json spec_json(const id::EncoderSpec& s) {
    return {{"role", id::to_string(s.role)}, {"input_size", s.input_size}, {"patch_size", s.patch_size},
            {"d_enc", s.d_enc},             {"weights_ref", s.weights_ref}, {"positional", s.positional}};
}

id::EncoderSpec spec_from(const json& j, const std::string& where, id::EncoderSpec s) {
    StrictReader r(j, where);
    std::string role = id::to_string(s.role);
    r.get("role", role).get("input_size", s.input_size).get("patch_size", s.patch_size).get("d_enc", s.d_enc);
    r.get("weights_ref", s.weights_ref).get("positional", s.positional);
    r.finish();
    s.role = id::role_from_string(role);
    return s;
}

}  // namespace

json to_json(const ModelConfig& c) {
    return {{"detail", spec_json(c.detail)},
            {"recon", spec_json(c.recon)},
            {"target", spec_json(c.target)},
            {"unet",
             {{"latent_channels", c.unet.latent_channels},
              {"latent_size", c.unet.latent_size},
              {"base_width", c.unet.base_width},
              {"depth", c.unet.depth},
              {"heads", c.unet.heads},
              {"d_model", c.unet.d_model},
              {"T", c.unet.T}}},
            {"beta_start", c.beta_start},
            {"beta_end", c.beta_end},
            {"codec", diffusion::to_string(c.codec)},
            {"codec_scale", c.codec_scale},
            {"image_size", c.image_size},
            {"text_seed", c.text_seed},
            {"null_global_tokens", c.null_global_tokens},
            {"null_local_tokens", c.null_local_tokens},
            {"id_encoders", to_string(c.id_encoders)},
            {"crop_to_mask", c.crop_to_mask},
            {"crop_margin", c.crop_margin}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    StrictReader r(j, "model");
    if (const auto* s = r.child("detail")) c.detail = spec_from(*s, "model.detail", c.detail);
    if (const auto* s = r.child("recon")) c.recon = spec_from(*s, "model.recon", c.recon);
    if (const auto* s = r.child("target")) c.target = spec_from(*s, "model.target", c.target);
    if (const auto* u = r.child("unet")) {
        StrictReader ur(*u, "model.unet");
        ur.get("latent_channels", c.unet.latent_channels).get("latent_size", c.unet.latent_size);
        ur.get("base_width", c.unet.base_width).get("depth", c.unet.depth).get("heads", c.unet.heads);
        ur.get("d_model", c.unet.d_model).get("T", c.unet.T);
        ur.finish();
    }
    std::string codec = diffusion::to_string(c.codec), ids = to_string(c.id_encoders);
    r.get("beta_start", c.beta_start).get("beta_end", c.beta_end).get("codec", codec).get("codec_scale", c.codec_scale);
    r.get("image_size", c.image_size).get("text_seed", c.text_seed);
    r.get("null_global_tokens", c.null_global_tokens).get("null_local_tokens", c.null_local_tokens);
    r.get("id_encoders", ids).get("crop_to_mask", c.crop_to_mask).get("crop_margin", c.crop_margin);
    r.finish();
    c.codec = diffusion::codec_from_string(codec);
    c.id_encoders = id_encoders_from_string(ids);
    c.validate();
    return c;
}

std::unique_ptr<CustomizerModel> CustomizerModel::create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::unique_ptr<CustomizerModel> m(new CustomizerModel());
    m->cfg_ = cfg;
    m->detail_ = id::FrozenEncoder::load(cfg.detail);
    m->recon_ = id::FrozenEncoder::load(cfg.recon);
    m->target_ = id::FrozenEncoder::load(cfg.target);
    m->text_ = inject::ToyTextEncoder(cfg.d_model(), cfg.text_seed);
    m->schedule_ = diffusion::NoiseSchedule::linear(cfg.unet.T, cfg.beta_start, cfg.beta_end);
    m->codec_ = {cfg.codec, cfg.codec_scale};
    m->params_ = std::make_unique<ad::ParamStore>();

    const int d = cfg.d_model();
    std::mt19937_64 rng(seed);
    auto& ps = *m->params_;
    m->detail_proj_ = nn::Mlp2::create(ps, "proj.detail", cfg.detail.d_enc, d, d, rng);
    m->recon_proj_ = nn::Mlp2::create(ps, "proj.recon", cfg.recon.d_enc, d, d, rng);
    m->fuse_ = nn::Mlp2::create(ps, "fuse", 3 * d, d, d, rng);
    m->local_detail_ = nn::Mlp2::create(ps, "local.detail", d, d, d, rng);
    m->local_recon_ = nn::Mlp2::create(ps, "local.recon", d, d, d, rng);
    m->unet_ = diffusion::Denoiser::create(ps, cfg.unet, rng);
    m->mask_logits_ = &ps.add("mask.logits", Tensor(1, d), true, false);
    m->null_global_ = &ps.add("null.global", Tensor(cfg.null_global_tokens, d), true, false);
    m->null_local_ = &ps.add("null.local", Tensor(cfg.null_local_tokens, d), true, false);
    return m;
}

PreparedSample CustomizerModel::prepare(const ImageTensor& ref, const SegMask& ref_mask, const ImageTensor& target,
                                      const std::string& caption, const std::string& class_word) const {
    const id::ExtractOptions opt{cfg_.crop_to_mask, cfg_.crop_margin};
    const ImageTensor input = id::prepare_reference(ref, ref_mask, opt);
    PreparedSample s;
    s.detail = detail_.encode(input);
    s.recon = recon_.encode(input);
    s.f_tar = target_feature(target);
    s.x0 = encode_latent(target);
    s.text = text_.embed(caption, class_word);
    return s;
}

Tensor CustomizerModel::target_feature(const ImageTensor& image) const { return target_.encode(image).class_token; }

Tensor CustomizerModel::encode_latent(const ImageTensor& image) const {
    const ImageTensor small =
        image.height == cfg_.image_size && image.width == cfg_.image_size ? image : resize(image, cfg_.image_size, cfg_.image_size);
    return codec_.encode(small);
}

ImageTensor CustomizerModel::decode_latent(const Tensor& z) const { return codec_.decode(z, cfg_.image_size, 3); }

std::uint64_t CustomizerModel::frozen_fingerprint() const {
    std::uint64_t h = detail_.fingerprint();
    h = h * 1099511628211ull ^ recon_.fingerprint();
    h = h * 1099511628211ull ^ target_.fingerprint();
    const Tensor probe = text_.embed_tokens({"probe", "words"});
    std::string_view bytes(reinterpret_cast<const char*>(probe.data.data()), probe.size() * sizeof(double));
    return h * 1099511628211ull ^ stable_hash(bytes);
}

}  // namespace objcustom
