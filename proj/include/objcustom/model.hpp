#pragma once

// The full customization model: frozen encoders and text encoder, trainable
// projectors, fuse/local MLPs, denoiser, feature mask and null tokens.

#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "objcustom/diffusion.hpp"
#include "objcustom/id_extractor.hpp"
#include "objcustom/injection.hpp"

namespace objcustom {

// Which identity encoders feed the conditions. A disabled path contributes a
// zero class token to the fuse input and nothing to the local sum.
enum class IdEncoders { Ensemble, DetailOnly, ReconOnly };
std::string to_string(IdEncoders e);
IdEncoders id_encoders_from_string(const std::string& s);

struct ModelConfig {
    id::EncoderSpec detail{id::EncoderRole::Detail, 16, 4, 32, "toy:11", false};
    id::EncoderSpec recon{id::EncoderRole::Reconstruction, 16, 4, 32, "toy:23", false};
    // Frozen extractor for f_tar; its width must equal d_model.
    id::EncoderSpec target{id::EncoderRole::Reconstruction, 16, 4, 32, "toy:37", true};
    diffusion::DenoiserConfig unet;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    diffusion::CodecMode codec = diffusion::CodecMode::Identity;
    double codec_scale = 1.0;
    int image_size = 16;
    std::uint64_t text_seed = 7;
    int null_global_tokens = 1;
    int null_local_tokens = 1;
    IdEncoders id_encoders = IdEncoders::Ensemble;
    bool crop_to_mask = true;
    double crop_margin = 0.1;

    int d_model() const { return unet.d_model; }
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Frozen encoder outputs for one reference/target pair; immutable once built.
struct PreparedSample {
    id::EncoderOutput detail;  // raw (unprojected) tokens
    id::EncoderOutput recon;
    Tensor f_tar;              // [1 x d_model]
    Tensor x0;                 // target latent [s*s x c]
    inject::TextEmbedding text;
};

class CustomizerModel {
public:
    static std::unique_ptr<CustomizerModel> create(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ad::ParamStore& params() { return *params_; }
    const ad::ParamStore& params() const { return *params_; }

    const id::FrozenEncoder& detail_encoder() const { return detail_; }
    const id::FrozenEncoder& recon_encoder() const { return recon_; }
    const id::FrozenEncoder& target_encoder() const { return target_; }
    const inject::ToyTextEncoder& text_encoder() const { return text_; }
    const diffusion::NoiseSchedule& schedule() const { return schedule_; }
    const diffusion::LatentCodec& codec() const { return codec_; }
    const diffusion::Denoiser& unet() const { return unet_; }

    const nn::Mlp2& detail_projector() const { return detail_proj_; }
    const nn::Mlp2& recon_projector() const { return recon_proj_; }
    const nn::Mlp2& fuse() const { return fuse_; }
    const nn::Mlp2& local_detail() const { return local_detail_; }
    const nn::Mlp2& local_recon() const { return local_recon_; }
    ad::Param& mask_logits() const { return *mask_logits_; }
    ad::Param& null_global() const { return *null_global_; }
    ad::Param& null_local() const { return *null_local_; }

    bool uses_detail() const { return cfg_.id_encoders != IdEncoders::ReconOnly; }
    bool uses_recon() const { return cfg_.id_encoders != IdEncoders::DetailOnly; }

    PreparedSample prepare(const ImageTensor& ref, const SegMask& ref_mask, const ImageTensor& target,
                           const std::string& caption, const std::string& class_word) const;
    // f_tar for an arbitrary image.
    Tensor target_feature(const ImageTensor& image) const;
    Tensor encode_latent(const ImageTensor& image) const;
    ImageTensor decode_latent(const Tensor& z) const;

    // Combined hash of every frozen weight; used by the frozen-parameter audit.
    std::uint64_t frozen_fingerprint() const;

private:
    CustomizerModel() = default;

    ModelConfig cfg_;
    id::FrozenEncoder detail_, recon_, target_;
    inject::ToyTextEncoder text_{32};
    diffusion::NoiseSchedule schedule_;
    diffusion::LatentCodec codec_;
    std::unique_ptr<ad::ParamStore> params_;
    nn::Mlp2 detail_proj_, recon_proj_, fuse_, local_detail_, local_recon_;
    diffusion::Denoiser unet_;
    ad::Param* mask_logits_ = nullptr;
    ad::Param* null_global_ = nullptr;
    ad::Param* null_local_ = nullptr;
};

}  // namespace objcustom
