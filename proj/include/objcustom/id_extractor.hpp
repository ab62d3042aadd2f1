#pragma once

// General ID extraction: mask the reference, run it through two frozen
// encoders with complementary roles, and project each encoder's class and
// patch tokens into the injection width with its own two-layer MLP.

#include <cstdint>
#include <memory>
#include <string>

#include "objcustom/autodiff.hpp"
#include "objcustom/image.hpp"
#include "objcustom/nn.hpp"

namespace objcustom::id {

enum class EncoderRole { Detail, Reconstruction };

std::string to_string(EncoderRole r);
EncoderRole role_from_string(const std::string& s);

struct EncoderSpec {
    EncoderRole role = EncoderRole::Detail;
    int input_size = 16;
    int patch_size = 4;
    int d_enc = 32;
    // "toy:<seed>" for the built-in random patch transformer, otherwise an archive path.
    std::string weights_ref = "toy:11";
    // Learned positional table added after the patch embedding.
    bool positional = false;

    int grid() const { return input_size / patch_size; }
    int n_patches() const { return grid() * grid(); }
    int input_channels() const { return role == EncoderRole::Detail ? 1 : 3; }
    void validate() const;
};

struct EncoderOutput {
    Tensor class_token;   // [1 x d_enc]
    Tensor patch_tokens;  // [n_patches x d_enc]
};

// Frozen single-block patch transformer. Detail-role encoders see a
// per-image standardized luminance map, which makes them blind to hue and
// brightness; reconstruction-role encoders see raw RGB.
class FrozenEncoder {
public:
    static FrozenEncoder load(const EncoderSpec& spec);
    static FrozenEncoder random(const EncoderSpec& spec, std::uint64_t seed);

    EncoderOutput encode(const ImageTensor& image) const;
    // Encoder input after resizing and the role-specific front end, [n_patches x p*p*c].
    Tensor patchify(const ImageTensor& image) const;

    const EncoderSpec& spec() const { return spec_; }
    const ad::ParamStore& weights() const { return *weights_; }
    std::uint64_t fingerprint() const;
    void save(const std::filesystem::path& path) const;

private:
    EncoderSpec spec_;
    std::shared_ptr<const ad::ParamStore> weights_;
};

// out[c,y,x] = image[c,y,x] * mask[y,x]
ImageTensor mask_reference(const ImageTensor& image, const SegMask& mask);

// Square crop centred on the mask bounding box, side = (1 + 2*margin) * max(bw, bh).
// Returns the image unchanged when the mask is empty.
ImageTensor crop_to_mask(const ImageTensor& masked, const SegMask& mask, double margin = 0.1);

EncoderOutput encode(const FrozenEncoder& encoder, const ImageTensor& image);

struct ProjectedTokens {
    Tensor class_token;   // [1 x d_model]
    Tensor patch_tokens;  // [n_patches x d_model]
};

ProjectedTokens project_tokens(const EncoderOutput& raw, const nn::Mlp2& projector);

struct IDTokens {
    Tensor dino_C;  // detail path class token [1 x d_model]
    Tensor dino_P;  // detail path patches [detail_patches x d_model]
    Tensor mae_C;   // reconstruction path class token
    Tensor mae_P;   // reconstruction path patches [recon_patches x d_model]
    int detail_patches = 0;
    int recon_patches = 0;
};

struct ExtractOptions {
    bool crop_to_mask = true;
    double margin = 0.1;
};

// Masked reference as fed to the encoders (masking plus optional crop).
ImageTensor prepare_reference(const ImageTensor& image, const SegMask& mask, const ExtractOptions& opt);

IDTokens extract_id(const ImageTensor& image, const SegMask& mask, const FrozenEncoder& detail,
                    const FrozenEncoder& recon, const nn::Mlp2& detail_projector, const nn::Mlp2& recon_projector,
                    const ExtractOptions& opt = {});

}  // namespace objcustom::id
