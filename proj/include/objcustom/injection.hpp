#pragma once

// Dual-level ID injection. The global path swaps the prompt's class word for
// a token fused from the text and both encoders' class tokens; the local path
// sums two MLP-projected patch sequences into a second attention context.

#include <string>
#include <vector>

#include "objcustom/autodiff.hpp"
#include "objcustom/nn.hpp"

namespace objcustom::inject {

struct TextEmbedding {
    Tensor tokens;        // [seq_len x d_model]
    int span_start = 0;   // class word occupies [span_start, span_end)
    int span_end = 0;

    void validate() const;
};

struct GlobalCondition {
    Tensor tokens;  // [seq_len - span + 1 x d_model]
};

struct LocalCondition {
    Tensor tokens;  // [n_patches x d_model]
};

struct AttentionWeights {
    Tensor w_q, w_k, w_v;  // [d_in x d_attn]
};

// Frozen word-level text encoder: each lowercase word maps to a fixed
// Gaussian vector derived from its hash, plus a sinusoidal position code.
class ToyTextEncoder {
public:
    explicit ToyTextEncoder(int d_model, std::uint64_t seed = 7);

    static std::vector<std::string> tokenize(const std::string& text);
    Tensor embed_tokens(const std::vector<std::string>& words) const;
    // Throws std::invalid_argument naming the word when class_word is not in prompt.
    TextEmbedding embed(const std::string& prompt, const std::string& class_word) const;

    int d_model() const { return d_model_; }
    std::uint64_t seed() const { return seed_; }

private:
    int d_model_;
    std::uint64_t seed_;
};

// Mean of the class-word span rows, [1 x d_model].
Tensor class_word_embedding(const TextEmbedding& text);

Tensor fuse_class_token(const Tensor& text_C, const Tensor& dino_C, const Tensor& mae_C, const nn::Mlp2& fuse);
GlobalCondition build_global_condition(const TextEmbedding& text, const Tensor& fused);
LocalCondition build_local_condition(const Tensor& dino_P, const Tensor& mae_P, const nn::Mlp2& mlp_detail,
                                     const nn::Mlp2& mlp_recon);

// Bilinear resampling matrix taking a src_grid x src_grid token grid to dst_grid x dst_grid.
Tensor grid_resample_matrix(int src_grid, int dst_grid);
// Resamples recon-path patches onto the detail grid when counts differ.
Tensor align_patch_grid(const Tensor& patches, int target_count);

// softmax(Z Wq (c Wk)^T / sqrt(d_attn)) c Wv
Tensor cross_attention(const Tensor& z, const Tensor& c, const AttentionWeights& w);
// The attention matrix of the same computation, [m x n].
Tensor cross_attention_probs(const Tensor& z, const Tensor& c, const AttentionWeights& w);

// ---- graph forms, batched over samples ------------------------------------

ad::Var fuse_class_token(ad::Var text_C, ad::Var dino_C, ad::Var mae_C, const nn::Mlp2& fuse);

// Replaces each sample's class-word span with its row of `fused` ([N x d]).
// Writes per-sample row offsets of the result into `offsets` (size N+1).
ad::Var splice_global(const std::vector<const TextEmbedding*>& texts, ad::Var fused, std::vector<int>& offsets);

ad::Var build_local_condition(ad::Var dino_P, ad::Var mae_P, const nn::Mlp2& mlp_detail, const nn::Mlp2& mlp_recon);

}  // namespace objcustom::inject
