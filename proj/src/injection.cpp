#include "objcustom/injection.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <stdexcept>

namespace objcustom::inject {

void TextEmbedding::validate() const {
    if (!(0 <= span_start && span_start < span_end && span_end <= tokens.rows))
        throw ShapeError("class word span [" + std::to_string(span_start) + "," + std::to_string(span_end) +
                         ") out of bounds for " + std::to_string(tokens.rows) + " tokens");
}

ToyTextEncoder::ToyTextEncoder(int d_model, std::uint64_t seed) : d_model_(d_model), seed_(seed) {
    if (d_model <= 0) throw ConfigError("text encoder width must be positive");
}

std::vector<std::string> ToyTextEncoder::tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Tensor ToyTextEncoder::embed_tokens(const std::vector<std::string>& words) const {
    Tensor t(static_cast<int>(words.size()), d_model_);
    for (int i = 0; i < t.rows; ++i) {
        std::mt19937_64 rng(stable_hash(words[static_cast<std::size_t>(i)]) ^ seed_);
        std::normal_distribution<double> n(0.0, 1.0);
        for (int j = 0; j < d_model_; ++j) {
            const double freq = std::pow(100.0, -static_cast<double>(j / 2 * 2) / d_model_);
            const double pos = (j % 2 == 0) ? std::sin(i * freq) : std::cos(i * freq);
            t(i, j) = n(rng) + 0.25 * pos;
        }
    }
    return t;
}

TextEmbedding ToyTextEncoder::embed(const std::string& prompt, const std::string& class_word) const {
    const auto words = tokenize(prompt);
    const auto cls = tokenize(class_word);
    if (cls.empty()) throw std::invalid_argument("class word is empty");
    auto it = std::search(words.begin(), words.end(), cls.begin(), cls.end());
    if (it == words.end())
        throw std::invalid_argument("class word '" + class_word + "' does not occur in prompt '" + prompt + "'");
    TextEmbedding e;
    e.tokens = embed_tokens(words);
    e.span_start = static_cast<int>(it - words.begin());
    e.span_end = e.span_start + static_cast<int>(cls.size());
    return e;
}

Tensor class_word_embedding(const TextEmbedding& text) {
    text.validate();
    Tensor out(1, text.tokens.cols);
    for (int r = text.span_start; r < text.span_end; ++r)
        for (int j = 0; j < out.cols; ++j) out(0, j) += text.tokens(r, j);
    for (auto& v : out.data) v /= (text.span_end - text.span_start);
    return out;
}

Tensor fuse_class_token(const Tensor& text_C, const Tensor& dino_C, const Tensor& mae_C, const nn::Mlp2& fuse) {
    ad::Graph g;
    return fuse_class_token(g.constant(text_C), g.constant(dino_C), g.constant(mae_C), fuse).value();
}

GlobalCondition build_global_condition(const TextEmbedding& text, const Tensor& fused) {
    text.validate();
    require_shape(fused.rows == 1 && fused.cols == text.tokens.cols, "build_global_condition: fused token must be [1 x d_model]");
    std::vector<Tensor> parts;
    if (text.span_start > 0) parts.push_back(text.tokens.slice_rows(0, text.span_start));
    parts.push_back(fused);
    if (text.span_end < text.tokens.rows) parts.push_back(text.tokens.slice_rows(text.span_end, text.tokens.rows - text.span_end));
    return {concat_rows(parts)};
}

LocalCondition build_local_condition(const Tensor& dino_P, const Tensor& mae_P, const nn::Mlp2& mlp_detail,
                                     const nn::Mlp2& mlp_recon) {
    ad::Graph g;
    return {build_local_condition(g.constant(dino_P), g.constant(align_patch_grid(mae_P, dino_P.rows)), mlp_detail,
                                  mlp_recon)
                .value()};
}

Tensor grid_resample_matrix(int src_grid, int dst_grid) {
    if (src_grid <= 0 || dst_grid <= 0) throw ShapeError("grid_resample_matrix: grids must be positive");
    // 1-D half-pixel-centred bilinear weights, then the separable outer product.
    Tensor w1(dst_grid, src_grid);
    const double ratio = static_cast<double>(src_grid) / dst_grid;
    for (int i = 0; i < dst_grid; ++i) {
        const double pos = std::clamp((i + 0.5) * ratio - 0.5, 0.0, static_cast<double>(src_grid - 1));
        const int lo = static_cast<int>(std::floor(pos));
        const int hi = std::min(lo + 1, src_grid - 1);
        const double f = pos - lo;
        w1(i, lo) += 1.0 - f;
        w1(i, hi) += f;
    }
    Tensor m(dst_grid * dst_grid, src_grid * src_grid);
    for (int y = 0; y < dst_grid; ++y)
        for (int x = 0; x < dst_grid; ++x)
            for (int sy = 0; sy < src_grid; ++sy)
                for (int sx = 0; sx < src_grid; ++sx) m(y * dst_grid + x, sy * src_grid + sx) = w1(y, sy) * w1(x, sx);
    return m;
}

namespace {
int square_side(int count) {
    const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(count))));
    return s * s == count ? s : -1;
}
}  // namespace

Tensor align_patch_grid(const Tensor& patches, int target_count) {
    if (patches.rows == target_count) return patches;
    const int src = square_side(patches.rows), dst = square_side(target_count);
    if (src < 0 || dst < 0)
        throw ShapeError("cannot reconcile patch grids of " + std::to_string(patches.rows) + " and " +
                         std::to_string(target_count) + " tokens (both must be square)");
    return kernels::matmul(grid_resample_matrix(src, dst), patches);
}

namespace {
kernels::AttentionResult attend(const Tensor& z, const Tensor& c, const AttentionWeights& w) {
    require_shape(w.w_q.rows == z.cols && w.w_k.rows == c.cols && w.w_v.rows == c.cols,
                  "cross_attention: weight input widths do not match Z / c");
    require_shape(w.w_q.cols == w.w_k.cols && w.w_k.cols == w.w_v.cols, "cross_attention: inconsistent d_attn");
    const Tensor q = kernels::matmul(z, w.w_q);
    const Tensor k = kernels::matmul(c, w.w_k);
    const Tensor v = kernels::matmul(c, w.w_v);
    kernels::AttentionLayout layout{{0, z.rows}, {0, c.rows}, 1};
    return kernels::attention(q, k, v, layout, 1.0 / std::sqrt(static_cast<double>(w.w_q.cols)));
}
}  // namespace

Tensor cross_attention(const Tensor& z, const Tensor& c, const AttentionWeights& w) { return attend(z, c, w).out; }

Tensor cross_attention_probs(const Tensor& z, const Tensor& c, const AttentionWeights& w) {
    auto res = attend(z, c, w);
    Tensor p(z.rows, c.rows);
    std::copy(res.probs.begin(), res.probs.end(), p.data.begin());
    return p;
}

ad::Var fuse_class_token(ad::Var text_C, ad::Var dino_C, ad::Var mae_C, const nn::Mlp2& fuse) {
    require_shape(text_C.cols() == dino_C.cols() && dino_C.cols() == mae_C.cols(),
                  "fuse_class_token: class tokens differ in width");
    require_shape(fuse.in() == 3 * text_C.cols(), "fuse_class_token: fuse MLP expects " + std::to_string(fuse.in()) +
                                                      " inputs, got 3x" + std::to_string(text_C.cols()));
    return fuse(ad::concat_cols(ad::concat_cols(text_C, dino_C), mae_C));
}

ad::Var splice_global(const std::vector<const TextEmbedding*>& texts, ad::Var fused, std::vector<int>& offsets) {
    require_shape(static_cast<int>(texts.size()) == fused.rows(), "splice_global: one fused row per prompt required");
    ad::Graph& g = *fused.g;
    std::vector<Tensor> stacked;
    std::vector<int> base;
    int total = 0;
    for (const auto* t : texts) {
        t->validate();
        require_shape(t->tokens.cols == fused.cols(), "splice_global: text width != fused width");
        base.push_back(total);
        total += t->tokens.rows;
        stacked.push_back(t->tokens);
    }
    ad::Var pool = ad::concat_rows({g.constant(concat_rows(stacked)), fused});
    std::vector<int> index;
    offsets.assign(1, 0);
    for (std::size_t s = 0; s < texts.size(); ++s) {
        const auto& t = *texts[s];
        for (int r = 0; r < t.span_start; ++r) index.push_back(base[s] + r);
        index.push_back(total + static_cast<int>(s));
        for (int r = t.span_end; r < t.tokens.rows; ++r) index.push_back(base[s] + r);
        offsets.push_back(static_cast<int>(index.size()));
    }
    return ad::gather_rows(pool, std::move(index));
}

ad::Var build_local_condition(ad::Var dino_P, ad::Var mae_P, const nn::Mlp2& mlp_detail, const nn::Mlp2& mlp_recon) {
    require_shape(dino_P.rows() == mae_P.rows(), "build_local_condition: patch counts differ after alignment");
    return ad::add(mlp_detail(dino_P), mlp_recon(mae_P));
}

}  // namespace objcustom::inject
