#include "objcustom/id_extractor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "objcustom/archive.hpp"

namespace objcustom::id {

std::string to_string(EncoderRole r) { return r == EncoderRole::Detail ? "detail" : "reconstruction"; }

EncoderRole role_from_string(const std::string& s) {
    if (s == "detail") return EncoderRole::Detail;
    if (s == "reconstruction") return EncoderRole::Reconstruction;
    throw ConfigError("unknown encoder role '" + s + "' (expected detail|reconstruction)");
}

void EncoderSpec::validate() const {
    if (input_size <= 0 || patch_size <= 0 || input_size % patch_size != 0)
        throw ConfigError("encoder input_size must be a positive multiple of patch_size");
    if (d_enc <= 0) throw ConfigError("encoder d_enc must be positive");
    if (weights_ref.empty()) throw ConfigError("encoder weights_ref is empty");
}

namespace {

void build_shapes(ad::ParamStore& store, const EncoderSpec& spec, std::mt19937_64& rng) {
    const int pin = spec.patch_size * spec.patch_size * spec.input_channels();
    const int d = spec.d_enc;
    auto w = [&](int in, int out) { return randn(in, out, rng, 1.0 / std::sqrt(static_cast<double>(in))); };
    store.add("patch_embed.w", w(pin, d), false);
    store.add("patch_embed.b", randn(1, d, rng, 0.1), false);
    if (spec.positional) store.add("pos", randn(spec.n_patches(), d, rng, 0.5), false);
    store.add("attn.q", w(d, d), false);
    store.add("attn.k", w(d, d), false);
    store.add("attn.v", w(d, d), false);
    store.add("attn.o", w(d, d), false);
    store.add("mlp.fc1.w", w(d, 2 * d), false);
    store.add("mlp.fc1.b", Tensor(1, 2 * d), false);
    store.add("mlp.fc2.w", w(2 * d, d), false);
    store.add("mlp.fc2.b", Tensor(1, d), false);
}

void add_bias(Tensor& y, const Tensor& b) {
    for (int r = 0; r < y.rows; ++r)
        for (int j = 0; j < y.cols; ++j) y(r, j) += b.data[static_cast<std::size_t>(j)];
}

void gelu_inplace(Tensor& t) {
    for (auto& x : t.data) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

}  // namespace

FrozenEncoder FrozenEncoder::random(const EncoderSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    auto store = std::make_shared<ad::ParamStore>();
    build_shapes(*store, spec, rng);
    FrozenEncoder e;
    e.spec_ = spec;
    e.weights_ = std::move(store);
    return e;
}

FrozenEncoder FrozenEncoder::load(const EncoderSpec& spec) {
    spec.validate();
    if (spec.weights_ref.rfind("toy:", 0) == 0) {
        std::uint64_t seed = 0;
        try {
            seed = std::stoull(spec.weights_ref.substr(4));
        } catch (const std::exception&) {
            throw ConfigError("bad toy encoder seed in weights_ref '" + spec.weights_ref + "'");
        }
        return random(spec, seed);
    }
    if (!std::filesystem::exists(spec.weights_ref))
        throw ConfigError("encoder weights not found: " + spec.weights_ref);
    std::mt19937_64 rng(0);
    auto store = std::make_shared<ad::ParamStore>();
    build_shapes(*store, spec, rng);
    load_from_archive(*store, read_archive(spec.weights_ref));
    FrozenEncoder e;
    e.spec_ = spec;
    e.weights_ = std::move(store);
    return e;
}

void FrozenEncoder::save(const std::filesystem::path& path) const {
    Archive a;
    a.meta["role"] = to_string(spec_.role);
    store_to_archive(*weights_, a);
    write_archive(path, a);
}

std::uint64_t FrozenEncoder::fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto* p : weights_->all()) {
        h ^= stable_hash(p->name);
        std::string_view bytes(reinterpret_cast<const char*>(p->value.data.data()), p->value.size() * sizeof(double));
        h = h * 1099511628211ull ^ stable_hash(bytes);
    }
    return h;
}

Tensor FrozenEncoder::patchify(const ImageTensor& image) const {
    const int s = spec_.input_size, p = spec_.patch_size, grid = spec_.grid();
    const ImageTensor img = resize(image, s, s);
    const int cin = spec_.input_channels();
    std::vector<double> plane(static_cast<std::size_t>(cin) * s * s);
    if (spec_.role == EncoderRole::Detail) {
        double mean = 0.0;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                const double l = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
                plane[static_cast<std::size_t>(y) * s + x] = l;
                mean += l;
            }
        mean /= s * s;
        double var = 0.0;
        for (double v : plane) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / (s * s));
        for (auto& v : plane) v = sd < 1e-8 ? 0.0 : (v - mean) / sd;
    } else {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) plane[(static_cast<std::size_t>(c) * s + y) * s + x] = img.at(c, y, x);
    }
    Tensor patches(grid * grid, p * p * cin);
    for (int py = 0; py < grid; ++py)
        for (int px = 0; px < grid; ++px) {
            auto row = patches.row(py * grid + px);
            std::size_t i = 0;
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x)
                    for (int c = 0; c < cin; ++c)
                        row[i++] = plane[(static_cast<std::size_t>(c) * s + py * p + y) * s + px * p + x];
        }
    return patches;
}

EncoderOutput FrozenEncoder::encode(const ImageTensor& image) const {
    image.validate();
    const auto& w = *weights_;
    Tensor h = kernels::matmul(patchify(image), w.get("patch_embed.w").value);
    add_bias(h, w.get("patch_embed.b").value);
    gelu_inplace(h);
    if (spec_.positional) {
        const Tensor& pos = w.get("pos").value;
        for (std::size_t i = 0; i < h.size(); ++i) h.data[i] += pos.data[i];
    }

    const Tensor q = kernels::matmul(h, w.get("attn.q").value);
    const Tensor k = kernels::matmul(h, w.get("attn.k").value);
    const Tensor v = kernels::matmul(h, w.get("attn.v").value);
    kernels::AttentionLayout layout{{0, h.rows}, {0, h.rows}, 1};
    const auto att = kernels::attention(q, k, v, layout, 1.0 / std::sqrt(static_cast<double>(spec_.d_enc)));
    kernels::gemm(kernels::Trans::N, kernels::Trans::N, 1.0, att.out, w.get("attn.o").value, 1.0, h);

    Tensor mid = kernels::matmul(h, w.get("mlp.fc1.w").value);
    add_bias(mid, w.get("mlp.fc1.b").value);
    gelu_inplace(mid);
    Tensor out = kernels::matmul(mid, w.get("mlp.fc2.w").value);
    add_bias(out, w.get("mlp.fc2.b").value);
    for (std::size_t i = 0; i < h.size(); ++i) h.data[i] += out.data[i];

    EncoderOutput res{Tensor(1, h.cols), std::move(h)};
    for (int r = 0; r < res.patch_tokens.rows; ++r)
        for (int j = 0; j < res.patch_tokens.cols; ++j) res.class_token(0, j) += res.patch_tokens(r, j);
    for (auto& x : res.class_token.data) x /= res.patch_tokens.rows;
    return res;
}

ImageTensor mask_reference(const ImageTensor& image, const SegMask& mask) {
    if (image.height != mask.height || image.width != mask.width)
        throw ShapeError("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         " does not match image " + std::to_string(image.height) + "x" + std::to_string(image.width));
    ImageTensor out = image;
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, x) * mask.at(y, x);
    return out;
}

ImageTensor crop_to_mask(const ImageTensor& masked, const SegMask& mask, double margin) {
    const auto bb = mask_bbox(mask);
    if (!bb) return masked;
    const int side = std::max(1, static_cast<int>(std::lround((1.0 + 2.0 * margin) * std::max(bb->width(), bb->height()))));
    const int cx2 = bb->x0 + bb->x1, cy2 = bb->y0 + bb->y1;  // twice the centre
    const int x0 = (cx2 - side) / 2, y0 = (cy2 - side) / 2;
    return crop(masked, Box{x0, y0, x0 + side, y0 + side});
}

EncoderOutput encode(const FrozenEncoder& encoder, const ImageTensor& image) { return encoder.encode(image); }

ProjectedTokens project_tokens(const EncoderOutput& raw, const nn::Mlp2& projector) {
    if (raw.class_token.cols != projector.in() || raw.patch_tokens.cols != projector.in())
        throw ShapeError("project_tokens: encoder width " + std::to_string(raw.class_token.cols) +
                         " != projector input " + std::to_string(projector.in()));
    return {projector.eval(raw.class_token), projector.eval(raw.patch_tokens)};
}

ImageTensor prepare_reference(const ImageTensor& image, const SegMask& mask, const ExtractOptions& opt) {
    ImageTensor masked = mask_reference(image, mask);
    return opt.crop_to_mask ? crop_to_mask(masked, mask, opt.margin) : masked;
}

IDTokens extract_id(const ImageTensor& image, const SegMask& mask, const FrozenEncoder& detail,
                    const FrozenEncoder& recon, const nn::Mlp2& detail_projector, const nn::Mlp2& recon_projector,
                    const ExtractOptions& opt) {
    const ImageTensor input = prepare_reference(image, mask, opt);
    auto d = project_tokens(detail.encode(input), detail_projector);
    auto r = project_tokens(recon.encode(input), recon_projector);
    if (d.class_token.cols != r.class_token.cols) throw ShapeError("extract_id: projectors disagree on d_model");
    IDTokens t;
    t.detail_patches = d.patch_tokens.rows;
    t.recon_patches = r.patch_tokens.rows;
    t.dino_C = std::move(d.class_token);
    t.dino_P = std::move(d.patch_tokens);
    t.mae_C = std::move(r.class_token);
    t.mae_P = std::move(r.patch_tokens);
    return t;
}

}  // namespace objcustom::id
