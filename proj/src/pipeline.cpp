#include "objcustom/pipeline.hpp"

namespace objcustom::gen {

Conditions build_conditions(const CustomizerModel& model, const ImageTensor& ref, const SegMask& mask,
                            const std::string& prompt, const std::string& class_word) {
    const auto text = model.text_encoder().embed(prompt, class_word);
    const auto& cfg = model.config();
    const ImageTensor input = id::prepare_reference(ref, mask, {cfg.crop_to_mask, cfg.crop_margin});
    const int d = cfg.d_model();

    Tensor dino_C(1, d), mae_C(1, d), local;
    if (model.uses_detail()) {
        auto p = id::project_tokens(model.detail_encoder().encode(input), model.detail_projector());
        dino_C = p.class_token;
        local = model.local_detail().eval(p.patch_tokens);
    }
    if (model.uses_recon()) {
        auto p = id::project_tokens(model.recon_encoder().encode(input), model.recon_projector());
        mae_C = p.class_token;
        const int np = model.uses_detail() ? local.rows : p.patch_tokens.rows;
        Tensor l = model.local_recon().eval(inject::align_patch_grid(p.patch_tokens, np));
        if (local.empty()) {
            local = std::move(l);
        } else {
            for (std::size_t i = 0; i < local.size(); ++i) local.data[i] += l.data[i];
        }
    }

    Conditions c;
    c.fused = inject::fuse_class_token(inject::class_word_embedding(text), dino_C, mae_C, model.fuse());
    c.c_g = inject::build_global_condition(text, c.fused);
    c.c_l = {std::move(local)};
    c.fused_row = text.span_start;
    return c;
}

Tensor initial_noise(const CustomizerModel& model, std::uint64_t seed) {
    const auto& u = model.config().unet;
    std::mt19937_64 rng(seed);
    return randn(u.latent_size * u.latent_size, u.latent_channels, rng);
}

std::vector<ImageTensor> sample_batch(const CustomizerModel& model, const std::vector<Conditions>& conds,
                                      const std::vector<std::uint64_t>& seeds, const SampleOptions& opt) {
    if (opt.steps <= 0) throw std::invalid_argument("sampling steps must be positive");
    require_shape(conds.size() == seeds.size(), "sample_batch: one seed per condition required");
    if (conds.empty()) return {};
    const int n = static_cast<int>(conds.size());

    std::vector<Tensor> g_parts, l_parts, x_parts, ng_parts, nl_parts;
    std::vector<int> g_off{0}, l_off{0}, ng_off{0}, nl_off{0};
    for (int s = 0; s < n; ++s) {
        const auto& c = conds[static_cast<std::size_t>(s)];
        g_parts.push_back(c.c_g.tokens);
        l_parts.push_back(c.c_l.tokens);
        g_off.push_back(g_off.back() + c.c_g.tokens.rows);
        l_off.push_back(l_off.back() + c.c_l.tokens.rows);
        ng_parts.push_back(model.null_global().value);
        nl_parts.push_back(model.null_local().value);
        ng_off.push_back(ng_off.back() + model.null_global().value.rows);
        nl_off.push_back(nl_off.back() + model.null_local().value.rows);
        x_parts.push_back(initial_noise(model, seeds[static_cast<std::size_t>(s)]));
    }
    const Tensor gt = concat_rows(g_parts), lt = concat_rows(l_parts);
    const Tensor ngt = concat_rows(ng_parts), nlt = concat_rows(nl_parts);

    auto run = [&](const Tensor& gtok, const std::vector<int>& goff, const Tensor& ltok, const std::vector<int>& loff) {
        return [&model, n, gp = &gtok, lp = &ltok, goff, loff](const Tensor& x, int t) {
            ad::Graph g;
            diffusion::CondBatch gb{g.constant(*gp), goff};
            diffusion::CondBatch lb{g.constant(*lp), loff};
            return model.unet().forward(g.constant(x), std::vector<int>(static_cast<std::size_t>(n), t), gb, &lb).value();
        };
    };
    const diffusion::NoiseFn cond = run(gt, g_off, lt, l_off);
    const diffusion::NoiseFn uncond = run(ngt, ng_off, nlt, nl_off);
    const Tensor z = diffusion::ddim_sample(model.schedule(), concat_rows(x_parts), opt.steps, cond, uncond, opt.guidance);

    const int rows = z.rows / n;
    std::vector<ImageTensor> out;
    for (int s = 0; s < n; ++s) out.push_back(model.decode_latent(z.slice_rows(s * rows, rows)));
    return out;
}

ImageTensor sample(const CustomizerModel& model, const Conditions& cond, std::uint64_t seed, const SampleOptions& opt) {
    return sample_batch(model, {cond}, {seed}, opt).front();
}

}  // namespace objcustom::gen
