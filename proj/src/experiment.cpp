#include "objcustom/experiment.hpp"

#include <chrono>

#include "objcustom/pipeline.hpp"

namespace objcustom::experiment {

ToyData make_toy_data(const ToyDataOptions& opt) {
    data::ToyCorpusOptions co;
    co.frames_per_group = opt.frames_per_group;
    data::BuildOptions bo;
    bo.pairs_per_group = opt.pairs_per_group;

    // Group by group so full-resolution frames never pile up in memory.
    auto build = [&](int groups, std::uint64_t seed, int pairs) {
        bo.pairs_per_group = pairs;
        std::vector<data::PairSample> out;
        for (int g = 0; g < groups; ++g)
            for (auto& p : data::build_pairs({data::make_toy_group(co, seed, g)}, seed, bo))
                out.push_back(data::shrink_pair(p, opt.max_side));
        return out;
    };
    ToyData d;
    d.train = build(opt.train_groups, opt.train_seed, opt.pairs_per_group);
    d.probe = build(opt.probe_groups, opt.probe_seed, 1);
    return d;
}

RunConfig toy_run_config(std::uint64_t seed) {
    RunConfig c;
    c.seed = seed;
    c.train.seed = seed;
    c.train.lr = 2e-3;
    c.train.batch_size = 8;
    c.train.max_steps = 2000;
    return c;
}

ToyResult run_toy(const RunConfig& cfg, const ToyData& data, const ToyEvalOptions& eval) {
    ToyResult res;
    auto model = CustomizerModel::create(cfg.model, cfg.seed);
    const auto train_set = train::prepare_all(*model, train::records_from_pairs(data.train));
    const auto probe_set = train::prepare_all(*model, train::records_from_pairs(data.probe));
    res.abs_cos_init = train::probe_abs_cos(*model, probe_set);

    std::vector<double> l_normal;
    train::TrainHooks hooks;
    hooks.on_step = [&](long, int, const train::LossReport& r) { l_normal.push_back(r.l_normal); };
    const auto t0 = std::chrono::steady_clock::now();
    train::train(cfg.train, train_set, *model, hooks);
    res.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.abs_cos_final = train::probe_abs_cos(*model, probe_set);

    const std::size_t w = std::min<std::size_t>(20, l_normal.size());
    for (std::size_t i = 0; i < w; ++i) {
        res.first_l_normal += l_normal[i] / static_cast<double>(w);
        res.last_l_normal += l_normal[l_normal.size() - w + i] / static_cast<double>(w);
    }

    // Generations: one plain-prompt image per probe reference plus one image per scenario.
    const auto scenarios = ScenarioPromptSet::defaults();
    const int n = std::min<int>(eval.samples, static_cast<int>(data.probe.size()));
    std::vector<gen::Conditions> conds;
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < n; ++i) {
        const auto& p = data.probe[static_cast<std::size_t>(i)];
        const std::string base = data::template_caption(p.class_word);
        conds.push_back(gen::build_conditions(*model, p.ref_image, p.ref_mask, base, p.class_word));
        seeds.push_back(eval.seed + static_cast<std::uint64_t>(i));
        for (std::size_t k = 0; k < scenarios.scenarios.size(); ++k) {
            const auto& sc = scenarios.scenarios[k];
            conds.push_back(gen::build_conditions(*model, p.ref_image, p.ref_mask, append_suffix(base, sc.suffixes.front()),
                                                  p.class_word));
            seeds.push_back(eval.seed + static_cast<std::uint64_t>(i));
        }
    }
    const auto images = gen::sample_batch(*model, conds, seeds, {eval.steps, eval.guidance});

    const auto emb = cfg.metrics.embedders();
    const std::size_t stride = 1 + scenarios.scenarios.size();
    for (int i = 0; i < n; ++i) {
        const auto& p = data.probe[static_cast<std::size_t>(i)];
        const ImageTensor& g = images[static_cast<std::size_t>(i) * stride];
        res.clip_i += metrics::pairwise_sim(emb.clip_image, g, p.ref_image) / n;
        res.dino_i += metrics::pairwise_sim(emb.dino_image, g, p.ref_image) / n;
        res.color_fidelity += metrics::color_fidelity(g, p.ref_image, p.ref_mask) / n;
        std::map<std::string, std::vector<ImageTensor>> by_scenario;
        for (std::size_t k = 0; k < scenarios.scenarios.size(); ++k)
            by_scenario[scenarios.scenarios[k].name].push_back(images[static_cast<std::size_t>(i) * stride + 1 + k]);
        res.diversim += metrics::diversim_i(by_scenario, emb.dino_image).mean / n;
    }
    return res;
}

}  // namespace objcustom::experiment
