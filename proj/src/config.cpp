#include "objcustom/config.hpp"

#include <fstream>

#include "objcustom/json_util.hpp"

namespace objcustom {

using nlohmann::json;

data::BuildOptions DataConfig::build_options() const {
    data::BuildOptions o;
    o.pairing.min_side = min_side;
    o.pairing.min_frame_gap = min_frame_gap;
    o.pairing.augment_flip = augment_flip;
    o.pairing.augment_crop = augment_crop;
    o.pairing.augment_jitter = augment_jitter;
    o.pairs_per_group = pairs_per_group;
    return o;
}

metrics::EvalConfig MetricsConfig::eval_config() const {
    metrics::EvalConfig e;
    e.compare_to = metrics::compare_to_from_string(compare_to);
    e.diversim_all_pairs = diversim_all_pairs;
    e.max_missing_fraction = max_missing_fraction;
    return e;
}

metrics::Embedders MetricsConfig::embedders() const {
    metrics::Embedders e;
    e.clip_image = metrics::toy_clip_image(clip_image_weights);
    e.dino_image = metrics::toy_dino_image(dino_image_weights);
    return e;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (sampling.steps <= 0) throw ConfigError("sampling.steps must be positive");
    if (sampling.steps > model.unet.T) throw ConfigError("sampling.steps exceeds the schedule length");
    if (data.min_side < 1 || data.pairs_per_group < 1 || data.min_frame_gap < 0)
        throw ConfigError("data: min_side and pairs_per_group must be >= 1, min_frame_gap >= 0");
    metrics::compare_to_from_string(metrics.compare_to);
    if (!(metrics.max_missing_fraction >= 0 && metrics.max_missing_fraction <= 1))
        throw ConfigError("metrics.max_missing_fraction must lie in [0, 1]");
}

json to_json(const RunConfig& c) {
    return {{"paths", {{"manifest", c.paths.manifest}, {"checkpoint", c.paths.checkpoint}, {"output", c.paths.output}}},
            {"model", to_json(c.model)},
            {"train", train::to_json(c.train)},
            {"sampling", {{"steps", c.sampling.steps}, {"guidance", c.sampling.guidance}}},
            {"data",
             {{"min_side", c.data.min_side},
              {"pairs_per_group", c.data.pairs_per_group},
              {"min_frame_gap", c.data.min_frame_gap},
              {"augment_flip", c.data.augment_flip},
              {"augment_crop", c.data.augment_crop},
              {"augment_jitter", c.data.augment_jitter}}},
            {"metrics",
             {{"compare_to", c.metrics.compare_to},
              {"diversim_all_pairs", c.metrics.diversim_all_pairs},
              {"max_missing_fraction", c.metrics.max_missing_fraction},
              {"clip_image_weights", c.metrics.clip_image_weights},
              {"dino_image_weights", c.metrics.dino_image_weights}}},
            {"seed", c.seed}};
}

MetricsConfig metrics_config_from_json(const json& j, const std::string& where) {
    MetricsConfig m;
    StrictReader r(j, where);
    r.get("compare_to", m.compare_to).get("diversim_all_pairs", m.diversim_all_pairs);
    r.get("max_missing_fraction", m.max_missing_fraction);
    r.get("clip_image_weights", m.clip_image_weights).get("dino_image_weights", m.dino_image_weights);
    if (const auto* f = r.child("face"); f != nullptr && !f->is_null())
        throw ConfigError(where + ".face: no face embedder is bundled; leave it null or absent");
    r.finish();
    return m;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    StrictReader r(j, "config");
    if (const auto* p = r.child("paths")) {
        StrictReader pr(*p, "paths");
        pr.get("manifest", c.paths.manifest).get("checkpoint", c.paths.checkpoint).get("output", c.paths.output);
        pr.finish();
    }
    if (const auto* m = r.child("model")) c.model = model_config_from_json(*m);
    if (const auto* t = r.child("train")) c.train = train::train_config_from_json(*t);
    if (const auto* s = r.child("sampling")) {
        StrictReader sr(*s, "sampling");
        sr.get("steps", c.sampling.steps).get("guidance", c.sampling.guidance);
        sr.finish();
    }
    if (const auto* d = r.child("data")) {
        StrictReader dr(*d, "data");
        dr.get("min_side", c.data.min_side).get("pairs_per_group", c.data.pairs_per_group);
        dr.get("min_frame_gap", c.data.min_frame_gap).get("augment_flip", c.data.augment_flip);
        dr.get("augment_crop", c.data.augment_crop).get("augment_jitter", c.data.augment_jitter);
        dr.finish();
    }
    if (const auto* m = r.child("metrics")) c.metrics = metrics_config_from_json(*m);
    r.get("seed", c.seed);
    r.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace objcustom
