// objcustom: dataset build, training, generation and evaluation from one binary.
// Exit codes: 0 ok, 1 validation failure, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "objcustom/config.hpp"
#include "objcustom/dataset.hpp"
#include "objcustom/pipeline.hpp"
#include "objcustom/trainer.hpp"

namespace fs = std::filesystem;
using namespace objcustom;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

struct ValidationFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

RunConfig base_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

// ---- toy-corpus ----------------------------------------------------------------

struct ToyArgs {
    std::string out;
    int groups = 10;
    int frames = 5;
    std::uint64_t seed = 7;
    double single_fraction = 0.2;
    double small_fraction = 0.1;
};

int cmd_toy_corpus(const ToyArgs& a) {
    data::ToyCorpusOptions o;
    o.groups = a.groups;
    o.frames_per_group = a.frames;
    o.single_fraction = a.single_fraction;
    o.small_fraction = a.small_fraction;
    for (int g = 0; g < a.groups; ++g) data::write_sources({data::make_toy_group(o, a.seed, g)}, a.out);
    std::cout << "wrote " << a.groups << " source groups to " << a.out << "\n";
    return kOk;
}

// ---- build-dataset ----------------------------------------------------------------

struct BuildArgs {
    std::string config, sources, out;
    std::optional<std::uint64_t> seed;
    std::optional<int> min_side, pairs_per_group, min_frame_gap;
};

int cmd_build_dataset(const BuildArgs& a) {
    RunConfig cfg = base_config(a.config);
    if (a.seed) cfg.seed = *a.seed;
    if (a.min_side) cfg.data.min_side = *a.min_side;
    if (a.pairs_per_group) cfg.data.pairs_per_group = *a.pairs_per_group;
    if (a.min_frame_gap) cfg.data.min_frame_gap = *a.min_frame_gap;
    cfg.validate();

    std::vector<data::SourceGroup> groups;
    try {
        groups = data::read_sources(a.sources);
    } catch (const std::exception& e) {
        throw ValidationFailure(std::string("invalid sources: ") + e.what());
    }
    std::vector<std::string> problems;
    for (const auto& g : groups) {
        if (g.frames.empty()) problems.push_back(g.group_id + ": no frames");
        for (std::size_t k = 0; k < g.frames.size(); ++k) {
            const auto& f = g.frames[k];
            if (f.mask.height != f.image.height || f.mask.width != f.image.width)
                problems.push_back(g.group_id + " frame " + std::to_string(k) + ": mask size differs from image");
        }
        if (g.class_word.empty()) problems.push_back(g.group_id + ": empty class_word");
    }
    if (!problems.empty()) {
        for (const auto& p : problems) std::cerr << "  - " << p << "\n";
        throw ValidationFailure("invalid sources (" + std::to_string(problems.size()) + " problem(s))");
    }

    const auto pairs = data::build_pairs(groups, cfg.seed, cfg.data.build_options());
    const auto manifest = data::write_dataset(pairs, a.out);
    cfg.paths.manifest = (fs::path(a.out) / "manifest.jsonl").string();
    write_json(fs::path(a.out) / "build_config.json", to_json(cfg));
    std::cout << "wrote " << manifest.records.size() << " records from " << groups.size() << " groups to "
              << cfg.paths.manifest << "\n";
    return kOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::string config, manifest, out, resume, id_encoders;
    std::optional<int> epochs, max_steps, batch_size;
    std::optional<double> lr, alpha1, alpha2, alpha3, cond_dropout, contrast_sign;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = base_config(a.config);
    if (!a.manifest.empty()) cfg.paths.manifest = a.manifest;
    if (!a.out.empty()) cfg.paths.output = a.out;
    if (a.epochs) cfg.train.epochs = *a.epochs;
    if (a.max_steps) cfg.train.max_steps = *a.max_steps;
    if (a.batch_size) cfg.train.batch_size = *a.batch_size;
    if (a.lr) cfg.train.lr = *a.lr;
    if (a.alpha1) cfg.train.alpha1 = *a.alpha1;
    if (a.alpha2) cfg.train.alpha2 = *a.alpha2;
    if (a.alpha3) cfg.train.alpha3 = *a.alpha3;
    if (a.cond_dropout) cfg.train.cond_dropout = *a.cond_dropout;
    if (a.contrast_sign) cfg.train.contrast_sign = *a.contrast_sign;
    if (a.seed) cfg.seed = cfg.train.seed = *a.seed;
    if (!a.id_encoders.empty()) cfg.model.id_encoders = id_encoders_from_string(a.id_encoders);
    if (cfg.paths.manifest.empty()) throw ValidationFailure("train: --manifest (or paths.manifest) is required");
    if (cfg.paths.output.empty()) throw ValidationFailure("train: --out (or paths.output) is required");
    cfg.validate();

    const auto manifest = data::read_manifest(cfg.paths.manifest, cfg.data.min_side);
    const fs::path out = cfg.paths.output;
    fs::create_directories(out);

    std::unique_ptr<CustomizerModel> model;
    std::optional<train::AdamW> opt;
    long start_step = 0;
    if (!a.resume.empty()) {
        auto ck = train::load_checkpoint(a.resume, &cfg.train);
        if (to_json(ck.model->config()) != to_json(cfg.model))
            throw ValidationFailure("refusing to resume: the checkpoint's model config differs from this run's");
        const json old_train = ck.config_echo.value("train", json::object());
        json a_train = train::to_json(cfg.train), b_train = old_train;
        for (const char* k : {"epochs", "max_steps"}) {
            a_train.erase(k);
            b_train.erase(k);
        }
        if (a_train != b_train)
            throw ValidationFailure("refusing to resume: the checkpoint's train config differs from this run's");
        model = std::move(ck.model);
        opt = std::move(ck.optimizer);
        start_step = ck.step;
    } else {
        model = CustomizerModel::create(cfg.model, cfg.seed);
    }
    if (!opt) opt.emplace(cfg.train);

    const json echo = to_json(cfg);
    write_json(out / "config.json", echo);
    std::ofstream log(out / "loss_log.csv");
    log << "step,epoch,l_normal,l_decouple,l_contrast,l_total,mean_abs_cos,degenerate\n";
    log.precision(17);

    const auto data = train::prepare_all(*model, train::records_from_manifest(manifest));
    train::TrainHooks hooks;
    hooks.on_step = [&](long step, int epoch, const train::LossReport& r) {
        log << start_step + step << "," << epoch << "," << r.l_normal << "," << r.l_decouple << "," << r.l_contrast
            << "," << r.l_total << "," << r.mean_abs_cos << "," << r.degenerate << "\n";
    };
    hooks.on_epoch = [&](int epoch, const CustomizerModel& m, const train::AdamW& o) {
        train::save_checkpoint(out / ("checkpoint_epoch" + std::to_string(epoch) + ".ckpt"), m, echo, &o,
                               start_step + o.steps());
    };
    const auto summary = train::train(cfg.train, data, *model, hooks, &*opt);
    train::save_checkpoint(out / "checkpoint.ckpt", *model, echo, &*opt, start_step + summary.steps);
    std::cout << "trained " << summary.steps << " steps (" << summary.skipped << " skipped) on "
              << data.size() << " records; checkpoint at " << (out / "checkpoint.ckpt").string() << "\n";
    return kOk;
}

// ---- generate ----------------------------------------------------------------

struct GenArgs {
    std::string checkpoint, config, out, ref, mask, prompt, class_word, manifest;
    int count = 1;
    std::uint64_t seed = 0;
    std::optional<int> steps;
    std::optional<double> guidance;
    bool scenarios = false;
};

int cmd_generate(const GenArgs& a) {
    auto ck = train::load_checkpoint(a.checkpoint);
    const CustomizerModel& model = *ck.model;
    RunConfig cfg = a.config.empty() ? run_config_from_json(ck.config_echo) : load_run_config(a.config);
    if (a.steps) cfg.sampling.steps = *a.steps;
    if (a.guidance) cfg.sampling.guidance = *a.guidance;
    cfg.validate();
    if (a.count < 1) throw ValidationFailure("generate: --count must be >= 1");
    const gen::SampleOptions so{cfg.sampling.steps, cfg.sampling.guidance};
    const fs::path out = a.out;
    fs::create_directories(out);

    json prov{{"config", to_json(cfg)}, {"checkpoint", a.checkpoint}, {"seed", a.seed}};
    if (!a.manifest.empty()) {
        const auto manifest = data::read_manifest(a.manifest, cfg.data.min_side);
        const auto scen = ScenarioPromptSet::defaults();
        std::size_t written = 0;
        for (std::size_t i = 0; i < manifest.records.size(); ++i) {
            const auto& r = manifest.records[i];
            const auto loaded = data::load_record(manifest, r);
            std::vector<gen::Conditions> conds{
                gen::build_conditions(model, loaded.ref_image, loaded.ref_mask, r.caption, r.class_word)};
            std::vector<fs::path> paths{metrics::generation_path(out, r.sample_id)};
            if (a.scenarios)
                for (const auto& sc : scen.scenarios)
                    for (int k = 0; k < static_cast<int>(sc.suffixes.size()); ++k) {
                        const std::string p = append_suffix(data::template_caption(r.class_word),
                                                            sc.suffixes[static_cast<std::size_t>(k)]);
                        conds.push_back(gen::build_conditions(model, loaded.ref_image, loaded.ref_mask, p, r.class_word));
                        paths.push_back(metrics::scenario_path(out, r.sample_id, sc.name, k));
                    }
            const auto imgs =
                gen::sample_batch(model, conds, std::vector<std::uint64_t>(conds.size(), a.seed + i), so);
            for (std::size_t k = 0; k < imgs.size(); ++k) write_ppm(paths[k], imgs[k]);
            written += imgs.size();
        }
        prov["manifest"] = a.manifest;
        write_json(out / "generate_config.json", prov);
        std::cout << "wrote " << written << " images for " << manifest.records.size() << " records to " << out.string()
                  << "\n";
        return kOk;
    }

    if (a.ref.empty() || a.mask.empty() || a.prompt.empty() || a.class_word.empty())
        throw ValidationFailure("generate: --ref, --mask, --prompt and --class-word are required without --manifest");
    const ImageTensor ref = read_ppm(a.ref);
    const SegMask mask = read_pgm(a.mask);
    if (mask.height != ref.height || mask.width != ref.width)
        throw ValidationFailure("generate: mask size differs from the reference image");
    const auto cond = gen::build_conditions(model, ref, mask, a.prompt, a.class_word);
    std::vector<std::uint64_t> seeds;
    for (int k = 0; k < a.count; ++k) seeds.push_back(a.seed + static_cast<std::uint64_t>(k));
    const auto imgs = gen::sample_batch(model, std::vector<gen::Conditions>(static_cast<std::size_t>(a.count), cond), seeds, so);
    for (int k = 0; k < a.count; ++k) write_ppm(out / ("gen_" + std::to_string(k) + ".ppm"), imgs[static_cast<std::size_t>(k)]);
    int cols = 1;
    while (cols * cols < a.count) ++cols;
    write_ppm(out / "grid.ppm", contact_sheet(imgs, cols));
    prov["request"] = {{"prompt", a.prompt}, {"class_word", a.class_word}, {"ref_image_path", a.ref},
                       {"ref_mask_path", a.mask}, {"count", a.count}};
    write_json(out / "generate_config.json", prov);
    std::cout << "wrote " << a.count << " images and grid.ppm to " << out.string() << "\n";
    return kOk;
}

// ---- evaluate ----------------------------------------------------------------

struct EvalArgs {
    std::string config, manifest, generations, report, embedder_config, compare_to;
};

int cmd_evaluate(const EvalArgs& a) {
    RunConfig cfg = base_config(a.config);
    if (!a.embedder_config.empty()) {
        std::ifstream in(a.embedder_config);
        if (!in) throw ConfigError("cannot open embedder config " + a.embedder_config);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("embedder config is not valid JSON: " + std::string(e.what()));
        }
        cfg.metrics = metrics_config_from_json(j, "embedder_config");
    }
    if (!a.compare_to.empty()) cfg.metrics.compare_to = a.compare_to;
    cfg.validate();

    const auto manifest = data::read_manifest(a.manifest, cfg.data.min_side);
    const auto report = metrics::evaluate(manifest, a.generations, cfg.metrics.embedders(), cfg.metrics.eval_config());
    write_json(a.report, report.to_json());
    write_json(a.report + ".config.json",
               {{"config", to_json(cfg)}, {"manifest", a.manifest}, {"generations", a.generations}});
    std::cout << report.to_json().dump(2) << "\n";
    if (report.too_many_missing(cfg.metrics.max_missing_fraction)) {
        std::cerr << "error: " << report.missing.size() << " of " << report.n_samples
                  << " generations missing (limit " << cfg.metrics.max_missing_fraction * 100 << "%):\n";
        for (const auto& id : report.missing) std::cerr << "  - " << id << "\n";
        return kValidation;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"objcustom: zero-shot object customization at toy scale"};
    app.require_subcommand(1);

    ToyArgs toy;
    auto* t = app.add_subcommand("toy-corpus", "Render the procedural shapes corpus as a sources directory");
    t->add_option("--out", toy.out, "Output sources directory")->required();
    t->add_option("--groups", toy.groups, "Number of source groups")->check(CLI::PositiveNumber);
    t->add_option("--frames", toy.frames, "Frames per video/multi-view group")->check(CLI::Range(2, 1000));
    t->add_option("--seed", toy.seed, "Corpus seed");
    t->add_option("--single-fraction", toy.single_fraction, "Share of single-image groups")->check(CLI::Range(0.0, 1.0));
    t->add_option("--small-fraction", toy.small_fraction, "Share of groups rendered below 300 px")->check(CLI::Range(0.0, 1.0));

    BuildArgs build;
    auto* b = app.add_subcommand("build-dataset", "Build reference/target pairs and a manifest from sources");
    b->add_option("--config", build.config, "Run config (JSON)");
    b->add_option("--sources", build.sources, "Sources directory")->required();
    b->add_option("--out", build.out, "Output dataset directory")->required();
    b->add_option("--seed", build.seed, "Build seed");
    b->add_option("--min-side", build.min_side, "Minimum image side in pixels (default 300)");
    b->add_option("--pairs-per-group", build.pairs_per_group, "Pairs drawn per group");
    b->add_option("--min-frame-gap", build.min_frame_gap, "Minimum index distance between paired frames");

    TrainArgs tr;
    auto* c = app.add_subcommand("train", "Run decoupling training and write checkpoints");
    c->add_option("--config", tr.config, "Run config (JSON)");
    c->add_option("--manifest", tr.manifest, "Dataset manifest");
    c->add_option("--out", tr.out, "Output directory");
    c->add_option("--resume", tr.resume, "Checkpoint to continue from");
    c->add_option("--epochs", tr.epochs, "Epochs");
    c->add_option("--max-steps", tr.max_steps, "Step budget (overrides epochs when > 0)");
    c->add_option("--batch-size", tr.batch_size, "Batch size");
    c->add_option("--lr", tr.lr, "Learning rate");
    c->add_option("--alpha1", tr.alpha1, "Weight of the loss for the branch with f_msk");
    c->add_option("--alpha2", tr.alpha2, "Weight of the loss for the branch without f_msk");
    c->add_option("--alpha3", tr.alpha3, "Weight of the contrastive loss");
    c->add_option("--cond-dropout", tr.cond_dropout, "Condition dropout probability");
    c->add_option("--contrast-sign", tr.contrast_sign, "Sign of the contrastive loss (+1 or -1)");
    c->add_option("--seed", tr.seed, "Initialization and training seed");
    c->add_option("--id-encoders", tr.id_encoders, "ensemble | detail_only | recon_only");

    GenArgs g;
    auto* gc = app.add_subcommand("generate", "Generate images from a reference and a prompt");
    gc->add_option("--checkpoint", g.checkpoint, "Checkpoint archive")->required();
    gc->add_option("--config", g.config, "Run config (defaults to the checkpoint's)");
    gc->add_option("--out", g.out, "Output directory")->required();
    gc->add_option("--ref", g.ref, "Reference image (PPM)");
    gc->add_option("--mask", g.mask, "Reference mask (PGM)");
    gc->add_option("--prompt", g.prompt, "Prompt containing the class word");
    gc->add_option("--class-word", g.class_word, "Class word to replace with the identity token");
    gc->add_option("--count", g.count, "Images to generate");
    gc->add_option("--seed", g.seed, "Seed of the first image; image k uses seed + k");
    gc->add_option("--steps", g.steps, "Sampling steps (default 50)");
    gc->add_option("--guidance", g.guidance, "Guidance scale (default 7)");
    gc->add_option("--manifest", g.manifest, "Generate for every manifest record instead of one request");
    gc->add_flag("--scenarios", g.scenarios, "With --manifest, also generate one image per scenario suffix");

    EvalArgs ev;
    auto* e = app.add_subcommand("evaluate", "Score generations against a manifest");
    e->add_option("--config", ev.config, "Run config (JSON)");
    e->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
    e->add_option("--generations", ev.generations, "Generations directory")->required();
    e->add_option("--report", ev.report, "Report output (JSON)")->required();
    e->add_option("--embedder-config", ev.embedder_config, "Embedder config (JSON)");
    e->add_option("--compare-to", ev.compare_to, "reference | target");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*t) return cmd_toy_corpus(toy);
        if (*b) return cmd_build_dataset(build);
        if (*c) return cmd_train(tr);
        if (*gc) return cmd_generate(g);
        if (*e) return cmd_evaluate(ev);
    } catch (const data::ValidationError& err) {
        std::cerr << "error: " << err.what() << "\n";
        for (const auto& p : err.problems()) std::cerr << "  - " << p << "\n";
        return kValidation;
    } catch (const ValidationFailure& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kValidation;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return kValidation;
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kValidation;
    } catch (const std::exception& err) {
        std::cerr << "runtime error: " << err.what() << "\n";
        return kRuntime;
    }
    return kRuntime;
}
