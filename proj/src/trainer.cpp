#include "objcustom/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "objcustom/archive.hpp"
#include "objcustom/json_util.hpp"

namespace objcustom::train {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("train.lr must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0) throw ConfigError("train.alpha1..3 must be >= 0");
    if (!(cond_dropout >= 0 && cond_dropout < 1)) throw ConfigError("train.cond_dropout must lie in [0, 1)");
    if (epochs < 0 || max_steps < 0) throw ConfigError("train.epochs and train.max_steps must be >= 0");
    if (contrast_sign != 1.0 && contrast_sign != -1.0) throw ConfigError("train.contrast_sign must be +1 or -1");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) throw ConfigError("train: bad Adam constants");
}

json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"batch_size", c.batch_size},
            {"alpha1", c.alpha1},
            {"alpha2", c.alpha2},
            {"alpha3", c.alpha3},
            {"cond_dropout", c.cond_dropout},
            {"epochs", c.epochs},
            {"max_steps", c.max_steps},
            {"seed", c.seed},
            {"contrast_sign", c.contrast_sign},
            {"weight_decay", c.weight_decay},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    StrictReader r(j, "train");
    r.get("lr", c.lr).get("batch_size", c.batch_size).get("alpha1", c.alpha1).get("alpha2", c.alpha2);
    r.get("alpha3", c.alpha3).get("cond_dropout", c.cond_dropout).get("epochs", c.epochs);
    r.get("max_steps", c.max_steps).get("seed", c.seed).get("contrast_sign", c.contrast_sign);
    r.get("weight_decay", c.weight_decay).get("beta1", c.beta1).get("beta2", c.beta2).get("adam_eps", c.adam_eps);
    r.finish();
    c.validate();
    return c;
}

double LossReport::recompose(const TrainConfig& c) const {
    return (l_normal * c.alpha1 + l_decouple * c.alpha2) + l_contrast * c.alpha3;
}

Tensor compute_masked_feature(const Tensor& f_tar, const Tensor& logits) {
    require_shape(f_tar.same_shape(logits), "compute_masked_feature: f_tar " + f_tar.shape_str() + " vs logits " +
                                                logits.shape_str());
    Tensor out(f_tar.rows, f_tar.cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f_tar.data[i] * (1.0 / (1.0 + std::exp(-logits.data[i])));
    return out;
}

double contrastive_loss(const Tensor& f_fuse, const Tensor& f_msk, double sign, bool* degenerate) {
    require_shape(f_fuse.size() == f_msk.size(), "contrastive_loss: width mismatch");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < f_fuse.size(); ++i) {
        dot += f_fuse.data[i] * f_msk.data[i];
        na += f_fuse.data[i] * f_fuse.data[i];
        nb += f_msk.data[i] * f_msk.data[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    const bool bad = na < 1e-12 || nb < 1e-12;
    if (degenerate != nullptr) *degenerate = bad;
    if (bad) {
        std::cerr << "warning: contrastive loss on a near-zero vector; contributing 0\n";
        return 0.0;
    }
    return sign * (dot / (na * nb));
}

DropoutDecision apply_condition_dropout(double u_g, double u_l, double p) { return {u_g < p, u_l < p}; }

StepDraws draw_step(const CustomizerModel& model, int batch, double cond_dropout, std::mt19937_64& rng) {
    const auto& uc = model.config().unet;
    StepDraws d;
    std::uniform_int_distribution<int> ut(0, model.schedule().T() - 1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int i = 0; i < batch; ++i) {
        d.t.push_back(ut(rng));
        d.eps.push_back(randn(uc.latent_size * uc.latent_size, uc.latent_channels, rng));
        const double ug = u01(rng), ul = u01(rng);
        d.dropout.push_back(apply_condition_dropout(ug, ul, cond_dropout));
    }
    return d;
}

namespace {

// Token sequences for every sample, with dropped samples reading the null rows.
diffusion::CondBatch assemble_global(ad::Graph& g, const std::vector<const PreparedSample*>& batch, ad::Var fused,
                                     ad::Var null_g, const std::vector<DropoutDecision>& dropout) {
    std::vector<Tensor> stacked;
    std::vector<int> base;
    int total = 0;
    for (const auto* s : batch) {
        s->text.validate();
        base.push_back(total);
        total += s->text.tokens.rows;
        stacked.push_back(s->text.tokens);
    }
    const int n = static_cast<int>(batch.size());
    ad::Var pool = ad::concat_rows({g.constant(concat_rows(stacked)), fused, null_g});
    std::vector<int> index;
    std::vector<int> offsets{0};
    for (int s = 0; s < n; ++s) {
        if (dropout[static_cast<std::size_t>(s)].global) {
            for (int r = 0; r < null_g.rows(); ++r) index.push_back(total + n + r);
        } else {
            const auto& t = batch[static_cast<std::size_t>(s)]->text;
            for (int r = 0; r < t.span_start; ++r) index.push_back(base[static_cast<std::size_t>(s)] + r);
            index.push_back(total + s);
            for (int r = t.span_end; r < t.tokens.rows; ++r) index.push_back(base[static_cast<std::size_t>(s)] + r);
        }
        offsets.push_back(static_cast<int>(index.size()));
    }
    return {ad::gather_rows(pool, std::move(index)), std::move(offsets)};
}

diffusion::CondBatch concat_batches(const diffusion::CondBatch& a, const diffusion::CondBatch& b) {
    std::vector<int> offsets = a.offsets;
    const int shift = a.offsets.back();
    for (std::size_t i = 1; i < b.offsets.size(); ++i) offsets.push_back(b.offsets[i] + shift);
    return {ad::concat_rows({a.tokens, b.tokens}), std::move(offsets)};
}

// Projected patch tokens of the reconstruction path on the detail grid.
ad::Var align_projected(ad::Graph& g, ad::Var patches, int samples, int from, int to) {
    if (from == to) return patches;
    const int sg = static_cast<int>(std::lround(std::sqrt(from))), dg = static_cast<int>(std::lround(std::sqrt(to)));
    require_shape(sg * sg == from && dg * dg == to, "patch alignment needs square grids");
    ad::Var r = g.constant(inject::grid_resample_matrix(sg, dg));
    std::vector<ad::Var> parts;
    for (int s = 0; s < samples; ++s) parts.push_back(ad::matmul(r, ad::slice_rows(patches, s * from, from)));
    return ad::concat_rows(parts);
}

}  // namespace

BatchConditions build_batch_conditions(ad::Graph& g, const CustomizerModel& model,
                                       const std::vector<const PreparedSample*>& batch,
                                       const std::vector<DropoutDecision>& dropout) {
    require_shape(!batch.empty() && dropout.size() == batch.size(), "build_batch_conditions: batch/dropout mismatch");
    const int n = static_cast<int>(batch.size());
    const int d = model.config().d_model();

    auto stack = [&](auto pick) {
        std::vector<Tensor> parts;
        for (const auto* s : batch) parts.push_back(pick(*s));
        return concat_rows(parts);
    };
    const Tensor text_C = stack([](const PreparedSample& s) { return inject::class_word_embedding(s.text); });
    const Tensor f_tar = stack([](const PreparedSample& s) { return s.f_tar; });

    const int np_d = batch.front()->detail.patch_tokens.rows;
    const int np_r = batch.front()->recon.patch_tokens.rows;
    const int np = model.uses_detail() ? np_d : np_r;

    ad::Var dino_C = g.constant(Tensor(n, d)), mae_C = g.constant(Tensor(n, d));
    std::optional<ad::Var> local;
    if (model.uses_detail()) {
        dino_C = model.detail_projector()(g.constant(stack([](const PreparedSample& s) { return s.detail.class_token; })));
        ad::Var dino_P =
            model.detail_projector()(g.constant(stack([](const PreparedSample& s) { return s.detail.patch_tokens; })));
        local = model.local_detail()(dino_P);
    }
    if (model.uses_recon()) {
        mae_C = model.recon_projector()(g.constant(stack([](const PreparedSample& s) { return s.recon.class_token; })));
        ad::Var mae_P =
            model.recon_projector()(g.constant(stack([](const PreparedSample& s) { return s.recon.patch_tokens; })));
        ad::Var l = model.local_recon()(align_projected(g, mae_P, n, np_r, np));
        local = local ? ad::add(*local, l) : l;
    }

    BatchConditions c;
    c.fused = inject::fuse_class_token(g.constant(text_C), dino_C, mae_C, model.fuse());
    ad::Var sig = ad::sigmoid(g.param(model.mask_logits()));
    c.f_msk = ad::mul(g.constant(f_tar), ad::gather_rows(sig, std::vector<int>(static_cast<std::size_t>(n), 0)));
    ad::Var null_g = g.param(model.null_global());
    c.global_plain = assemble_global(g, batch, c.fused, null_g, dropout);
    c.global_masked = assemble_global(g, batch, ad::add(c.fused, c.f_msk), null_g, dropout);

    ad::Var null_l = g.param(model.null_local());
    ad::Var pool = ad::concat_rows({*local, null_l});
    std::vector<int> index;
    c.local.offsets = {0};
    for (int s = 0; s < n; ++s) {
        if (dropout[static_cast<std::size_t>(s)].local)
            for (int r = 0; r < null_l.rows(); ++r) index.push_back(n * np + r);
        else
            for (int r = 0; r < np; ++r) index.push_back(s * np + r);
        c.local.offsets.push_back(static_cast<int>(index.size()));
    }
    c.local.tokens = ad::gather_rows(pool, std::move(index));
    return c;
}

BranchOutput branch_losses(ad::Graph& g, const CustomizerModel& model, const std::vector<const PreparedSample*>& batch,
                           const StepDraws& draws, const TrainConfig& cfg, const Predictor& predictor) {
    const int n = static_cast<int>(batch.size());
    require_shape(static_cast<int>(draws.t.size()) == n && static_cast<int>(draws.eps.size()) == n,
                  "branch_losses: draws do not match batch");
    const BatchConditions c = build_batch_conditions(g, model, batch, draws.dropout);

    std::vector<Tensor> xt;
    for (int s = 0; s < n; ++s)
        xt.push_back(diffusion::forward_diffuse(model.schedule(), batch[static_cast<std::size_t>(s)]->x0,
                                                draws.t[static_cast<std::size_t>(s)], draws.eps[static_cast<std::size_t>(s)]));
    const Tensor x_t = concat_rows(xt);
    const Tensor eps = concat_rows(draws.eps);

    // Both branches in one denoiser batch: rows [0, n) carry f_msk, rows [n, 2n) do not.
    std::vector<int> t2 = draws.t;
    t2.insert(t2.end(), draws.t.begin(), draws.t.end());
    const auto global = concat_batches(c.global_masked, c.global_plain);
    const auto local = concat_batches(c.local, c.local);
    ad::Var x2 = g.constant(concat_rows({x_t, x_t}));
    ad::Var pred = predictor ? predictor(x2, t2, global, local) : model.unet().forward(x2, t2, global, &local);
    require_shape(pred.rows() == 2 * x_t.rows && pred.cols() == x_t.cols, "branch_losses: predictor output shape");

    ad::Var target = g.constant(eps);
    ad::Var l_normal = ad::mse(ad::slice_rows(pred, 0, x_t.rows), target);
    ad::Var l_decouple = ad::mse(ad::slice_rows(pred, x_t.rows, x_t.rows), target);

    BranchOutput out;
    ad::Var cos = ad::row_cosine(c.fused, c.f_msk);
    const Tensor& fv = c.fused.value();
    const Tensor& mv = c.f_msk.value();
    double abs_cos = 0;
    for (int s = 0; s < n; ++s) {
        abs_cos += std::abs(cos.value()(s, 0));
        double na = 0, nb = 0;
        for (int j = 0; j < fv.cols; ++j) {
            na += fv(s, j) * fv(s, j);
            nb += mv(s, j) * mv(s, j);
        }
        if (std::sqrt(na) < 1e-12 || std::sqrt(nb) < 1e-12) ++out.report.degenerate;
    }
    if (out.report.degenerate > 0)
        std::cerr << "warning: " << out.report.degenerate << " sample(s) with a degenerate contrastive direction\n";
    out.report.mean_abs_cos = abs_cos / n;

    // With alpha3 = 0 the contrastive term is switched off rather than merely weighted away.
    ad::Var l_contrast = cfg.alpha3 != 0.0 ? ad::scale(ad::mean(cos), cfg.contrast_sign) : g.constant(Tensor(1, 1));

    out.total = ad::add(ad::add(ad::scale(l_normal, cfg.alpha1), ad::scale(l_decouple, cfg.alpha2)),
                        ad::scale(l_contrast, cfg.alpha3));
    out.report.l_normal = l_normal.value().data[0];
    out.report.l_decouple = l_decouple.value().data[0];
    out.report.l_contrast = l_contrast.value().data[0];
    out.report.l_total = out.total.value().data[0];
    return out;
}

double probe_abs_cos(const CustomizerModel& model, const std::vector<PreparedSample>& probe) {
    if (probe.empty()) return 0.0;
    ad::Graph g;
    std::vector<const PreparedSample*> batch;
    for (const auto& p : probe) batch.push_back(&p);
    const auto c = build_batch_conditions(g, model, batch, std::vector<DropoutDecision>(batch.size()));
    double acc = 0;
    for (int s = 0; s < static_cast<int>(batch.size()); ++s)
        acc += std::abs(contrastive_loss(c.fused.value().slice_rows(s, 1), c.f_msk.value().slice_rows(s, 1)));
    return acc / static_cast<double>(batch.size());
}

// ---- optimizer --------------------------------------------------------------

void AdamW::step(ad::ParamStore& store) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto* p : store.all()) {
        if (!p->trainable || p->grad.empty()) continue;
        auto& [m, v] = moments_[p->name];
        if (m.empty()) {
            m = Tensor(p->value.rows, p->value.cols);
            v = Tensor(p->value.rows, p->value.cols);
        }
        const double decay = p->decay ? 1.0 - cfg_.lr * cfg_.weight_decay : 1.0;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double gr = p->grad.data[i];
            m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * gr;
            v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * gr * gr;
            const double mh = m.data[i] / bc1, vh = v.data[i] / bc2;
            p->value.data[i] = p->value.data[i] * decay - cfg_.lr * mh / (std::sqrt(vh) + cfg_.adam_eps);
        }
    }
}

void AdamW::save(json& meta, std::vector<std::pair<std::string, Tensor>>& blocks) const {
    meta["adam_t"] = t_;
    for (const auto& [name, mv] : moments_) {
        blocks.emplace_back("adam.m/" + name, mv.first);
        blocks.emplace_back("adam.v/" + name, mv.second);
    }
}

void AdamW::load(const json& meta, const std::vector<std::pair<std::string, Tensor>>& blocks) {
    t_ = meta.value("adam_t", 0L);
    moments_.clear();
    for (const auto& [name, t] : blocks) {
        if (name.rfind("adam.m/", 0) == 0) moments_[name.substr(7)].first = t;
        if (name.rfind("adam.v/", 0) == 0) moments_[name.substr(7)].second = t;
    }
}

// ---- data -------------------------------------------------------------------

std::vector<TrainRecord> records_from_pairs(const std::vector<data::PairSample>& pairs) {
    std::vector<TrainRecord> out;
    for (const auto& p : pairs) out.push_back({p.ref_image, p.ref_mask, p.target_image, p.caption, p.class_word});
    return out;
}

std::vector<TrainRecord> records_from_manifest(const data::Manifest& manifest) {
    std::vector<TrainRecord> out(manifest.records.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& r = manifest.records[i];
        auto loaded = data::load_record(manifest, r);
        out[i] = {std::move(loaded.ref_image), std::move(loaded.ref_mask), std::move(loaded.target_image), r.caption,
                  r.class_word};
    }
    return out;
}

std::vector<PreparedSample> prepare_all(const CustomizerModel& model, const std::vector<TrainRecord>& records) {
    std::vector<PreparedSample> out(records.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        out[i] = model.prepare(r.ref_image, r.ref_mask, r.target_image, r.caption, r.class_word);
    }
    return out;
}

// ---- training loop ------------------------------------------------------------

namespace {

bool grads_finite(const ad::ParamStore& store) {
    for (const auto* p : store.all())
        if (!p->grad.empty() && !p->grad.all_finite()) return false;
    return true;
}

}  // namespace

TrainSummary train(const TrainConfig& cfg, const std::vector<PreparedSample>& data, CustomizerModel& model,
                   const TrainHooks& hooks, AdamW* optimizer) {
    cfg.validate();
    TrainSummary sum;
    const int n = static_cast<int>(data.size());
    const int batch = std::min(cfg.batch_size, std::max(n, 1));
    const long per_epoch = n == 0 ? 0 : (n + batch - 1) / batch;
    const long total = cfg.max_steps > 0 ? cfg.max_steps : per_epoch * cfg.epochs;
    if (total > 0 && n == 0) throw ConfigError("train: empty dataset");

    AdamW local_opt(cfg);
    AdamW& opt = optimizer != nullptr ? *optimizer : local_opt;
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    int epoch = 0;
    long pos_in_epoch = per_epoch;  // forces a shuffle before the first step
    for (long step = 0; step < total; ++step) {
        if (pos_in_epoch == per_epoch) {
            if (step > 0) {
                ++epoch;
                sum.epochs_completed = epoch;
                if (hooks.on_epoch) hooks.on_epoch(epoch, model, opt);
            }
            std::shuffle(order.begin(), order.end(), rng);
            pos_in_epoch = 0;
        }
        const int start = static_cast<int>(pos_in_epoch) * batch;
        const int count = std::min(batch, n - start);
        ++pos_in_epoch;

        std::vector<const PreparedSample*> b;
        for (int i = 0; i < count; ++i) b.push_back(&data[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])]);
        const StepDraws draws = draw_step(model, count, cfg.cond_dropout, rng);

        model.params().zero_grad();
        ad::Graph g;
        auto out = branch_losses(g, model, b, draws, cfg);
        bool ok = std::isfinite(out.report.l_total);
        if (!ok) {
            std::cerr << "step " << step << ": non-finite loss (normal=" << out.report.l_normal
                      << " decouple=" << out.report.l_decouple << " contrast=" << out.report.l_contrast
                      << "); step skipped\n";
        } else {
            g.backward(out.total);
            ok = grads_finite(model.params());
            if (!ok) std::cerr << "step " << step << ": non-finite gradient; step skipped\n";
        }
        if (ok)
            opt.step(model.params());
        else
            ++sum.skipped;
        ++sum.steps;
        if (hooks.on_step) hooks.on_step(step, epoch, out.report);
    }
    if (total > 0 && pos_in_epoch == per_epoch) {
        sum.epochs_completed = epoch + 1;
        if (hooks.on_epoch) hooks.on_epoch(epoch + 1, model, opt);
    }
    model.params().zero_grad();
    if (sum.steps > 0 && static_cast<double>(sum.skipped) > 0.01 * static_cast<double>(sum.steps))
        throw TrainingFailed("training failed: " + std::to_string(sum.skipped) + " of " + std::to_string(sum.steps) +
                             " steps skipped for non-finite values (limit 1%)");
    return sum;
}

// ---- checkpoints ----------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const CustomizerModel& model, const json& config_echo,
                     const AdamW* optimizer, long step) {
    Archive a;
    a.meta["format"] = "objcustom-checkpoint";
    a.meta["model"] = to_json(model.config());
    a.meta["config"] = config_echo;
    a.meta["schedule"] = {{"T", model.schedule().T()}, {"betas", model.schedule().betas}};
    a.meta["step"] = step;
    store_to_archive(model.params(), a, "param/");
    if (optimizer != nullptr) optimizer->save(a.meta, a.blocks);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_archive(path, a);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const TrainConfig* optimizer_cfg) {
    const Archive a = read_archive(path);
    if (a.meta.value("format", std::string{}) != "objcustom-checkpoint")
        throw ConfigError(path.string() + " is not a checkpoint archive");
    LoadedCheckpoint c;
    c.model = CustomizerModel::create(model_config_from_json(a.meta.at("model")), 0);
    load_from_archive(c.model->params(), a, "param/");
    if (a.meta.at("schedule").at("betas").get<std::vector<double>>() != c.model->schedule().betas)
        throw ConfigError(path.string() + ": stored schedule differs from the one its config produces");
    c.config_echo = a.meta.value("config", json::object());
    c.step = a.meta.value("step", 0L);
    if (optimizer_cfg != nullptr && a.meta.contains("adam_t")) {
        c.optimizer.emplace(*optimizer_cfg);
        c.optimizer->load(a.meta, a.blocks);
    }
    return c;
}

}  // namespace objcustom::train
