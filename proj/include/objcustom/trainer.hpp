#pragma once

// Two-branch decoupling training. Branch A conditions on c_g whose fused class
// token has f_msk = f_tar * sigmoid(logits) added to it; branch B conditions on
// c_g alone. Both share c_l, the timestep and the noise.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "objcustom/dataset.hpp"
#include "objcustom/model.hpp"

namespace objcustom::train {

struct TrainConfig {
    double lr = 1e-5;
    int batch_size = 32;
    double alpha1 = 1.0;  // branch with f_msk
    double alpha2 = 1.0;  // branch without
    double alpha3 = 0.01;
    double cond_dropout = 0.1;
    int epochs = 6;
    int max_steps = 0;  // > 0 overrides epochs
    std::uint64_t seed = 0;
    double contrast_sign = 1.0;
    double weight_decay = 0.01;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct LossReport {
    double l_normal = 0;    // branch with f_msk
    double l_decouple = 0;  // branch without
    double l_contrast = 0;
    double l_total = 0;
    double mean_abs_cos = 0;  // diagnostic, |cos(f_fuse, f_msk)| over the batch
    int degenerate = 0;       // samples whose cosine was undefined

    // alpha1 * l_normal + alpha2 * l_decouple + alpha3 * l_contrast, same operation order as the graph.
    double recompose(const TrainConfig& c) const;
};

// f_tar * sigmoid(logits); ShapeError on width mismatch.
Tensor compute_masked_feature(const Tensor& f_tar, const Tensor& logits);

// sign * cos(a, b); returns 0 and sets *degenerate when either norm is below 1e-12.
double contrastive_loss(const Tensor& f_fuse, const Tensor& f_msk, double sign = 1.0, bool* degenerate = nullptr);

struct DropoutDecision {
    bool global = false;
    bool local = false;
};
// A path is nulled when its draw is below p.
DropoutDecision apply_condition_dropout(double u_g, double u_l, double p);

template <class C>
std::pair<C, C> apply_condition_dropout(const C& c_g, const C& c_l, const C& null_g, const C& null_l, double u_g,
                                        double u_l, double p) {
    const auto d = apply_condition_dropout(u_g, u_l, p);
    return {d.global ? null_g : c_g, d.local ? null_l : c_l};
}

// Per-sample draws for one step.
struct StepDraws {
    std::vector<int> t;
    std::vector<Tensor> eps;
    std::vector<DropoutDecision> dropout;
};
StepDraws draw_step(const CustomizerModel& model, int batch, double cond_dropout, std::mt19937_64& rng);

// Noise predictor used by the branches; defaults to the model's denoiser.
using Predictor = std::function<ad::Var(ad::Var x_t, const std::vector<int>& t, const diffusion::CondBatch& global,
                                        const diffusion::CondBatch& local)>;

// Graph-level conditions for a batch of prepared samples.
struct BatchConditions {
    ad::Var fused;  // [B x d]
    ad::Var f_msk;  // [B x d]
    diffusion::CondBatch global_plain;   // branch B
    diffusion::CondBatch global_masked;  // branch A
    diffusion::CondBatch local;
};

BatchConditions build_batch_conditions(ad::Graph& g, const CustomizerModel& model,
                                       const std::vector<const PreparedSample*>& batch,
                                       const std::vector<DropoutDecision>& dropout);

struct BranchOutput {
    LossReport report;
    ad::Var total;  // 1x1, differentiable
};

BranchOutput branch_losses(ad::Graph& g, const CustomizerModel& model, const std::vector<const PreparedSample*>& batch,
                           const StepDraws& draws, const TrainConfig& cfg, const Predictor& predictor = {});

// Mean |cos(f_fuse, f_msk)| without dropout.
double probe_abs_cos(const CustomizerModel& model, const std::vector<PreparedSample>& probe);

class AdamW {
public:
    AdamW(const TrainConfig& cfg) : cfg_(cfg) {}
    void step(ad::ParamStore& store);
    long steps() const { return t_; }
    void save(nlohmann::json& meta, std::vector<std::pair<std::string, Tensor>>& blocks) const;
    void load(const nlohmann::json& meta, const std::vector<std::pair<std::string, Tensor>>& blocks);

private:
    TrainConfig cfg_;
    long t_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

struct TrainRecord {
    ImageTensor ref_image;
    SegMask ref_mask;
    ImageTensor target_image;
    std::string caption;
    std::string class_word;
};

std::vector<TrainRecord> records_from_pairs(const std::vector<data::PairSample>& pairs);
std::vector<TrainRecord> records_from_manifest(const data::Manifest& manifest);
// Frozen-encoder passes, parallel over records.
std::vector<PreparedSample> prepare_all(const CustomizerModel& model, const std::vector<TrainRecord>& records);

struct TrainHooks {
    std::function<void(long step, int epoch, const LossReport&)> on_step;
    std::function<void(int epoch, const CustomizerModel&, const AdamW&)> on_epoch;
};

struct TrainSummary {
    long steps = 0;
    long skipped = 0;
    int epochs_completed = 0;
};

class TrainingFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Throws TrainingFailed when more than 1% of steps had to be skipped.
TrainSummary train(const TrainConfig& cfg, const std::vector<PreparedSample>& data, CustomizerModel& model,
                   const TrainHooks& hooks = {}, AdamW* optimizer = nullptr);

// ---- checkpoints ----------------------------------------------------------

// Archive holding every trainable parameter, the optimizer state when given,
// the schedule and the supplied config echo.
void save_checkpoint(const std::filesystem::path& path, const CustomizerModel& model, const nlohmann::json& config_echo,
                     const AdamW* optimizer = nullptr, long step = 0);

struct LoadedCheckpoint {
    std::unique_ptr<CustomizerModel> model;
    nlohmann::json config_echo;
    std::optional<AdamW> optimizer;
    long step = 0;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const TrainConfig* optimizer_cfg = nullptr);

}  // namespace objcustom::train
