#pragma once

// Small end-to-end runs on the procedural corpus: build pairs, train, then
// generate for held-out references and score the generations.

#include <cstdint>
#include <vector>

#include "objcustom/config.hpp"
#include "objcustom/dataset.hpp"

namespace objcustom::experiment {

struct ToyData {
    std::vector<data::PairSample> train;
    std::vector<data::PairSample> probe;  // held-out renders
};

struct ToyDataOptions {
    int train_groups = 120;
    int probe_groups = 24;
    int frames_per_group = 5;
    int pairs_per_group = 4;
    std::uint64_t train_seed = 1;
    std::uint64_t probe_seed = 2;
    int max_side = 64;  // pairs are downscaled to this after the build
};

ToyData make_toy_data(const ToyDataOptions& opt = {});

// Training settings sized for a single CPU core: the backbone starts from
// scratch, so the step size is larger and the batch smaller than the defaults.
RunConfig toy_run_config(std::uint64_t seed = 0);

struct ToyEvalOptions {
    int samples = 12;           // probe pairs that get generations
    std::uint64_t seed = 1000;  // generation seed base, shared by compared runs
    int steps = 50;
    double guidance = 7.0;
};

struct ToyResult {
    double abs_cos_init = 0;
    double abs_cos_final = 0;
    double clip_i = 0;
    double dino_i = 0;
    double diversim = 0;
    double color_fidelity = 0;
    double first_l_normal = 0;  // mean over the first 20 steps
    double last_l_normal = 0;   // mean over the last 20 steps
    double train_seconds = 0;
};

ToyResult run_toy(const RunConfig& cfg, const ToyData& data, const ToyEvalOptions& eval = {});

}  // namespace objcustom::experiment
