#pragma once

// Inference: reference + prompt -> conditions -> guided DDIM -> images.

#include <cstdint>
#include <string>
#include <vector>

#include "objcustom/model.hpp"

namespace objcustom::gen {

struct Conditions {
    inject::GlobalCondition c_g;
    inject::LocalCondition c_l;
    int fused_row = 0;  // row of c_g holding the fused class token
    Tensor fused;       // [1 x d_model]
};

// Throws std::invalid_argument naming class_word when it does not occur in prompt.
Conditions build_conditions(const CustomizerModel& model, const ImageTensor& ref, const SegMask& mask,
                            const std::string& prompt, const std::string& class_word);

struct SampleOptions {
    int steps = 50;
    double guidance = 7.0;
};

// Starting latent for one trajectory.
Tensor initial_noise(const CustomizerModel& model, std::uint64_t seed);

// One trajectory per condition; trajectories share timesteps and run as a single
// denoiser batch. Unconditional predictions use the learned null tokens.
std::vector<ImageTensor> sample_batch(const CustomizerModel& model, const std::vector<Conditions>& conds,
                                      const std::vector<std::uint64_t>& seeds, const SampleOptions& opt);

ImageTensor sample(const CustomizerModel& model, const Conditions& cond, std::uint64_t seed, const SampleOptions& opt);

}  // namespace objcustom::gen
