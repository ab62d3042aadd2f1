#pragma once

// Evaluation: embedding similarities on a 0-100 scale, FID, DiverSim-i,
// a colour-fidelity score, and the manifest-level report.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "objcustom/dataset.hpp"
#include "objcustom/id_extractor.hpp"
#include "objcustom/scenarios.hpp"

namespace objcustom::metrics {

enum class EmbedderRole { ImageSim, TextSim, Face };

struct Embedder {
    std::string name;
    EmbedderRole role = EmbedderRole::ImageSim;
    int dim = 0;
    std::string weights_ref;
    bool normalize = false;
    std::function<std::vector<double>(const ImageTensor&)> image_fn;
    std::function<std::vector<double>(const std::string&)> text_fn;  // text_sim only

    std::vector<double> embed(const ImageTensor& img) const;
    std::vector<double> embed_text(const std::string& text) const;
};

// Class token of a frozen encoder.
Embedder encoder_embedder(const std::string& name, const id::EncoderSpec& spec);
// CLIP-i role: colour-sensitive RGB encoder.
Embedder toy_clip_image(const std::string& weights_ref = "toy:101");
// DINO-i role: luminance-structure encoder.
Embedder toy_dino_image(const std::string& weights_ref = "toy:103");
// CLIP-t role: image side scores the border colour against the toy background
// palette, text side one-hot encodes the scenario keyword (plain when none).
Embedder toy_clip_text();

// 100 * cos(a, b); std::invalid_argument on a zero-norm vector.
double similarity(const std::vector<double>& a, const std::vector<double>& b);
double pairwise_sim(const Embedder& e, const ImageTensor& a, const ImageTensor& b);

struct FidResult {
    double value = 0;
    bool regularized = false;
};
// Rows are samples. Uses an eigen-decomposition square root of the symmetric
// product sqrt(Sa) Sb sqrt(Sa).
FidResult fid(const Tensor& features_a, const Tensor& features_b);

struct MeanStd {
    double mean = 0;
    double std = 0;
};

// Mean and standard deviation of pairwise similarity over cross-scenario pairs
// (all unordered pairs when all_pairs). std::invalid_argument when fewer than two
// scenarios or any scenario is empty.
MeanStd diversim_from_embeddings(const std::map<std::string, std::vector<std::vector<double>>>& by_scenario,
                                 bool all_pairs = false);
MeanStd diversim_i(const std::map<std::string, std::vector<ImageTensor>>& by_scenario, const Embedder& e,
                   bool all_pairs = false);

// Pearson correlation of 4x4x4 RGB histograms: generation foreground (pixels more
// than 0.15 from the border median colour) against the reference's masked pixels.
double color_fidelity(const ImageTensor& generation, const ImageTensor& reference, const SegMask& reference_mask);
std::vector<double> color_histogram(const ImageTensor& img, const std::vector<std::uint8_t>* keep);
std::vector<std::uint8_t> foreground_pixels(const ImageTensor& img, double threshold = 0.15);

enum class CompareTo { Reference, Target };
std::string to_string(CompareTo c);
CompareTo compare_to_from_string(const std::string& s);

struct Embedders {
    Embedder clip_image = toy_clip_image();
    Embedder dino_image = toy_dino_image();
    Embedder clip_text = toy_clip_text();
    std::optional<Embedder> face;
};

struct EvalConfig {
    CompareTo compare_to = CompareTo::Reference;
    bool diversim_all_pairs = false;
    double max_missing_fraction = 0.05;
    ScenarioPromptSet prompts = ScenarioPromptSet::defaults();
};

struct MetricReport {
    double fid = 0;
    bool fid_regularized = false;
    double clip_i = 0;
    double dino_i = 0;
    std::optional<double> clip_t;
    std::optional<double> face_sim;
    std::optional<MeanStd> diversim_i;
    double color_fidelity = 0;
    int n_samples = 0;
    int n_evaluated = 0;
    std::vector<std::string> missing;

    bool too_many_missing(double max_fraction) const;
    nlohmann::json to_json() const;
};

// Generations live at <dir>/<sample_id>.ppm; scenario generations at
// <dir>/<sample_id>/<scenario>_<k>.ppm where k indexes the scenario's suffixes.
std::filesystem::path generation_path(const std::filesystem::path& dir, const std::string& sample_id);
std::filesystem::path scenario_path(const std::filesystem::path& dir, const std::string& sample_id,
                                    const std::string& scenario, int k);

// Missing generations are listed and excluded; throws std::runtime_error when none remain.
MetricReport evaluate(const data::Manifest& manifest, const std::filesystem::path& generations_dir,
                      const Embedders& embedders, const EvalConfig& cfg);

}  // namespace objcustom::metrics
