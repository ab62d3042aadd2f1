#pragma once

// Reference/target pair construction from video clips, multi-view sets and
// single images, the resolution filter, and the line-delimited manifest.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "objcustom/image.hpp"

namespace objcustom::data {

enum class GroupKind { Video, Multiview, Single };
std::string to_string(GroupKind k);
GroupKind group_kind_from_string(const std::string& s);

struct Frame {
    ImageTensor image;
    SegMask mask;
    std::string object_id;
    std::string caption;  // optional; falls back to the template caption
};

struct SourceGroup {
    std::string group_id;
    GroupKind kind = GroupKind::Video;
    std::string class_word;
    std::string category;
    std::vector<Frame> frames;
};

struct PairSample {
    ImageTensor ref_image;
    SegMask ref_mask;
    ImageTensor target_image;
    std::string caption;
    std::string class_word;
    std::string category;
    std::string sample_id;
    // Provenance, not persisted in the manifest.
    std::string ref_object_id;
    std::string target_object_id;
    Box ref_crop, target_crop;
    Box ref_bbox, target_bbox;  // object boxes in source-frame coordinates
};

std::string template_caption(const std::string& class_word);

bool passes_resolution(int height, int width, int min_side = 300);
std::vector<ImageTensor> filter_resolution(std::vector<ImageTensor> images, int min_side = 300);

struct PairingOptions {
    int min_side = 300;
    int min_frame_gap = 0;
    bool augment_flip = true;
    bool augment_crop = true;
    bool augment_jitter = true;  // target only
};

// Random window containing `bbox`, inside the frame, each side drawn uniformly from
// [max(box side, min_side), min(frame side, max(2 * box side, lower bound))].
Box random_crop_window(int frame_h, int frame_w, const Box& bbox, int min_side, std::mt19937_64& rng);

// Returns std::nullopt when no two eligible frames share an object_id (skip-group signal).
std::optional<PairSample> make_pair_from_group(const SourceGroup& group, std::mt19937_64& rng,
                                               const PairingOptions& opt = {});

struct Augmentation {
    bool flip = false;
    Box crop;
    double brightness = 1.0;
    double saturation = 1.0;
    bool operator==(const Augmentation&) const = default;
};

Augmentation sample_augmentation(int h, int w, const Box& bbox, bool jitter, std::mt19937_64& rng,
                                 const PairingOptions& opt);
ImageTensor apply_augmentation(const ImageTensor& img, const Augmentation& a);
SegMask apply_augmentation(const SegMask& m, const Augmentation& a);

struct SinglePair {
    PairSample sample;
    Augmentation ref_aug, target_aug;
};

SinglePair make_pair_from_single(const ImageTensor& image, const SegMask& mask, std::mt19937_64& rng,
                                 const PairingOptions& opt = {});

struct BuildOptions {
    PairingOptions pairing;
    int pairs_per_group = 1;
};

// Pure function of (groups, seed): every group draws from its own RNG stream.
std::vector<PairSample> build_pairs(const std::vector<SourceGroup>& groups, std::uint64_t seed,
                                    const BuildOptions& opt = {});

// ---- manifest -----------------------------------------------------------

struct ManifestRecord {
    std::string sample_id;
    std::string ref_image_path;
    std::string ref_mask_path;
    std::string target_image_path;
    std::string caption;
    std::string class_word;
    std::string category;
    bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
    std::vector<ManifestRecord> records;
    std::map<std::string, int> stats;  // records per category
    std::filesystem::path root;        // directory relative paths resolve against

    std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

std::map<std::string, int> category_stats(const std::vector<ManifestRecord>& records);

class ValidationError : public std::runtime_error {
public:
    ValidationError(const std::string& what, std::vector<std::string> problems)
        : std::runtime_error(what), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

// Writes `path` (one JSON object per line) and `path` + ".stats.json".
Manifest write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path);
// Validates fields, file existence, resolution and stats; throws ValidationError listing every problem.
Manifest read_manifest(const std::filesystem::path& path, int min_side = 300);

// Writes images under out_dir/images and the manifest at out_dir/manifest.jsonl.
Manifest write_dataset(const std::vector<PairSample>& pairs, const std::filesystem::path& out_dir);

struct LoadedRecord {
    ImageTensor ref_image;
    SegMask ref_mask;
    ImageTensor target_image;
};
LoadedRecord load_record(const Manifest& m, const ManifestRecord& r);

// ---- source directories -------------------------------------------------

// <dir>/<group_id>/group.json + frame rasters.
void write_sources(const std::vector<SourceGroup>& groups, const std::filesystem::path& dir);
std::vector<SourceGroup> read_sources(const std::filesystem::path& dir);

// ---- toy corpus ---------------------------------------------------------

struct ToyIdentity {
    std::string shape;    // class word
    std::string color;
    std::string texture;  // solid | striped | dotted
    std::string object_id() const { return shape + "-" + color + "-" + texture; }
};

struct ToyPose {
    double cx = 0, cy = 0;  // centre, pixels
    double size = 100;      // bounding-circle diameter, pixels
    double angle = 0;       // radians
};

const std::vector<std::string>& toy_shapes();
const std::vector<std::string>& toy_colors();
const std::vector<std::string>& toy_textures();
// "plain" plus the scenario names of ScenarioPromptSet::defaults().
const std::vector<std::string>& toy_backgrounds();
std::array<double, 3> toy_color_rgb(const std::string& color);
// Average background colour, a palette entry for the toy text-image embedder.
std::array<double, 3> toy_background_mean(const std::string& background);

ImageTensor render_toy(const ToyIdentity& id, const ToyPose& pose, const std::string& background, int height,
                       int width, std::uint64_t noise_seed, SegMask* mask_out);

struct ToyCorpusOptions {
    int groups = 10;
    int frames_per_group = 5;
    double single_fraction = 0.2;  // share of groups that are single images
    double small_fraction = 0.1;   // share of groups rendered below 300 px
    double plain_fraction = 0.3;   // share of frames on the plain background
    int min_canvas = 300;
    int max_canvas = 400;
};

// Each group draws from its own stream, so any subset can be regenerated alone.
SourceGroup make_toy_group(const ToyCorpusOptions& opt, std::uint64_t seed, int index);
std::vector<SourceGroup> make_toy_sources(const ToyCorpusOptions& opt, std::uint64_t seed);

// Downscales so the longer side is at most max_side (mask by nearest neighbour).
// The result no longer satisfies the resolution filter; use it only in memory.
PairSample shrink_pair(const PairSample& p, int max_side);

}  // namespace objcustom::data
