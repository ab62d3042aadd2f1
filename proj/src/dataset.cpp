#include "objcustom/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "objcustom/scenarios.hpp"

namespace objcustom::data {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string to_string(GroupKind k) {
    switch (k) {
        case GroupKind::Video: return "video";
        case GroupKind::Multiview: return "multiview";
        case GroupKind::Single: return "single";
    }
    return "video";
}

GroupKind group_kind_from_string(const std::string& s) {
    if (s == "video") return GroupKind::Video;
    if (s == "multiview") return GroupKind::Multiview;
    if (s == "single") return GroupKind::Single;
    throw ConfigError("unknown group kind '" + s + "'");
}

std::string template_caption(const std::string& class_word) { return "a photo of a " + class_word; }

bool passes_resolution(int height, int width, int min_side) { return std::min(height, width) >= min_side; }

std::vector<ImageTensor> filter_resolution(std::vector<ImageTensor> images, int min_side) {
    std::vector<ImageTensor> kept;
    for (auto& img : images)
        if (passes_resolution(img.height, img.width, min_side)) kept.push_back(std::move(img));
    return kept;
}

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::pair<int, int> window_axis(int frame, int b0, int b1, int min_side, std::mt19937_64& rng) {
    const int bs = b1 - b0;
    const int lo = std::min(std::max(bs, min_side), frame);
    const int hi = std::min(frame, std::max(2 * bs, lo));
    const int side = uniform_int(rng, lo, hi);
    const int start = uniform_int(rng, std::max(0, b1 - side), std::min(b0, frame - side));
    return {start, start + side};
}

bool eligible(const Frame& f, int min_side) {
    return passes_resolution(f.image.height, f.image.width, min_side) && f.mask.height == f.image.height &&
           f.mask.width == f.image.width && f.mask.count() > 0;
}

Box flip_box(const Box& b, int width) { return {width - b.x1, b.y0, width - b.x0, b.y1}; }

}  // namespace

Box random_crop_window(int frame_h, int frame_w, const Box& bbox, int min_side, std::mt19937_64& rng) {
    require_shape(bbox.x0 >= 0 && bbox.y0 >= 0 && bbox.x1 <= frame_w && bbox.y1 <= frame_h && bbox.width() > 0 &&
                      bbox.height() > 0,
                  "random_crop_window: bbox outside frame");
    const auto [x0, x1] = window_axis(frame_w, bbox.x0, bbox.x1, min_side, rng);
    const auto [y0, y1] = window_axis(frame_h, bbox.y0, bbox.y1, min_side, rng);
    return {x0, y0, x1, y1};
}

std::optional<PairSample> make_pair_from_group(const SourceGroup& group, std::mt19937_64& rng,
                                               const PairingOptions& opt) {
    std::vector<int> ok;
    for (int i = 0; i < static_cast<int>(group.frames.size()); ++i)
        if (eligible(group.frames[static_cast<std::size_t>(i)], opt.min_side)) ok.push_back(i);

    std::vector<std::pair<int, int>> candidates;
    for (int i : ok)
        for (int j : ok)
            if (i != j && std::abs(i - j) >= opt.min_frame_gap &&
                group.frames[static_cast<std::size_t>(i)].object_id == group.frames[static_cast<std::size_t>(j)].object_id)
                candidates.emplace_back(i, j);
    if (candidates.empty()) return std::nullopt;

    const auto [ri, ti] = candidates[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(candidates.size()) - 1))];
    const Frame& ref = group.frames[static_cast<std::size_t>(ri)];
    const Frame& tgt = group.frames[static_cast<std::size_t>(ti)];

    PairSample s;
    s.ref_bbox = *mask_bbox(ref.mask);
    s.target_bbox = *mask_bbox(tgt.mask);
    s.ref_crop = random_crop_window(ref.image.height, ref.image.width, s.ref_bbox, opt.min_side, rng);
    s.target_crop = random_crop_window(tgt.image.height, tgt.image.width, s.target_bbox, opt.min_side, rng);
    s.ref_image = crop(ref.image, s.ref_crop);
    s.ref_mask = crop(ref.mask, s.ref_crop);
    s.target_image = crop(tgt.image, s.target_crop);
    s.caption = tgt.caption.empty() ? template_caption(group.class_word) : tgt.caption;
    s.class_word = group.class_word;
    s.category = group.category;
    s.ref_object_id = ref.object_id;
    s.target_object_id = tgt.object_id;
    return s;
}

Augmentation sample_augmentation(int h, int w, const Box& bbox, bool jitter, std::mt19937_64& rng,
                                 const PairingOptions& opt) {
    Augmentation a;
    if (opt.augment_flip) a.flip = std::bernoulli_distribution(0.5)(rng);
    const Box b = a.flip ? flip_box(bbox, w) : bbox;
    a.crop = opt.augment_crop ? random_crop_window(h, w, b, opt.min_side, rng) : Box{0, 0, w, h};
    if (jitter) {
        std::uniform_real_distribution<double> u(0.9, 1.1);
        a.brightness = u(rng);
        a.saturation = u(rng);
    }
    return a;
}

ImageTensor apply_augmentation(const ImageTensor& img, const Augmentation& a) {
    ImageTensor out = crop(a.flip ? hflip(img) : img, a.crop);
    if (a.brightness != 1.0 || a.saturation != 1.0) out = color_jitter(out, a.brightness, a.saturation);
    return out;
}

SegMask apply_augmentation(const SegMask& m, const Augmentation& a) { return crop(a.flip ? hflip(m) : m, a.crop); }

SinglePair make_pair_from_single(const ImageTensor& image, const SegMask& mask, std::mt19937_64& rng,
                                 const PairingOptions& opt) {
    require_shape(mask.height == image.height && mask.width == image.width, "make_pair_from_single: mask/image size");
    const auto bbox = mask_bbox(mask);
    require_shape(bbox.has_value(), "make_pair_from_single: empty mask");

    SinglePair p;
    p.ref_aug = sample_augmentation(image.height, image.width, *bbox, false, rng, opt);
    p.target_aug = sample_augmentation(image.height, image.width, *bbox, opt.augment_jitter, rng, opt);
    p.sample.ref_image = apply_augmentation(image, p.ref_aug);
    p.sample.ref_mask = apply_augmentation(mask, p.ref_aug);
    p.sample.target_image = apply_augmentation(image, p.target_aug);
    p.sample.ref_crop = p.ref_aug.crop;
    p.sample.target_crop = p.target_aug.crop;
    p.sample.ref_bbox = p.ref_aug.flip ? flip_box(*bbox, image.width) : *bbox;
    p.sample.target_bbox = p.target_aug.flip ? flip_box(*bbox, image.width) : *bbox;
    return p;
}

std::vector<PairSample> build_pairs(const std::vector<SourceGroup>& groups, std::uint64_t seed,
                                    const BuildOptions& opt) {
    const int n = static_cast<int>(groups.size());
    std::vector<std::vector<PairSample>> per_group(static_cast<std::size_t>(n));

#pragma omp parallel for schedule(dynamic)
    for (int gi = 0; gi < n; ++gi) {
        const SourceGroup& g = groups[static_cast<std::size_t>(gi)];
        const std::uint64_t h = stable_hash(g.group_id);
        std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                         static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
        std::mt19937_64 rng(ss);
        auto& out = per_group[static_cast<std::size_t>(gi)];

        for (int k = 0; k < opt.pairs_per_group; ++k) {
            std::optional<PairSample> s;
            if (g.kind == GroupKind::Single) {
                if (g.frames.empty() || !eligible(g.frames.front(), opt.pairing.min_side)) break;
                const Frame& f = g.frames.front();
                s = make_pair_from_single(f.image, f.mask, rng, opt.pairing).sample;
                s->caption = f.caption.empty() ? template_caption(g.class_word) : f.caption;
                s->class_word = g.class_word;
                s->category = g.category;
                s->ref_object_id = s->target_object_id = f.object_id;
            } else {
                s = make_pair_from_group(g, rng, opt.pairing);
                if (!s) break;
            }
            s->sample_id = g.group_id + "_" + std::to_string(k);
            out.push_back(std::move(*s));
        }
    }

    std::vector<PairSample> all;
    for (auto& v : per_group)
        for (auto& s : v) all.push_back(std::move(s));
    return all;
}

// ---- manifest -----------------------------------------------------------

namespace {

const std::vector<std::string>& record_fields() {
    static const std::vector<std::string> f{"sample_id", "ref_image_path", "ref_mask_path", "target_image_path",
                                            "caption",   "class_word",     "category"};
    return f;
}

ojson record_to_json(const ManifestRecord& r) {
    return ojson{{"sample_id", r.sample_id},         {"ref_image_path", r.ref_image_path},
                 {"ref_mask_path", r.ref_mask_path}, {"target_image_path", r.target_image_path},
                 {"caption", r.caption},             {"class_word", r.class_word},
                 {"category", r.category}};
}

fs::path stats_path(const fs::path& manifest) { return fs::path(manifest.string() + ".stats.json"); }

}  // namespace

std::map<std::string, int> category_stats(const std::vector<ManifestRecord>& records) {
    std::map<std::string, int> s;
    for (const auto& r : records) ++s[r.category];
    return s;
}

Manifest write_manifest(const std::vector<ManifestRecord>& records, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        for (const auto& r : records) out << record_to_json(r).dump() << "\n";
    }
    Manifest m;
    m.records = records;
    m.stats = category_stats(records);
    m.root = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::ofstream st(stats_path(path));
    if (!st) throw std::runtime_error("cannot write " + stats_path(path).string());
    st << ojson{{"records", records.size()}, {"per_category", m.stats}}.dump(2) << "\n";
    return m;
}

Manifest read_manifest(const fs::path& path, int min_side) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest " + path.string(), {"missing file: " + path.string()});

    Manifest m;
    m.root = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::vector<std::string> problems;
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "line " + std::to_string(lineno);
        ojson j;
        try {
            j = ojson::parse(line);
        } catch (const std::exception&) {
            problems.push_back(where + ": not valid JSON");
            continue;
        }
        if (!j.is_object()) {
            problems.push_back(where + ": not a JSON object");
            continue;
        }
        bool fields_ok = true;
        for (const auto& f : record_fields()) {
            if (!j.contains(f)) {
                problems.push_back(where + ": missing field '" + f + "'");
                fields_ok = false;
            } else if (!j[f].is_string()) {
                problems.push_back(where + ": field '" + f + "' is not a string");
                fields_ok = false;
            }
        }
        for (const auto& [k, v] : j.items())
            if (std::find(record_fields().begin(), record_fields().end(), k) == record_fields().end())
                problems.push_back(where + ": unknown field '" + k + "'");
        if (!fields_ok) continue;

        ManifestRecord r{j["sample_id"], j["ref_image_path"], j["ref_mask_path"], j["target_image_path"],
                         j["caption"],   j["class_word"],     j["category"]};
        if (!seen.insert(r.sample_id).second) problems.push_back(where + ": duplicate sample_id '" + r.sample_id + "'");

        std::optional<std::pair<int, int>> ref_dims;
        auto check_file = [&](const std::string& field, const std::string& rel, bool is_image) {
            const fs::path p = m.resolve(rel);
            if (!fs::exists(p)) {
                problems.push_back(where + ": " + field + " does not exist: " + rel);
                return std::optional<std::pair<int, int>>{};
            }
            std::pair<int, int> hw;
            try {
                hw = read_raster_dims(p);
            } catch (const std::exception& e) {
                problems.push_back(where + ": " + field + " unreadable: " + e.what());
                return std::optional<std::pair<int, int>>{};
            }
            if (is_image && !passes_resolution(hw.first, hw.second, min_side))
                problems.push_back(where + ": " + field + " " + rel + " is " + std::to_string(hw.second) + "x" +
                                   std::to_string(hw.first) + ", below the " + std::to_string(min_side) +
                                   "-px minimum side");
            return std::optional<std::pair<int, int>>{hw};
        };
        ref_dims = check_file("ref_image_path", r.ref_image_path, true);
        const auto mask_dims = check_file("ref_mask_path", r.ref_mask_path, false);
        check_file("target_image_path", r.target_image_path, true);
        if (ref_dims && mask_dims && *ref_dims != *mask_dims)
            problems.push_back(where + ": ref_mask_path size does not match ref_image_path");

        m.records.push_back(std::move(r));
    }

    m.stats = category_stats(m.records);
    const fs::path sp = stats_path(path);
    std::ifstream sin(sp);
    if (!sin) {
        problems.push_back("missing stats file " + sp.string());
    } else {
        try {
            const auto sj = nlohmann::json::parse(sin);
            const auto stored = sj.at("per_category").get<std::map<std::string, int>>();
            if (sj.at("records").get<std::size_t>() != m.records.size())
                problems.push_back("stats: record count " + std::to_string(sj.at("records").get<std::size_t>()) +
                                   " != " + std::to_string(m.records.size()));
            if (stored != m.stats) problems.push_back("stats: per-category counts do not match the records");
        } catch (const std::exception& e) {
            problems.push_back(std::string("stats: malformed (") + e.what() + ")");
        }
    }

    if (!problems.empty()) {
        const std::string what =
            "manifest " + path.string() + " failed validation with " + std::to_string(problems.size()) + " problem(s)";
        throw ValidationError(what, std::move(problems));
    }
    return m;
}

Manifest write_dataset(const std::vector<PairSample>& pairs, const fs::path& out_dir) {
    fs::create_directories(out_dir / "images");
    std::vector<ManifestRecord> records;
    records.reserve(pairs.size());
    for (const auto& p : pairs) {
        ManifestRecord r{p.sample_id,
                         "images/" + p.sample_id + "_ref.ppm",
                         "images/" + p.sample_id + "_mask.pgm",
                         "images/" + p.sample_id + "_target.ppm",
                         p.caption,
                         p.class_word,
                         p.category};
        write_ppm(out_dir / r.ref_image_path, p.ref_image);
        write_pgm(out_dir / r.ref_mask_path, p.ref_mask);
        write_ppm(out_dir / r.target_image_path, p.target_image);
        records.push_back(std::move(r));
    }
    return write_manifest(records, out_dir / "manifest.jsonl");
}

LoadedRecord load_record(const Manifest& m, const ManifestRecord& r) {
    return {read_ppm(m.resolve(r.ref_image_path)), read_pgm(m.resolve(r.ref_mask_path)),
            read_ppm(m.resolve(r.target_image_path))};
}

// ---- source directories -------------------------------------------------

void write_sources(const std::vector<SourceGroup>& groups, const fs::path& dir) {
    for (const auto& g : groups) {
        const fs::path gd = dir / g.group_id;
        fs::create_directories(gd);
        ojson frames = ojson::array();
        for (std::size_t k = 0; k < g.frames.size(); ++k) {
            const auto& f = g.frames[k];
            const std::string img = "frame_" + std::to_string(k) + ".ppm";
            const std::string msk = "frame_" + std::to_string(k) + "_mask.pgm";
            write_ppm(gd / img, f.image);
            write_pgm(gd / msk, f.mask);
            frames.push_back({{"image", img}, {"mask", msk}, {"object_id", f.object_id}, {"caption", f.caption}});
        }
        std::ofstream out(gd / "group.json");
        out << ojson{{"kind", to_string(g.kind)},
                     {"class_word", g.class_word},
                     {"category", g.category},
                     {"frames", frames}}
                   .dump(2)
            << "\n";
    }
}

std::vector<SourceGroup> read_sources(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ConfigError("sources directory not found: " + dir.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory() && fs::exists(e.path() / "group.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    std::vector<SourceGroup> groups;
    for (const auto& gd : dirs) {
        std::ifstream in(gd / "group.json");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const std::exception& e) {
            throw ConfigError("malformed " + (gd / "group.json").string() + ": " + e.what());
        }
        SourceGroup g;
        g.group_id = gd.filename().string();
        g.kind = group_kind_from_string(j.at("kind").get<std::string>());
        g.class_word = j.at("class_word").get<std::string>();
        g.category = j.value("category", g.class_word);
        for (const auto& fj : j.at("frames")) {
            Frame f;
            f.image = read_ppm(gd / fj.at("image").get<std::string>());
            f.mask = read_pgm(gd / fj.at("mask").get<std::string>());
            f.object_id = fj.value("object_id", g.group_id);
            f.caption = fj.value("caption", std::string{});
            g.frames.push_back(std::move(f));
        }
        groups.push_back(std::move(g));
    }
    return groups;
}

// ---- toy corpus ---------------------------------------------------------

const std::vector<std::string>& toy_shapes() {
    static const std::vector<std::string> v{"circle", "square", "triangle", "star", "cross"};
    return v;
}

const std::vector<std::string>& toy_colors() {
    static const std::vector<std::string> v{"red", "blue", "yellow", "magenta", "orange", "cyan"};
    return v;
}

const std::vector<std::string>& toy_textures() {
    static const std::vector<std::string> v{"solid", "striped", "dotted"};
    return v;
}

const std::vector<std::string>& toy_backgrounds() {
    static const std::vector<std::string> v = [] {
        std::vector<std::string> b{"plain"};
        for (const auto& s : ScenarioPromptSet::defaults().scenarios) b.push_back(s.name);
        return b;
    }();
    return v;
}

std::array<double, 3> toy_color_rgb(const std::string& color) {
    if (color == "red") return {0.9, 0.15, 0.15};
    if (color == "blue") return {0.15, 0.3, 0.9};
    if (color == "yellow") return {0.95, 0.85, 0.1};
    if (color == "magenta") return {0.85, 0.2, 0.8};
    if (color == "orange") return {0.95, 0.55, 0.1};
    if (color == "cyan") return {0.1, 0.8, 0.85};
    throw ConfigError("unknown toy color '" + color + "'");
}

namespace {

double hash01(int x, int y, std::uint64_t seed) {
    std::uint64_t h = seed ^ (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL) ^
                      (static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL);
    h ^= h >> 33;
    h *= 0xFF51AFD7ED558CCDULL;
    h ^= h >> 33;
    h *= 0xC4CEB9FE1A85EC53ULL;
    h ^= h >> 33;
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

std::array<double, 3> background_rgb(const std::string& bg, int x, int y, int h, int w, std::uint64_t seed) {
    const double n = hash01(x, y, seed) - 0.5;
    const double fy = static_cast<double>(y) / h;
    const double fx = static_cast<double>(x) / w;
    if (bg == "plain") return {0.1 + 0.02 * n, 0.1 + 0.02 * n, 0.12 + 0.02 * n};
    if (bg == "snow") return {0.92 + 0.06 * n, 0.94 + 0.06 * n, 0.97 + 0.03 * n};
    if (bg == "grass") {
        const double blade = 0.06 * std::sin(fx * 90.0 + 3.0 * hash01(x, 0, seed));
        return {0.22 + blade + 0.05 * n, 0.55 + blade + 0.08 * n, 0.18 + 0.04 * n};
    }
    if (bg == "beach") {
        if (fy < 0.4) return {0.55 + 0.03 * n, 0.75 + 0.03 * n, 0.95 + 0.03 * n};
        return {0.88 + 0.05 * n, 0.78 + 0.05 * n, 0.55 + 0.05 * n};
    }
    if (bg == "jungle") {
        const double leaf = std::sin(fx * 23.0) * std::sin(fy * 19.0) > 0.3 ? 0.1 : 0.0;
        return {0.07 + 0.04 * n, 0.3 + leaf + 0.06 * n, 0.1 + 0.04 * n};
    }
    if (bg == "eiffel_tower") {
        const double tx = 0.8, top = 0.1;
        if (fy > top) {
            const double half = 0.15 * std::pow((fy - top) / (1.0 - top), 1.5) + 0.01;
            if (std::abs(fx - tx) <= half) return {0.35 + 0.03 * n, 0.3 + 0.03 * n, 0.28 + 0.03 * n};
        }
        return {0.65 + 0.03 * n, 0.72 + 0.03 * n, 0.86 + 0.03 * n};
    }
    throw ConfigError("unknown toy background '" + bg + "'");
}

bool inside_shape(const std::string& shape, double u, double v) {
    if (shape == "circle") return u * u + v * v <= 1.0;
    if (shape == "square") return std::abs(u) <= 0.75 && std::abs(v) <= 0.75;
    if (shape == "triangle") return v <= 0.7 && v >= -0.9 && std::abs(u) <= 0.9 * (v + 0.9) / 1.6;
    if (shape == "star") {
        const double r = std::hypot(u, v);
        return r <= 0.6 + 0.35 * std::cos(5.0 * std::atan2(v, u));
    }
    if (shape == "cross")
        return (std::abs(u) <= 0.3 && std::abs(v) <= 0.9) || (std::abs(v) <= 0.3 && std::abs(u) <= 0.9);
    throw ConfigError("unknown toy shape '" + shape + "'");
}

double texture_gain(const std::string& texture, double u, double v) {
    if (texture == "solid") return 1.0;
    if (texture == "striped") return static_cast<int>(std::floor((u + 1.0) * 3.5)) % 2 == 1 ? 0.5 : 1.0;
    if (texture == "dotted") {
        const double fu = (u + 1.0) * 3.0 - std::floor((u + 1.0) * 3.0);
        const double fv = (v + 1.0) * 3.0 - std::floor((v + 1.0) * 3.0);
        return (fu - 0.5) * (fu - 0.5) + (fv - 0.5) * (fv - 0.5) < 0.06 ? 0.4 : 1.0;
    }
    throw ConfigError("unknown toy texture '" + texture + "'");
}

}  // namespace

std::array<double, 3> toy_background_mean(const std::string& background) {
    const int n = 64;
    std::array<double, 3> acc{0, 0, 0};
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const auto px = background_rgb(background, x, y, n, n, 0);
            for (std::size_t c = 0; c < 3; ++c) acc[c] += std::clamp(px[c], 0.0, 1.0);
        }
    for (auto& v : acc) v /= n * n;
    return acc;
}

ImageTensor render_toy(const ToyIdentity& id, const ToyPose& pose, const std::string& background, int height,
                       int width, std::uint64_t noise_seed, SegMask* mask_out) {
    const auto rgb = toy_color_rgb(id.color);
    ImageTensor img(3, height, width);
    SegMask mask(height, width);
    const double ca = std::cos(pose.angle), sa = std::sin(pose.angle);
    const double inv_r = 2.0 / pose.size;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double dx = x + 0.5 - pose.cx, dy = y + 0.5 - pose.cy;
            const double u = (ca * dx + sa * dy) * inv_r;
            const double v = (-sa * dx + ca * dy) * inv_r;
            std::array<double, 3> px;
            if (std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && inside_shape(id.shape, u, v)) {
                const double gain = texture_gain(id.texture, u, v);
                for (int c = 0; c < 3; ++c) px[static_cast<std::size_t>(c)] = rgb[static_cast<std::size_t>(c)] * gain;
                mask.at(y, x) = 1;
            } else {
                px = background_rgb(background, x, y, height, width, noise_seed);
            }
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(px[static_cast<std::size_t>(c)], 0.0, 1.0);
        }
    if (mask_out != nullptr) *mask_out = std::move(mask);
    return img;
}

SourceGroup make_toy_group(const ToyCorpusOptions& opt, std::uint64_t seed, int index) {
    std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(index), 0x70u};
    std::mt19937_64 rng(ss);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const auto scenarios = ScenarioPromptSet::defaults();
    auto pick = [&](const std::vector<std::string>& v) {
        return v[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(v.size()) - 1))];
    };

    SourceGroup g;
    char buf[16];
    std::snprintf(buf, sizeof buf, "g%04d", index);
    g.group_id = buf;
    const ToyIdentity id{pick(toy_shapes()), pick(toy_colors()), pick(toy_textures())};
    g.class_word = id.shape;
    g.category = id.shape;
    const double kr = u01(rng);
    g.kind = kr < opt.single_fraction ? GroupKind::Single
             : u01(rng) < 0.5         ? GroupKind::Video
                                      : GroupKind::Multiview;
    const bool small = u01(rng) < opt.small_fraction;
    const int lo = small ? std::max(1, opt.min_canvas - 100) : opt.min_canvas;
    const int hi = small ? opt.min_canvas - 1 : opt.max_canvas;
    const int h = uniform_int(rng, lo, hi);
    const int w = uniform_int(rng, lo, hi);
    const int nframes = g.kind == GroupKind::Single ? 1 : opt.frames_per_group;

    auto random_pose = [&] {
        ToyPose p;
        p.size = std::uniform_real_distribution<double>(0.3, 0.5)(rng) * std::min(h, w);
        const double m = p.size / 2 + 2;
        p.cx = std::uniform_real_distribution<double>(m, w - m)(rng);
        p.cy = std::uniform_real_distribution<double>(m, h - m)(rng);
        p.angle = std::uniform_real_distribution<double>(-std::numbers::pi, std::numbers::pi)(rng);
        return p;
    };
    const ToyPose start = random_pose();
    ToyPose end = random_pose();
    end.angle = start.angle + std::uniform_real_distribution<double>(-0.8, 0.8)(rng);

    for (int k = 0; k < nframes; ++k) {
        ToyPose pose;
        if (g.kind == GroupKind::Video) {
            const double t = nframes > 1 ? static_cast<double>(k) / (nframes - 1) : 0.0;
            pose = {start.cx + t * (end.cx - start.cx), start.cy + t * (end.cy - start.cy),
                    start.size + t * (end.size - start.size), start.angle + t * (end.angle - start.angle)};
        } else {
            pose = random_pose();
        }
        std::string bg = "plain";
        std::string caption = template_caption(id.shape);
        if (u01(rng) >= opt.plain_fraction) {
            const auto& sc = scenarios.scenarios[static_cast<std::size_t>(
                uniform_int(rng, 0, static_cast<int>(scenarios.scenarios.size()) - 1))];
            bg = sc.name;
            caption = append_suffix(caption, pick(sc.suffixes));
        }
        Frame f;
        f.image = render_toy(id, pose, bg, h, w, rng(), &f.mask);
        f.object_id = id.object_id();
        f.caption = caption;
        g.frames.push_back(std::move(f));
    }
    return g;
}

std::vector<SourceGroup> make_toy_sources(const ToyCorpusOptions& opt, std::uint64_t seed) {
    std::vector<SourceGroup> groups(static_cast<std::size_t>(std::max(opt.groups, 0)));
#pragma omp parallel for schedule(dynamic)
    for (int gi = 0; gi < opt.groups; ++gi) groups[static_cast<std::size_t>(gi)] = make_toy_group(opt, seed, gi);
    return groups;
}

PairSample shrink_pair(const PairSample& p, int max_side) {
    PairSample s = p;
    auto dims = [&](int h, int w) {
        const double f = std::min(1.0, static_cast<double>(max_side) / std::max(h, w));
        return std::pair<int, int>{std::max(1, static_cast<int>(std::lround(h * f))),
                                   std::max(1, static_cast<int>(std::lround(w * f)))};
    };
    const auto [rh, rw] = dims(p.ref_image.height, p.ref_image.width);
    const auto [th, tw] = dims(p.target_image.height, p.target_image.width);
    s.ref_image = resize(p.ref_image, rh, rw);
    s.ref_mask = resize_nearest(p.ref_mask, rh, rw);
    s.target_image = resize(p.target_image, th, tw);
    return s;
}

}  // namespace objcustom::data
