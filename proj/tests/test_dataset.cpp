#include <doctest.h>

#include <fstream>
#include <set>

#include "objcustom/dataset.hpp"
#include "support.hpp"

using namespace objcustom;
using namespace objcustom::data;

namespace {

// Plain canvas with a filled rectangle as the object.
Frame box_frame(int h, int w, const Box& b, const std::string& id) {
    Frame f;
    f.image = ImageTensor(3, h, w, 0.2);
    f.mask = SegMask(h, w);
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) {
            f.mask.at(y, x) = 1;
            for (int c = 0; c < 3; ++c) f.image.at(c, y, x) = 0.1 + 0.3 * c + 0.001 * x;
        }
    f.object_id = id;
    return f;
}

ManifestRecord rec(const std::string& id, const std::string& cat) {
    return {id, "images/" + id + "_ref.ppm", "images/" + id + "_mask.pgm", "images/" + id + "_tgt.ppm",
            "a photo of a cube", "cube", cat};
}

void write_images(const std::filesystem::path& dir, const ManifestRecord& r) {
    std::filesystem::create_directories(dir / "images");
    write_ppm(dir / r.ref_image_path, ImageTensor(3, 300, 310, 0.5));
    write_pgm(dir / r.ref_mask_path, SegMask(300, 310, 1));
    write_ppm(dir / r.target_image_path, ImageTensor(3, 320, 300, 0.25));
}

}  // namespace

TEST_CASE("resolution filter: threshold, inclusive boundary, element-wise batch") {
    CHECK(!passes_resolution(299, 500));
    CHECK(!passes_resolution(500, 299));
    CHECK(passes_resolution(300, 300));
    const auto kept = filter_resolution({ImageTensor(3, 280, 280), ImageTensor(3, 300, 300), ImageTensor(3, 1024, 1024)});
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].height == 300);
    CHECK(kept[1].height == 1024);
    CHECK(filter_resolution({ImageTensor(3, 299, 500)}).empty());
}

TEST_CASE("random_crop_window: 400 frame with a 350 box gives sides in [350, 400], always containing the box") {
    std::mt19937_64 rng(1);
    const Box b{25, 30, 375, 380};
    std::set<int> sides;
    for (int i = 0; i < 1000; ++i) {
        const Box w = random_crop_window(400, 400, b, 300, rng);
        CHECK(w.contains(b));
        CHECK(w.width() >= 350);
        CHECK(w.width() <= 400);
        CHECK(w.height() >= 350);
        CHECK(w.height() <= 400);
        CHECK((w.x0 >= 0 && w.y0 >= 0 && w.x1 <= 400 && w.y1 <= 400));
        sides.insert(w.width());
    }
    CHECK(sides.size() > 10);
}

TEST_CASE("random_crop_window: containment sweep over random boxes and frames") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> side(300, 600);
    for (int i = 0; i < 1000; ++i) {
        const int h = side(rng), w = side(rng);
        std::uniform_int_distribution<int> bx(0, w - 2), by(0, h - 2);
        int x0 = bx(rng), y0 = by(rng);
        const int x1 = std::uniform_int_distribution<int>(x0 + 1, w)(rng), y1 = std::uniform_int_distribution<int>(y0 + 1, h)(rng);
        const Box b{x0, y0, x1, y1};
        const Box win = random_crop_window(h, w, b, 300, rng);
        CHECK(win.contains(b));
        CHECK((win.x0 >= 0 && win.y0 >= 0 && win.x1 <= w && win.y1 <= h));
        CHECK(win.width() <= std::min(w, std::max(2 * b.width(), 300)));
    }
    CHECK_THROWS_AS(random_crop_window(100, 100, Box{0, 0, 101, 10}, 10, rng), ShapeError);
}

TEST_CASE("make_pair_from_group: a 2-frame group yields both orders, shared identity only") {
    SourceGroup g{"g", GroupKind::Video, "cube", "shape", {}};
    g.frames.push_back(box_frame(320, 340, {40, 50, 140, 160}, "a"));
    g.frames.push_back(box_frame(330, 320, {100, 90, 200, 210}, "a"));
    std::mt19937_64 rng(3);
    int ref_first = 0;
    for (int i = 0; i < 200; ++i) {
        const auto p = make_pair_from_group(g, rng);
        REQUIRE(p.has_value());
        CHECK(p->ref_object_id == "a");
        CHECK(p->target_object_id == "a");
        if (p->ref_bbox == Box{40, 50, 140, 160}) {
            ++ref_first;
            CHECK(p->target_bbox == Box{100, 90, 200, 210});
            CHECK(p->ref_mask.count() == 100u * 110u);
        } else {
            CHECK(p->ref_bbox == Box{100, 90, 200, 210});
            CHECK(p->ref_mask.count() == 100u * 120u);
        }
        CHECK(p->ref_crop.contains(p->ref_bbox));
        CHECK(p->target_crop.contains(p->target_bbox));
        CHECK(p->ref_mask.height == p->ref_image.height);
    }
    CHECK(ref_first > 60);
    CHECK(ref_first < 140);

    g.frames[1].object_id = "b";
    CHECK(!make_pair_from_group(g, rng).has_value());
}

TEST_CASE("make_pair_from_single: identity augmentation reproduces the original") {
    const Frame f = box_frame(320, 300, {20, 30, 120, 140}, "x");
    PairingOptions o;
    o.augment_flip = o.augment_crop = o.augment_jitter = false;
    std::mt19937_64 rng(4);
    const auto p = make_pair_from_single(f.image, f.mask, rng, o);
    CHECK(p.sample.ref_image.data == f.image.data);
    CHECK(p.sample.target_image.data == f.image.data);
    CHECK(p.sample.ref_mask == f.mask);
}

TEST_CASE("make_pair_from_single: the reference mask follows the reference transform") {
    const Frame f = box_frame(320, 330, {20, 30, 120, 140}, "x");
    std::mt19937_64 rng(5);
    int flips = 0;
    for (int i = 0; i < 200; ++i) {
        const auto p = make_pair_from_single(f.image, f.mask, rng);
        flips += p.ref_aug.flip;
        // Transformed bbox, expressed in crop coordinates, must equal the emitted mask's bbox (IoU 1).
        const Box& b = p.sample.ref_bbox;
        const Box& c = p.ref_aug.crop;
        const auto mb = mask_bbox(p.sample.ref_mask);
        REQUIRE(mb.has_value());
        CHECK(*mb == Box{b.x0 - c.x0, b.y0 - c.y0, b.x1 - c.x0, b.y1 - c.y0});
        CHECK(p.sample.ref_mask.count() == f.mask.count());
        // Masked pixels carry the object's colours.
        for (int y = mb->y0; y < mb->y1; ++y)
            for (int x = mb->x0; x < mb->x1; ++x) CHECK(p.sample.ref_image.at(0, y, x) > 0.099);
        CHECK(p.ref_aug.brightness == 1.0);
    }
    CHECK(flips > 60);
    CHECK(flips < 140);
}

TEST_CASE("make_pair_from_single: the two augmentations differ in at least 95% of draws") {
    const Frame f = box_frame(360, 380, {40, 60, 200, 220}, "x");
    std::mt19937_64 rng(6);
    int differ = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto b = f.mask;
        const auto bbox = *mask_bbox(b);
        const auto r = sample_augmentation(360, 380, bbox, false, rng, {});
        const auto t = sample_augmentation(360, 380, bbox, true, rng, {});
        differ += !(r == t);
    }
    CHECK(differ >= 950);
}

TEST_CASE("manifest: empty list, category stats, round trip") {
    const auto dir = support::scratch_dir("manifest");
    auto m0 = write_manifest({}, dir / "empty.jsonl");
    const auto e = read_manifest(dir / "empty.jsonl");
    CHECK(e.records.empty());
    CHECK(e.stats.empty());

    std::vector<ManifestRecord> rs{rec("s0", "catA"), rec("s1", "catB"), rec("s2", "catA")};
    for (const auto& r : rs) write_images(dir, r);
    CHECK(category_stats(rs) == std::map<std::string, int>{{"catA", 2}, {"catB", 1}});
    write_manifest(rs, dir / "m.jsonl");
    const auto back = read_manifest(dir / "m.jsonl");
    CHECK(back.records == rs);
    CHECK(back.stats == std::map<std::string, int>{{"catA", 2}, {"catB", 1}});
    std::filesystem::remove_all(dir);
}

TEST_CASE("manifest: validation names a deleted file, bad lines, unknown fields, small images") {
    const auto dir = support::scratch_dir("manifest_bad");
    std::vector<ManifestRecord> rs{rec("s0", "catA"), rec("s1", "catB")};
    for (const auto& r : rs) write_images(dir, r);
    write_manifest(rs, dir / "m.jsonl");
    std::filesystem::remove(dir / rs[1].target_image_path);
    auto problems_of = [&](const std::filesystem::path& p) {
        try {
            read_manifest(p);
        } catch (const ValidationError& e) {
            return e.problems();
        }
        return std::vector<std::string>{};
    };
    auto mentions = [](const std::vector<std::string>& ps, const std::string& s) {
        return std::any_of(ps.begin(), ps.end(), [&](const std::string& p) { return p.find(s) != std::string::npos; });
    };
    auto ps = problems_of(dir / "m.jsonl");
    REQUIRE(ps.size() == 1);
    CHECK(mentions(ps, rs[1].target_image_path));

    write_images(dir, rs[1]);
    {
        std::ofstream out(dir / "m.jsonl", std::ios::app);
        out << "{not json\n";
        out << R"({"sample_id":"s9","ref_image_path":"a","ref_mask_path":"b","target_image_path":"c","caption":"x","class_word":"x","category":"c","extra":1})"
            << "\n";
    }
    ps = problems_of(dir / "m.jsonl");
    CHECK(mentions(ps, "not valid JSON"));
    CHECK(mentions(ps, "unknown field 'extra'"));
    CHECK(mentions(ps, "does not exist: a"));

    write_manifest(rs, dir / "m.jsonl");
    write_ppm(dir / rs[0].ref_image_path, ImageTensor(3, 299, 500, 0.5));
    write_pgm(dir / rs[0].ref_mask_path, SegMask(299, 500, 1));
    ps = problems_of(dir / "m.jsonl");
    CHECK(mentions(ps, rs[0].ref_image_path));
    CHECK(read_manifest(dir / "m.jsonl", 200).records.size() == 2);

    CHECK_THROWS_AS(read_manifest(dir / "nope.jsonl"), ValidationError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("build_pairs: deterministic, identity-consistent, valid masks, filter-sound") {
    ToyCorpusOptions co;
    co.groups = 8;
    co.small_fraction = 0.25;
    co.single_fraction = 0.25;
    const auto sources = make_toy_sources(co, 11);
    BuildOptions bo;
    bo.pairs_per_group = 2;
    const auto a = build_pairs(sources, 5, bo);
    const auto b = build_pairs(sources, 5, bo);
    REQUIRE(a.size() == b.size());
    REQUIRE(!a.empty());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].ref_image.data == b[i].ref_image.data);
        CHECK(a[i].target_image.data == b[i].target_image.data);
        CHECK(a[i].sample_id == b[i].sample_id);
        CHECK(a[i].ref_object_id == a[i].target_object_id);
        CHECK(a[i].ref_mask.count() > 0);
        CHECK(a[i].ref_mask.height == a[i].ref_image.height);
        CHECK(a[i].ref_mask.width == a[i].ref_image.width);
        CHECK(passes_resolution(a[i].ref_image.height, a[i].ref_image.width));
        CHECK(passes_resolution(a[i].target_image.height, a[i].target_image.width));
        CHECK(a[i].caption.find(a[i].class_word) != std::string::npos);
    }
    // A different seed changes the draws.
    const auto c = build_pairs(sources, 6, bo);
    bool any_diff = c.size() != a.size();
    for (std::size_t i = 0; !any_diff && i < a.size(); ++i) any_diff = a[i].ref_crop != c[i].ref_crop;
    CHECK(any_diff);
    // Each group owns its stream: building a subset reproduces that group's pairs.
    const auto one = build_pairs({sources[3]}, 5, bo);
    for (const auto& p : one) {
        const auto it = std::find_if(a.begin(), a.end(), [&](const PairSample& q) { return q.sample_id == p.sample_id; });
        REQUIRE(it != a.end());
        CHECK(it->ref_crop == p.ref_crop);
    }
}

TEST_CASE("sources and datasets round trip through disk") {
    const auto dir = support::scratch_dir("sources");
    ToyCorpusOptions co;
    co.groups = 3;
    co.frames_per_group = 2;
    const auto src = make_toy_sources(co, 3);
    write_sources(src, dir / "src");
    const auto back = read_sources(dir / "src");
    REQUIRE(back.size() == src.size());
    for (std::size_t g = 0; g < src.size(); ++g) {
        CHECK(back[g].group_id == src[g].group_id);
        CHECK(back[g].kind == src[g].kind);
        CHECK(back[g].class_word == src[g].class_word);
        REQUIRE(back[g].frames.size() == src[g].frames.size());
        for (std::size_t f = 0; f < src[g].frames.size(); ++f) {
            CHECK(back[g].frames[f].mask == src[g].frames[f].mask);
            CHECK(back[g].frames[f].object_id == src[g].frames[f].object_id);
            CHECK(back[g].frames[f].image.data == quantize8(src[g].frames[f].image).data);
        }
    }
    const auto pairs = build_pairs(src, 1);
    const auto m = write_dataset(pairs, dir / "ds");
    const auto r = read_manifest(dir / "ds" / "manifest.jsonl");
    REQUIRE(r.records.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto l = load_record(r, r.records[i]);
        CHECK(l.ref_mask == pairs[i].ref_mask);
        CHECK(l.target_image.data == quantize8(pairs[i].target_image).data);
    }
    CHECK(m.stats == r.stats);
    std::filesystem::remove_all(dir);
}

TEST_CASE("toy corpus: groups regenerate independently and captions fall back to the template") {
    ToyCorpusOptions co;
    const auto all = make_toy_sources(co, 9);
    const auto g4 = make_toy_group(co, 9, 4);
    CHECK(g4.group_id == all[4].group_id);
    CHECK(g4.frames.front().image.data == all[4].frames.front().image.data);
    CHECK(template_caption("cube") == "a photo of a cube");
}
