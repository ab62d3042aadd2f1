#include <doctest.h>

#include <numeric>

#include "objcustom/metrics.hpp"
#include "support.hpp"

using namespace objcustom;
using namespace objcustom::metrics;

namespace {

Tensor gaussian(int n, int d, std::mt19937_64& rng, double shift = 0.0, double scale = 1.0) {
    std::normal_distribution<double> g(0, 1);
    Tensor t(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) t(i, j) = shift * (j == 0) + scale * g(rng) + 0.3 * j * t(i, 0) / (1 + j);
    return t;
}

// Embedder that reads the first two pixels' red channel: handy for hand examples.
Embedder two_pixel() {
    Embedder e;
    e.name = "two_pixel";
    e.dim = 2;
    e.image_fn = [](const ImageTensor& img) { return std::vector<double>{img.at(0, 0, 0), img.at(0, 0, 1)}; };
    return e;
}

ImageTensor px(double a, double b) {
    ImageTensor img(3, 1, 2);
    img.at(0, 0, 0) = a;
    img.at(0, 0, 1) = b;
    return img;
}

}  // namespace

TEST_CASE("similarity: hand example, self, orthogonal, symmetry, zero vector") {
    CHECK(similarity({1, 0}, {1, 1}) == doctest::Approx(70.710678).epsilon(1e-7));
    CHECK(similarity({0.3, -2, 5}, {0.3, -2, 5}) == doctest::Approx(100.0));
    CHECK(similarity({1, 0}, {0, 4}) == 0.0);
    CHECK_THROWS_AS(similarity({0, 0}, {1, 1}), std::invalid_argument);
    const auto e = two_pixel();
    CHECK(pairwise_sim(e, px(1, 0), px(1, 1)) == doctest::Approx(70.710678).epsilon(1e-7));
    std::mt19937_64 rng(1);
    const auto clip = toy_clip_image(), dino = toy_dino_image();
    for (int i = 0; i < 5; ++i) {
        ImageTensor a(3, 16, 16), b(3, 16, 16);
        std::uniform_real_distribution<double> u(0, 1);
        for (auto& v : a.data) v = u(rng);
        for (auto& v : b.data) v = u(rng);
        CHECK(pairwise_sim(clip, a, b) == doctest::Approx(pairwise_sim(clip, b, a)).epsilon(1e-12));
        CHECK(pairwise_sim(dino, a, b) == doctest::Approx(pairwise_sim(dino, b, a)).epsilon(1e-12));
        CHECK(pairwise_sim(dino, a, a) == doctest::Approx(100.0));
    }
}

TEST_CASE("fid: identity, unit-variance mean offset, symmetry") {
    std::mt19937_64 rng(2);
    const Tensor a = gaussian(400, 3, rng);
    CHECK(std::abs(fid(a, a).value) <= 1e-6);
    Tensor b = a;
    for (int i = 0; i < b.rows; ++i) b(i, 1) += 2.5;
    CHECK(fid(a, b).value == doctest::Approx(2.5 * 2.5).epsilon(1e-9));
    const Tensor c = gaussian(300, 3, rng, 1.0, 1.4);
    CHECK(fid(a, c).value == doctest::Approx(fid(c, a).value).epsilon(1e-9));
    CHECK(!fid(a, c).regularized);
}

TEST_CASE("fid: matches the literal-formula oracle on seeded Gaussian samples") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 3; ++trial) {
        const Tensor a = gaussian(200, 4, rng, 0.0, 1.0), b = gaussian(150, 4, rng, 0.7 * trial, 0.8 + 0.3 * trial);
        CHECK(std::abs(fid(a, b).value - support::fid_oracle(a, b)) < 1e-4);
    }
}

TEST_CASE("fid: fewer samples than dimensions is regularized and flagged") {
    std::mt19937_64 rng(4);
    const Tensor a = gaussian(3, 5, rng), b = gaussian(4, 5, rng);
    const auto r = fid(a, b);
    CHECK(r.regularized);
    CHECK(std::isfinite(r.value));
    CHECK(r.value >= 0);
    CHECK_THROWS_AS(fid(a, gaussian(4, 6, rng)), ShapeError);
}

TEST_CASE("diversim: brute-force enumeration over 3 scenarios x 2 images") {
    std::map<std::string, std::vector<std::vector<double>>> by{
        {"a", {{1, 0, 0}, {1, 1, 0}}}, {"b", {{0, 1, 0}, {1, 2, 3}}}, {"c", {{-1, 0, 1}, {2, 0.5, 0}}}};
    std::vector<double> sims;
    for (const auto& [n1, e1] : by)
        for (const auto& [n2, e2] : by) {
            if (n1 >= n2) continue;
            for (const auto& x : e1)
                for (const auto& y : e2) sims.push_back(100 * support::cosine(x, y));
        }
    REQUIRE(sims.size() == 12);
    const double mean = std::accumulate(sims.begin(), sims.end(), 0.0) / 12;
    double var = 0;
    for (double s : sims) var += (s - mean) * (s - mean);
    const auto r = diversim_from_embeddings(by);
    CHECK(r.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(r.std == doctest::Approx(std::sqrt(var / 12)).epsilon(1e-12));
    CHECK(r.mean >= -100);
    CHECK(r.mean <= 100);

    // All pairs adds the 3 within-scenario pairs.
    sims.push_back(100 * support::cosine({1, 0, 0}, {1, 1, 0}));
    sims.push_back(100 * support::cosine({0, 1, 0}, {1, 2, 3}));
    sims.push_back(100 * support::cosine({-1, 0, 1}, {2, 0.5, 0}));
    CHECK(diversim_from_embeddings(by, true).mean == doctest::Approx(std::accumulate(sims.begin(), sims.end(), 0.0) / 15).epsilon(1e-12));
}

TEST_CASE("diversim: identical, orthogonal, errors") {
    const auto e = two_pixel();
    const auto same = diversim_i({{"snow", {px(0.2, 0.4), px(0.2, 0.4)}}, {"beach", {px(0.2, 0.4)}}}, e);
    CHECK(same.mean == doctest::Approx(100.0));
    CHECK(same.std == doctest::Approx(0.0).scale(1.0));
    CHECK(diversim_i({{"snow", {px(1, 0)}}, {"beach", {px(0, 1)}}}, e).mean == 0.0);
    // Positively collinear but not identical still scores 100.
    CHECK(diversim_i({{"snow", {px(0.1, 0.2)}}, {"beach", {px(0.3, 0.6)}}}, e).mean == doctest::Approx(100.0));
    CHECK_THROWS_AS(diversim_i({{"snow", {px(1, 0)}}}, e), std::invalid_argument);
    CHECK_THROWS_AS(diversim_i({{"snow", {px(1, 0)}}, {"beach", {}}}, e), std::invalid_argument);
}

TEST_CASE("color_fidelity: same palette scores 1, disjoint palettes score lower") {
    ImageTensor ref(3, 20, 20, 0.9);
    SegMask mask(20, 20);
    for (int y = 5; y < 15; ++y)
        for (int x = 5; x < 15; ++x) {
            mask.at(y, x) = 1;
            ref.at(0, y, x) = 0.8;
            ref.at(1, y, x) = 0.1;
            ref.at(2, y, x) = 0.1;
        }
    CHECK(color_fidelity(ref, ref, mask) == doctest::Approx(1.0));
    ImageTensor blue = ref;
    for (int y = 5; y < 15; ++y)
        for (int x = 5; x < 15; ++x) {
            blue.at(0, y, x) = 0.1;
            blue.at(2, y, x) = 0.8;
        }
    CHECK(color_fidelity(blue, ref, mask) < 0.0);
    CHECK(color_fidelity(ImageTensor(3, 20, 20, 0.5), ref, mask) == 0.0);
}

TEST_CASE("scenario expansion: every prompt is the original plus one verbatim suffix") {
    const auto set = ScenarioPromptSet::defaults();
    REQUIRE(set.scenarios.size() == 5);
    for (const auto& s : set.scenarios) CHECK(s.suffixes.size() == 2);
    const std::string prompt = "a photo of a cube";
    const auto ex = set.expand(prompt);
    REQUIRE(ex.size() == 10);
    for (const auto& [name, p] : ex) {
        const auto* sc = set.find(name);
        REQUIRE(sc != nullptr);
        CHECK(std::any_of(sc->suffixes.begin(), sc->suffixes.end(), [&](const std::string& suf) { return p == prompt + " " + suf; }));
    }
    CHECK(ex.front().second == "a photo of a cube The scene of the picture is in the snow.");
}

namespace {

struct EvalFixture {
    std::filesystem::path dir = support::scratch_dir("evaluate");
    data::Manifest manifest;
    EvalFixture() {
        data::ToyCorpusOptions co;
        co.groups = 4;
        co.single_fraction = co.small_fraction = 0;
        data::BuildOptions bo;
        bo.pairs_per_group = 2;
        data::write_dataset(data::build_pairs(data::make_toy_sources(co, 21), 3, bo), dir / "ds");
        manifest = data::read_manifest(dir / "ds" / "manifest.jsonl");
        std::filesystem::create_directories(dir / "gen");
    }
    ~EvalFixture() { std::filesystem::remove_all(dir); }
    ImageTensor target(std::size_t i) const { return read_ppm(manifest.resolve(manifest.records[i].target_image_path)); }
};

}  // namespace

TEST_CASE_FIXTURE(EvalFixture, "evaluate: report equals a metric-by-metric recomputation") {
    const Embedders emb;
    const auto& rs = manifest.records;
    // Generations: flipped targets; sample 0 also gets two scenario renders.
    std::vector<ImageTensor> gens;
    for (std::size_t i = 0; i < rs.size(); ++i) {
        gens.push_back(hflip(target(i)));
        write_ppm(generation_path(dir / "gen", rs[i].sample_id), gens.back());
    }
    const ImageTensor s0 = quantize8(color_jitter(gens[0], 0.8, 1.0)), s1 = quantize8(color_jitter(gens[0], 1.0, 0.5));
    std::filesystem::create_directories(scenario_path(dir / "gen", rs[0].sample_id, "snow", 0).parent_path());
    write_ppm(scenario_path(dir / "gen", rs[0].sample_id, "snow", 0), s0);
    write_ppm(scenario_path(dir / "gen", rs[0].sample_id, "beach", 1), s1);

    const auto rep = evaluate(manifest, dir / "gen", emb, {});
    CHECK(rep.n_samples == static_cast<int>(rs.size()));
    CHECK(rep.n_evaluated == rep.n_samples);
    CHECK(rep.missing.empty());
    CHECK(!rep.face_sim.has_value());
    CHECK(!rep.to_json().contains("face_sim"));

    double clip = 0, dino = 0, color = 0, clip_t = 0;
    std::vector<Tensor> fa, fb;
    for (std::size_t i = 0; i < rs.size(); ++i) {
        const ImageTensor ref = read_ppm(manifest.resolve(rs[i].ref_image_path));
        const auto cg = emb.clip_image.embed(gens[i]), cr = emb.clip_image.embed(ref);
        clip += 100 * support::cosine(cg, cr);
        dino += 100 * support::cosine(emb.dino_image.embed(gens[i]), emb.dino_image.embed(ref));
        color += color_fidelity(gens[i], ref, read_pgm(manifest.resolve(rs[i].ref_mask_path)));
        clip_t += 100 * support::cosine(emb.clip_text.embed(gens[i]), emb.clip_text.embed_text(rs[i].caption));
        fa.push_back(Tensor::row_vector(cg));
        fb.push_back(Tensor::row_vector(cr));
    }
    const std::string base = data::template_caption(rs[0].class_word);
    const auto& sc = ScenarioPromptSet::defaults();
    clip_t += 100 * support::cosine(emb.clip_text.embed(s0), emb.clip_text.embed_text(base + " " + sc.find("snow")->suffixes[0]));
    clip_t += 100 * support::cosine(emb.clip_text.embed(s1), emb.clip_text.embed_text(base + " " + sc.find("beach")->suffixes[1]));
    const double n = static_cast<double>(rs.size());
    CHECK(rep.clip_i == doctest::Approx(clip / n).epsilon(1e-10));
    CHECK(rep.dino_i == doctest::Approx(dino / n).epsilon(1e-10));
    CHECK(rep.color_fidelity == doctest::Approx(color / n).epsilon(1e-10));
    REQUIRE(rep.clip_t.has_value());
    CHECK(*rep.clip_t == doctest::Approx(clip_t / (n + 2)).epsilon(1e-10));
    REQUIRE(rep.diversim_i.has_value());
    CHECK(rep.diversim_i->mean == doctest::Approx(100 * support::cosine(emb.dino_image.embed(s0), emb.dino_image.embed(s1))).epsilon(1e-10));
    CHECK(rep.diversim_i->std == 0.0);
    CHECK(rep.fid == doctest::Approx(fid(concat_rows(fa), concat_rows(fb)).value).epsilon(1e-9));
}

TEST_CASE_FIXTURE(EvalFixture, "evaluate: targets as generations score 100 against the target, FID near 0") {
    for (std::size_t i = 0; i < manifest.records.size(); ++i) write_ppm(generation_path(dir / "gen", manifest.records[i].sample_id), target(i));
    EvalConfig c;
    c.compare_to = CompareTo::Target;
    const auto rep = evaluate(manifest, dir / "gen", {}, c);
    CHECK(rep.clip_i == doctest::Approx(100.0));
    CHECK(rep.dino_i == doctest::Approx(100.0));
    CHECK(std::abs(rep.fid) < 1e-6);
    CHECK(!rep.diversim_i.has_value());
}

TEST_CASE_FIXTURE(EvalFixture, "evaluate: missing generations are listed, excluded and flagged past 5%") {
    const auto& rs = manifest.records;
    for (std::size_t i = 1; i < rs.size(); ++i) write_ppm(generation_path(dir / "gen", rs[i].sample_id), target(i));
    const auto rep = evaluate(manifest, dir / "gen", {}, {});
    CHECK(rep.missing == std::vector<std::string>{rs[0].sample_id});
    CHECK(rep.n_evaluated == static_cast<int>(rs.size()) - 1);
    CHECK(rep.too_many_missing(0.05));
    CHECK(!rep.too_many_missing(0.5));
    std::filesystem::remove_all(dir / "gen");
    std::filesystem::create_directories(dir / "gen");
    CHECK_THROWS_AS(evaluate(manifest, dir / "gen", {}, {}), std::runtime_error);
}

TEST_CASE_FIXTURE(EvalFixture, "evaluate: a configured face embedder adds face_sim") {
    for (std::size_t i = 0; i < manifest.records.size(); ++i) write_ppm(generation_path(dir / "gen", manifest.records[i].sample_id), target(i));
    Embedders emb;
    emb.face = toy_dino_image();
    emb.face->role = EmbedderRole::Face;
    const auto rep = evaluate(manifest, dir / "gen", emb, {});
    REQUIRE(rep.face_sim.has_value());
    CHECK(*rep.face_sim == doctest::Approx(rep.dino_i));
    CHECK(rep.to_json().contains("face_sim"));
}
