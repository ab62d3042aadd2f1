#include <doctest.h>

#include <cmath>

#include "objcustom/id_extractor.hpp"
#include "objcustom/injection.hpp"
#include "support.hpp"

using namespace objcustom;

namespace {

nn::Mlp2 hand_mlp(ad::ParamStore& st, const std::string& name, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                  const Tensor& b2, ad::Activation act = ad::Activation::Gelu) {
    std::mt19937_64 rng(0);
    auto m = nn::Mlp2::create(st, name, w1.rows, w1.cols, w2.cols, rng, act);
    m.fc1().weight().value = w1;
    m.fc1().bias()->value = b1;
    m.fc2().weight().value = w2;
    m.fc2().bias()->value = b2;
    return m;
}

Tensor eye(int n) {
    Tensor t(n, n);
    for (int i = 0; i < n; ++i) t(i, i) = 1;
    return t;
}

double gelu(double x) { return 0.5 * x * (1 + std::erf(x / std::sqrt(2.0))); }

ImageTensor random_image(int h, int w, std::mt19937_64& rng) {
    ImageTensor img(3, h, w);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& v : img.data) v = u(rng);
    return img;
}

}  // namespace

// ---- mask_reference ---------------------------------------------------------

TEST_CASE("mask_reference: hand 2x2 example, identity and annihilator masks") {
    ImageTensor img(3, 2, 2);
    for (int c = 0; c < 3; ++c) {
        img.at(c, 0, 0) = .2;
        img.at(c, 0, 1) = .4;
        img.at(c, 1, 0) = .6;
        img.at(c, 1, 1) = .8;
    }
    SegMask m(2, 2);
    m.at(0, 0) = m.at(1, 1) = 1;
    const auto out = id::mask_reference(img, m);
    for (int c = 0; c < 3; ++c) {
        CHECK(out.at(c, 0, 0) == .2);
        CHECK(out.at(c, 0, 1) == 0.0);
        CHECK(out.at(c, 1, 0) == 0.0);
        CHECK(out.at(c, 1, 1) == .8);
    }
    CHECK(id::mask_reference(img, SegMask(2, 2, 1)) == img);
    for (double v : id::mask_reference(img, SegMask(2, 2, 0)).data) CHECK(v == 0.0);
    CHECK_THROWS_AS(id::mask_reference(img, SegMask(2, 3, 1)), ShapeError);
}

TEST_CASE("mask_reference is idempotent") {
    std::mt19937_64 rng(1);
    const auto img = random_image(9, 7, rng);
    SegMask m(9, 7);
    for (auto& v : m.data) v = rng() % 2;
    const auto once = id::mask_reference(img, m);
    CHECK(id::mask_reference(once, m) == once);
}

// ---- encode -----------------------------------------------------------------

TEST_CASE("encode: single patch grid gives class token = the lone patch token") {
    id::EncoderSpec s{id::EncoderRole::Reconstruction, 4, 4, 6, "toy:3", false};
    const auto enc = id::FrozenEncoder::load(s);
    std::mt19937_64 rng(2);
    const auto out = enc.encode(random_image(8, 8, rng));
    REQUIRE(out.patch_tokens.rows == 1);
    for (int j = 0; j < 6; ++j) CHECK(out.class_token(0, j) == doctest::Approx(out.patch_tokens(0, j)).epsilon(1e-15));
}

TEST_CASE("encode: deterministic, and a constant image gives identical patch rows") {
    id::EncoderSpec s{id::EncoderRole::Reconstruction, 8, 4, 5, "toy:4", false};
    const auto enc = id::FrozenEncoder::load(s);
    std::mt19937_64 rng(3);
    const auto img = random_image(12, 10, rng);
    const auto a = enc.encode(img), b = enc.encode(img);
    CHECK(a.class_token.data == b.class_token.data);
    CHECK(a.patch_tokens.data == b.patch_tokens.data);

    ImageTensor flat(3, 8, 8, 0.37);
    const auto f = enc.encode(flat);
    REQUIRE(f.patch_tokens.rows == 4);
    for (int r = 1; r < 4; ++r)
        for (int j = 0; j < 5; ++j) CHECK(f.patch_tokens(r, j) == doctest::Approx(f.patch_tokens(0, j)).epsilon(1e-12));
}

TEST_CASE("encode: detail role ignores hue and brightness, reconstruction role does not") {
    std::mt19937_64 rng(4);
    ImageTensor gray = random_image(16, 16, rng);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) gray.at(1, y, x) = gray.at(2, y, x) = gray.at(0, y, x);
    ImageTensor dim = gray;
    for (auto& v : dim.data) v *= 0.5;
    const auto det = id::FrozenEncoder::load({id::EncoderRole::Detail, 16, 4, 8, "toy:5", false});
    const auto rec = id::FrozenEncoder::load({id::EncoderRole::Reconstruction, 16, 4, 8, "toy:5", false});
    CHECK(max_abs_diff(det.encode(gray).class_token, det.encode(dim).class_token) < 1e-9);
    CHECK(max_abs_diff(rec.encode(gray).class_token, rec.encode(dim).class_token) > 1e-3);
}

TEST_CASE("encode: missing weights file is a configuration error") {
    id::EncoderSpec s{id::EncoderRole::Detail, 16, 4, 8, "/nonexistent/weights.ckpt", false};
    CHECK_THROWS_AS(id::FrozenEncoder::load(s), ConfigError);
    s.weights_ref = "toy:abc";
    CHECK_THROWS_AS(id::FrozenEncoder::load(s), ConfigError);
    s.weights_ref = "toy:1";
    s.patch_size = 5;
    CHECK_THROWS_AS(id::FrozenEncoder::load(s), ConfigError);
}

TEST_CASE("encode: weights saved to an archive load back identically") {
    const auto dir = support::scratch_dir("enc_save");
    id::EncoderSpec s{id::EncoderRole::Reconstruction, 8, 4, 6, "toy:9", true};
    const auto a = id::FrozenEncoder::load(s);
    a.save(dir / "enc.ckpt");
    s.weights_ref = (dir / "enc.ckpt").string();
    const auto b = id::FrozenEncoder::load(s);
    CHECK(a.fingerprint() == b.fingerprint());
    std::filesystem::remove_all(dir);
}

// ---- project_tokens -----------------------------------------------------------

TEST_CASE("project_tokens: identity weights, zero input, hand 2-2-2 example") {
    ad::ParamStore st;
    const auto ident = hand_mlp(st, "id", eye(3), Tensor(1, 3), eye(3), Tensor(1, 3), ad::Activation::Identity);
    id::EncoderOutput raw{Tensor(1, 3, {0.5, -1, 2}), Tensor(2, 3, {1, 2, 3, -4, 5, -6})};
    auto p = id::project_tokens(raw, ident);
    CHECK(p.class_token.data == raw.class_token.data);
    CHECK(p.patch_tokens.data == raw.patch_tokens.data);

    std::mt19937_64 rng(5);
    auto rnd = nn::Mlp2::create(st, "rnd", 3, 4, 3, rng);
    auto z = id::project_tokens({Tensor(1, 3), Tensor(5, 3)}, rnd);
    for (double v : z.patch_tokens.data) CHECK(v == 0.0);
    CHECK(z.patch_tokens.rows == 5);

    // W1 = [[1,2],[0,-1]], b1 = [0.5,0], W2 = [[1,0],[1,1]], b2 = [0,-0.25]; x = [1,-1]
    const auto hm = hand_mlp(st, "hand", Tensor(2, 2, {1, 2, 0, -1}), Tensor(1, 2, {0.5, 0}), Tensor(2, 2, {1, 0, 1, 1}),
                             Tensor(1, 2, {0, -0.25}));
    const auto h = id::project_tokens({Tensor(1, 2, {1, -1}), Tensor(1, 2, {1, -1})}, hm);
    // hidden pre-activation: [1*1 + -1*0 + .5, 1*2 + -1*-1 + 0] = [1.5, 3]
    const double g0 = gelu(1.5), g1 = gelu(3.0);
    CHECK(h.class_token(0, 0) == doctest::Approx(g0 + g1).epsilon(1e-14));
    CHECK(h.class_token(0, 1) == doctest::Approx(g1 - 0.25).epsilon(1e-14));
    CHECK_THROWS_AS(id::project_tokens({Tensor(1, 4), Tensor(1, 4)}, hm), ShapeError);
}

TEST_CASE("project_tokens: linear regime equals W1 W2 product plus biases") {
    ad::ParamStore st;
    std::mt19937_64 rng(6);
    const Tensor w1 = randn(4, 6, rng), b1 = randn(1, 6, rng), w2 = randn(6, 3, rng), b2 = randn(1, 3, rng);
    const auto m = hand_mlp(st, "lin", w1, b1, w2, b2, ad::Activation::Identity);
    const Tensor x = randn(5, 4, rng);
    const auto p = id::project_tokens({x.slice_rows(0, 1), x}, m);
    Tensor want = kernels::matmul(x, kernels::matmul(w1, w2));
    const Tensor bb = kernels::matmul(b1, w2);
    for (int r = 0; r < want.rows; ++r)
        for (int j = 0; j < 3; ++j) want(r, j) += bb(0, j) + b2(0, j);
    CHECK(max_abs_diff(p.patch_tokens, want) < 1e-6);
}

// ---- extract_id -------------------------------------------------------------

struct ExtractFixture {
    ad::ParamStore st;
    std::mt19937_64 rng{7};
    id::FrozenEncoder det = id::FrozenEncoder::load({id::EncoderRole::Detail, 8, 4, 6, "toy:11", false});
    id::FrozenEncoder rec = id::FrozenEncoder::load({id::EncoderRole::Reconstruction, 8, 2, 5, "toy:12", false});
    nn::Mlp2 pd = nn::Mlp2::create(st, "pd", 6, 4, 4, rng);
    nn::Mlp2 pr = nn::Mlp2::create(st, "pr", 5, 4, 4, rng);
};

TEST_CASE_FIXTURE(ExtractFixture, "extract_id: step-by-step oracle composition on a 4x4 image") {
    const auto img = random_image(4, 4, rng);
    SegMask m(4, 4);
    m.at(1, 1) = m.at(1, 2) = m.at(2, 1) = m.at(2, 2) = 1;
    id::ExtractOptions opt{false, 0.0};
    const auto t = id::extract_id(img, m, det, rec, pd, pr, opt);
    const auto masked = id::mask_reference(img, m);
    const auto d = id::project_tokens(det.encode(masked), pd);
    const auto r = id::project_tokens(rec.encode(masked), pr);
    CHECK(t.dino_C.data == d.class_token.data);
    CHECK(t.dino_P.data == d.patch_tokens.data);
    CHECK(t.mae_C.data == r.class_token.data);
    CHECK(t.mae_P.data == r.patch_tokens.data);
    CHECK(t.detail_patches == 4);
    CHECK(t.recon_patches == 16);
}

TEST_CASE_FIXTURE(ExtractFixture, "extract_id: zero mask equals a black image; swapping encoders swaps outputs") {
    const auto img = random_image(10, 12, rng);
    const auto a = id::extract_id(img, SegMask(10, 12, 0), det, rec, pd, pr);
    const auto b = id::extract_id(ImageTensor(3, 10, 12, 0.0), SegMask(10, 12, 1), det, rec, pd, pr);
    CHECK(a.dino_C.data == b.dino_C.data);
    CHECK(a.mae_P.data == b.mae_P.data);

    SegMask m(10, 12);
    for (int y = 2; y < 8; ++y)
        for (int x = 3; x < 9; ++x) m.at(y, x) = 1;
    const auto fwd = id::extract_id(img, m, det, rec, pd, pr);
    const auto swp = id::extract_id(img, m, rec, det, pr, pd);
    CHECK(fwd.dino_C.data == swp.mae_C.data);
    CHECK(fwd.dino_P.data == swp.mae_P.data);
    CHECK(fwd.mae_C.data == swp.dino_C.data);
    CHECK(fwd.mae_P.data == swp.dino_P.data);
}

TEST_CASE_FIXTURE(ExtractFixture, "extract_id: output dims do not depend on the input resolution") {
    for (auto [h, w] : {std::pair{5, 5}, {33, 17}, {64, 128}}) {
        const auto t = id::extract_id(random_image(h, w, rng), SegMask(h, w, 1), det, rec, pd, pr);
        CHECK(t.dino_P.rows == 4);
        CHECK(t.mae_P.rows == 16);
        CHECK(t.dino_C.cols == 4);
        CHECK(t.mae_P.cols == 4);
    }
}

TEST_CASE("crop_to_mask: square window centred on the bbox with margin") {
    ImageTensor img(3, 40, 40, 0.5);
    SegMask m(40, 40);
    for (int y = 10; y < 20; ++y)
        for (int x = 5; x < 25; ++x) m.at(y, x) = 1;
    const auto c = id::crop_to_mask(img, m, 0.1);
    CHECK(c.width == 24);
    CHECK(c.height == 24);
    CHECK(id::crop_to_mask(img, SegMask(40, 40), 0.1) == img);
}

// ---- injection ----------------------------------------------------------------

TEST_CASE("fuse_class_token: averaging map fixed point, zero input, hand d=2 example") {
    ad::ParamStore st;
    // fc1 averages the three blocks, fc2 is the identity.
    Tensor avg(6, 2);
    for (int b = 0; b < 3; ++b)
        for (int j = 0; j < 2; ++j) avg(2 * b + j, j) = 1.0 / 3.0;
    const auto fuse = hand_mlp(st, "avg", avg, Tensor(1, 2), eye(2), Tensor(1, 2), ad::Activation::Identity);
    const Tensor v(1, 2, {0.3, -1.2});
    const auto out = inject::fuse_class_token(v, v, v, fuse);
    CHECK(out(0, 0) == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(out(0, 1) == doctest::Approx(-1.2).epsilon(1e-14));

    std::mt19937_64 rng(8);
    auto rnd = nn::Mlp2::create(st, "rnd", 6, 2, 2, rng);
    for (double x : inject::fuse_class_token(Tensor(1, 2), Tensor(1, 2), Tensor(1, 2), rnd).data) CHECK(x == 0.0);

    // Hand weights: W1 [6x2] rows (1,0),(0,1),(1,1),(0,0),(-1,2),(0.5,0); b1 = 0; W2 = [[1,1],[0,2]].
    const Tensor w1(6, 2, {1, 0, 0, 1, 1, 1, 0, 0, -1, 2, 0.5, 0});
    const auto hm = hand_mlp(st, "hand", w1, Tensor(1, 2), Tensor(2, 2, {1, 1, 0, 2}), Tensor(1, 2));
    const auto h = inject::fuse_class_token(Tensor(1, 2, {1, 0}), Tensor(1, 2, {0, 1}), Tensor(1, 2, {1, 1}), hm);
    // concat = [1,0,0,1,1,1]; hidden = [1 + 0 + 0 + 0 - 1 + 0.5, 0 + 0 + 0 + 0 + 2 + 0] = [0.5, 2]
    CHECK(h(0, 0) == doctest::Approx(gelu(0.5)).epsilon(1e-14));
    CHECK(h(0, 1) == doctest::Approx(gelu(0.5) + 2 * gelu(2.0)).epsilon(1e-14));
    CHECK_THROWS_AS(inject::fuse_class_token(Tensor(1, 2), Tensor(1, 3), Tensor(1, 2), hm), ShapeError);
}

TEST_CASE("build_global_condition: single-token, whole-sequence and two-token spans") {
    std::mt19937_64 rng(9);
    inject::TextEmbedding t{randn(5, 3, rng), 2, 3};
    const Tensor f = randn(1, 3, rng);
    const auto g = inject::build_global_condition(t, f);
    REQUIRE(g.tokens.rows == 5);
    for (int r : {0, 1, 3, 4}) CHECK(g.tokens.slice_rows(r, 1).data == t.tokens.slice_rows(r, 1).data);
    CHECK(g.tokens.slice_rows(2, 1).data == f.data);

    inject::TextEmbedding whole{randn(4, 3, rng), 0, 4};
    CHECK(inject::build_global_condition(whole, f).tokens.data == f.data);

    inject::TextEmbedding seven{randn(7, 3, rng), 3, 5};
    const auto s = inject::build_global_condition(seven, f);
    REQUIRE(s.tokens.rows == 6);
    const int src[] = {0, 1, 2, -1, 5, 6};
    for (int r = 0; r < 6; ++r) {
        const Tensor want = src[r] < 0 ? f : seven.tokens.slice_rows(src[r], 1);
        CHECK(s.tokens.slice_rows(r, 1).data == want.data);
    }
    inject::TextEmbedding bad{randn(3, 3, rng), 2, 5};
    CHECK_THROWS_AS(inject::build_global_condition(bad, f), ShapeError);
}

TEST_CASE("prompt preservation: prompts differing outside the span differ only there") {
    inject::ToyTextEncoder enc(8);
    const auto a = enc.embed("a red dog on the grass", "dog");
    const auto b = enc.embed("a red dog in the snow", "dog");
    std::mt19937_64 rng(10);
    const Tensor f = randn(1, 8, rng);
    const auto ga = inject::build_global_condition(a, f), gb = inject::build_global_condition(b, f);
    for (int r = 0; r < ga.tokens.rows; ++r) {
        const bool same = ga.tokens.slice_rows(r, 1).data == gb.tokens.slice_rows(r, 1).data;
        CHECK(same == (r != 3 && r != 5));  // a red <fused> on|in the grass|snow
    }
}

TEST_CASE("text encoder: class word lookup, multi-word span mean-pooled, missing word named") {
    inject::ToyTextEncoder enc(6);
    const auto e = enc.embed("A photo of a Teddy Bear, indoors", "teddy bear");
    CHECK(e.span_start == 4);
    CHECK(e.span_end == 6);
    const Tensor c = inject::class_word_embedding(e);
    for (int j = 0; j < 6; ++j) CHECK(c(0, j) == doctest::Approx(0.5 * (e.tokens(4, j) + e.tokens(5, j))));
    try {
        enc.embed("a photo of a cat", "dog");
        FAIL("expected an exception");
    } catch (const std::invalid_argument& ex) {
        CHECK(std::string(ex.what()).find("'dog'") != std::string::npos);
    }
}

TEST_CASE("build_local_condition: identity MLPs double, zero recon input is neutral, hand 2-patch case") {
    ad::ParamStore st;
    const auto ident = hand_mlp(st, "i1", eye(2), Tensor(1, 2), eye(2), Tensor(1, 2), ad::Activation::Identity);
    const auto ident2 = hand_mlp(st, "i2", eye(2), Tensor(1, 2), eye(2), Tensor(1, 2), ad::Activation::Identity);
    const Tensor x(2, 2, {1, -2, 3, 0.5});
    const auto c = inject::build_local_condition(x, x, ident, ident2);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(c.tokens.data[i] == 2 * x.data[i]);

    std::mt19937_64 rng(11);
    auto a = nn::Mlp2::create(st, "a", 2, 3, 2, rng);
    auto b = nn::Mlp2::create(st, "b", 2, 3, 2, rng);
    const auto n = inject::build_local_condition(x, Tensor(2, 2), a, b);
    CHECK(max_abs_diff(n.tokens, a.eval(x)) < 1e-15);

    const auto ha = hand_mlp(st, "ha", Tensor(2, 2, {1, 0, 0, 1}), Tensor(1, 2, {0, 1}), Tensor(2, 2, {2, 0, 0, 1}), Tensor(1, 2));
    const auto hb = hand_mlp(st, "hb", Tensor(2, 2, {0, 1, 1, 0}), Tensor(1, 2), Tensor(2, 2, {1, 1, 0, 1}), Tensor(1, 2, {0.1, 0}));
    const Tensor p(2, 2, {1, 0, 0, 2}), q(2, 2, {1, 1, -1, 0});
    const auto h = inject::build_local_condition(p, q, ha, hb);
    // row 0: a -> hidden [1, 1] ; b -> hidden [1, 1]
    CHECK(h.tokens(0, 0) == doctest::Approx(2 * gelu(1) + gelu(1) + 0.1));
    CHECK(h.tokens(0, 1) == doctest::Approx(gelu(1) + 2 * gelu(1)));
    // row 1: a -> hidden [0, 3] ; b -> hidden [0, -1]
    CHECK(h.tokens(1, 0) == doctest::Approx(0 + 0 + 0.1));
    CHECK(h.tokens(1, 1) == doctest::Approx(gelu(3) + gelu(-1)));
}

TEST_CASE("align_patch_grid: resamples square grids, rejects non-square counts") {
    Tensor p(4, 1, {1, 1, 1, 1});
    const auto up = inject::align_patch_grid(p, 16);
    REQUIRE(up.rows == 16);
    for (double v : up.data) CHECK(v == doctest::Approx(1.0));
    CHECK(inject::align_patch_grid(p, 4).data == p.data);
    CHECK_THROWS_AS(inject::align_patch_grid(Tensor(3, 1), 4), ShapeError);
}

TEST_CASE("cross_attention: single key, uniform attention, seeded oracle case") {
    std::mt19937_64 rng(12);
    const Tensor z = randn(4, 3, rng), c1 = randn(1, 3, rng);
    inject::AttentionWeights w{randn(3, 2, rng), randn(3, 2, rng), randn(3, 2, rng)};
    const auto o1 = inject::cross_attention(z, c1, w);
    const Tensor v1 = kernels::matmul(c1, w.w_v);
    for (int r = 0; r < 4; ++r)
        for (int j = 0; j < 2; ++j) CHECK(o1(r, j) == doctest::Approx(v1(0, j)).epsilon(1e-14));

    const Tensor c = randn(3, 3, rng);
    inject::AttentionWeights w0{Tensor(3, 2), Tensor(3, 2), w.w_v};
    const auto ou = inject::cross_attention(z, c, w0);
    const Tensor v = kernels::matmul(c, w.w_v);
    for (int r = 0; r < 4; ++r)
        for (int j = 0; j < 2; ++j) CHECK(ou(r, j) == doctest::Approx((v(0, j) + v(1, j) + v(2, j)) / 3).epsilon(1e-13));

    const Tensor z2 = randn(2, 2, rng), c3 = randn(3, 2, rng);
    inject::AttentionWeights w2{randn(2, 2, rng), randn(2, 2, rng), randn(2, 2, rng)};
    CHECK(max_abs_diff(inject::cross_attention(z2, c3, w2), support::dense_attention(z2, c3, w2.w_q, w2.w_k, w2.w_v)) < 1e-5);
    CHECK_THROWS_AS(inject::cross_attention(z2, c3, inject::AttentionWeights{randn(3, 2, rng), w2.w_k, w2.w_v}), ShapeError);
}

TEST_CASE("cross_attention properties: row-stochastic, query equivariance, condition-row permutation") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor z = randn(5, 4, rng, 3.0), c = randn(6, 4, rng, 3.0);
        inject::AttentionWeights w{randn(4, 3, rng), randn(4, 3, rng), randn(4, 3, rng)};
        const Tensor p = inject::cross_attention_probs(z, c, w);
        for (int r = 0; r < p.rows; ++r) {
            double s = 0;
            for (int j = 0; j < p.cols; ++j) s += p(r, j);
            CHECK(std::abs(s - 1) < 1e-6);
        }
        const std::vector<int> perm{3, 0, 4, 1, 2};
        Tensor zp(5, 4);
        for (int r = 0; r < 5; ++r)
            for (int j = 0; j < 4; ++j) zp(r, j) = z(perm[r], j);
        const Tensor o = inject::cross_attention(z, c, w), op = inject::cross_attention(zp, c, w);
        for (int r = 0; r < 5; ++r)
            for (int j = 0; j < 3; ++j) CHECK(op(r, j) == doctest::Approx(o(perm[r], j)).epsilon(1e-12));
    }
    // Keys and values move together, so permuting condition rows leaves the output unchanged up to
    // summation order, with or without W_q = W_k = 0. Changing one condition row does change it.
    const Tensor z = randn(3, 4, rng), c = randn(4, 4, rng);
    Tensor cp(4, 4);
    const int perm[] = {2, 3, 0, 1};
    for (int r = 0; r < 4; ++r)
        for (int j = 0; j < 4; ++j) cp(r, j) = c(perm[r], j);
    inject::AttentionWeights w{randn(4, 3, rng), randn(4, 3, rng), randn(4, 3, rng)};
    CHECK(max_abs_diff(inject::cross_attention(z, c, w), inject::cross_attention(z, cp, w)) < 1e-12);
    inject::AttentionWeights w0{Tensor(4, 3), Tensor(4, 3), w.w_v};
    CHECK(max_abs_diff(inject::cross_attention(z, c, w0), inject::cross_attention(z, cp, w0)) < 1e-12);
    Tensor c_mod = c;
    c_mod(0, 0) += 1.0;
    CHECK(max_abs_diff(inject::cross_attention(z, c, w), inject::cross_attention(z, c_mod, w)) > 1e-6);
}
