#include <doctest.h>

#include <functional>

#include "objcustom/autodiff.hpp"
#include "objcustom/kernels.hpp"
#include "support.hpp"

using namespace objcustom;
using kernels::Trans;

TEST_CASE("gemm: parallel matches serial across transposes") {
    std::mt19937_64 rng(1);
    for (Trans ta : {Trans::N, Trans::T})
        for (Trans tb : {Trans::N, Trans::T}) {
            const int m = 37, n = 29, k = 41;
            const Tensor a = ta == Trans::N ? randn(m, k, rng) : randn(k, m, rng);
            const Tensor b = tb == Trans::N ? randn(k, n, rng) : randn(n, k, rng);
            Tensor c1 = randn(m, n, rng), c2 = c1;
            kernels::serial::gemm(ta, tb, 0.7, a, b, 0.3, c1);
            kernels::omp::gemm(ta, tb, 0.7, a, b, 0.3, c2);
            // Different accumulation order, so agreement is to rounding.
            for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c2.data[i] == doctest::Approx(c1.data[i]).epsilon(1e-13));
        }
}

TEST_CASE("gemm: agrees with a naive triple loop") {
    std::mt19937_64 rng(2);
    const Tensor a = randn(5, 7, rng), b = randn(7, 3, rng);
    const Tensor c = kernels::matmul(a, b);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 7; ++k) s += a(i, k) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-12));
        }
    CHECK_THROWS_AS(kernels::matmul(a, a), ShapeError);
}

TEST_CASE("im2col / col2im: parallel matches serial, and col2im is the adjoint") {
    std::mt19937_64 rng(3);
    const int n = 2, h = 5, w = 4, c = 3;
    const Tensor x = randn(n * h * w, c, rng);
    const Tensor s = kernels::serial::im2col3x3(x, n, h, w), p = kernels::omp::im2col3x3(x, n, h, w);
    CHECK(s.data == p.data);
    const Tensor y = randn(s.rows, s.cols, rng);
    Tensor dx1(n * h * w, c), dx2(n * h * w, c);
    kernels::serial::col2im3x3(y, n, h, w, dx1);
    kernels::omp::col2im3x3(y, n, h, w, dx2);
    for (std::size_t i = 0; i < dx1.size(); ++i) CHECK(dx2.data[i] == doctest::Approx(dx1.data[i]).epsilon(1e-13));
    // <im2col(x), y> == <x, col2im(y)>
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) lhs += s.data[i] * y.data[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data[i] * dx1.data[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("attention: segmented multi-head, parallel matches serial forward and backward") {
    std::mt19937_64 rng(4);
    kernels::AttentionLayout lay{{0, 3, 8, 9}, {0, 4, 6, 11}, 2};
    const Tensor q = randn(9, 6, rng), k = randn(11, 6, rng), v = randn(11, 4, rng);
    const auto a = kernels::serial::attention(q, k, v, lay, 0.4), b = kernels::omp::attention(q, k, v, lay, 0.4);
    CHECK(a.out.data == b.out.data);
    CHECK(a.probs == b.probs);
    const Tensor dout = randn(9, 4, rng);
    const auto ga = kernels::serial::attention_backward(dout, q, k, v, a, lay, 0.4);
    const auto gb = kernels::omp::attention_backward(dout, q, k, v, b, lay, 0.4);
    CHECK(ga.dq.data == gb.dq.data);
    CHECK(ga.dk.data == gb.dk.data);
    CHECK(ga.dv.data == gb.dv.data);
}

TEST_CASE("attention: each segment/head equals the dense oracle") {
    std::mt19937_64 rng(5);
    kernels::AttentionLayout lay{{0, 2, 5}, {0, 3, 4}, 2};
    const Tensor q = randn(5, 4, rng), k = randn(4, 4, rng), v = randn(4, 6, rng);
    const auto r = kernels::attention(q, k, v, lay, 1.0 / std::sqrt(2.0));
    for (int s = 0; s < 2; ++s)
        for (int h = 0; h < 2; ++h) {
            const int q0 = lay.q_offsets[s], mq = lay.q_offsets[s + 1] - q0;
            const int k0 = lay.k_offsets[s], nk = lay.k_offsets[s + 1] - k0;
            // Keys and values side by side in one condition matrix; selector weights pick them apart.
            Tensor qs(mq, 2), kv(nk, 5);
            for (int i = 0; i < mq; ++i)
                for (int j = 0; j < 2; ++j) qs(i, j) = q(q0 + i, h * 2 + j);
            for (int i = 0; i < nk; ++i) {
                for (int j = 0; j < 2; ++j) kv(i, j) = k(k0 + i, h * 2 + j);
                for (int j = 0; j < 3; ++j) kv(i, 2 + j) = v(k0 + i, h * 3 + j);
            }
            Tensor eye2(2, 2, {1, 0, 0, 1}), pick_k(5, 2), pick_v(5, 3);
            pick_k(0, 0) = pick_k(1, 1) = 1;
            for (int j = 0; j < 3; ++j) pick_v(2 + j, j) = 1;
            const Tensor want = support::dense_attention(qs, kv, eye2, pick_k, pick_v);
            for (int i = 0; i < mq; ++i)
                for (int j = 0; j < 3; ++j) CHECK(r.out(q0 + i, h * 3 + j) == doctest::Approx(want(i, j)).epsilon(1e-12));
        }
}

TEST_CASE("attention: invalid layouts are rejected") {
    const Tensor q(3, 4), k(2, 4), v(2, 4);
    CHECK_THROWS_AS(kernels::attention(q, k, v, {{0, 2}, {0, 2}, 1}, 1.0), ShapeError);
    CHECK_THROWS_AS(kernels::attention(q, k, v, {{0, 3}, {0, 2}, 3}, 1.0), ShapeError);
}

// ---- autodiff ---------------------------------------------------------------

namespace {

// Checks every parameter entry of `store` against central differences of `loss`.
double worst_grad_error(ad::ParamStore& store, const std::function<ad::Var(ad::Graph&)>& loss, double h = 1e-6) {
    store.zero_grad();
    {
        ad::Graph g;
        g.backward(loss(g));
    }
    double worst = 0;
    for (auto* p : store.all())
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double v = p->value.data[i];
            p->value.data[i] = v + h;
            ad::Graph g1;
            const double up = loss(g1).value().data[0];
            p->value.data[i] = v - h;
            ad::Graph g2;
            const double dn = loss(g2).value().data[0];
            p->value.data[i] = v;
            const double fd = (up - dn) / (2 * h), an = p->grad.data[i];
            worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
        }
    return worst;
}

}  // namespace

TEST_CASE("autodiff: elementwise, shape and reduction ops match finite differences") {
    std::mt19937_64 rng(6);
    ad::ParamStore st;
    auto& a = st.add("a", randn(4, 3, rng));
    auto& b = st.add("b", randn(4, 3, rng));
    auto& bias = st.add("bias", randn(1, 3, rng));
    auto& w = st.add("w", randn(3, 5, rng));
    const Tensor target = randn(4, 5, rng);
    auto loss = [&](ad::Graph& g) {
        ad::Var va = g.param(a), vb = g.param(b);
        ad::Var x = ad::add(ad::mul(va, ad::sigmoid(vb)), ad::scale(ad::sub(va, vb), 0.3));
        x = ad::add_row(x, g.param(bias));
        x = ad::concat_rows({ad::gelu(x), ad::silu(ad::slice_rows(x, 1, 2))});
        x = ad::gather_rows(x, {0, 5, 2, 3, 4, 1});
        ad::Var y = ad::matmul(ad::slice_rows(x, 0, 4), g.param(w));
        ad::Var c = ad::row_cosine(ad::concat_cols(va, vb), ad::concat_cols(vb, va));
        return ad::add(ad::add(ad::mse(y, g.constant(target)), ad::mean(c)), ad::scale(ad::sum(ad::segment_mean(y, {0, 1, 4})), 0.1));
    };
    CHECK(worst_grad_error(st, loss) < 1e-6);
}

TEST_CASE("autodiff: spatial ops and attention match finite differences") {
    std::mt19937_64 rng(7);
    ad::ParamStore st;
    auto& x = st.add("x", randn(2 * 4 * 4, 2, rng));
    auto& kw = st.add("kw", randn(18, 3, rng, 0.3));
    auto& q = st.add("q", randn(5, 4, rng));
    auto& k = st.add("k", randn(6, 4, rng));
    auto& v = st.add("v", randn(6, 4, rng));
    auto& seg = st.add("seg", randn(2, 3, rng));
    auto loss = [&](ad::Graph& g) {
        ad::Var c = ad::matmul(ad::im2col3x3(g.param(x), 2, 4, 4), g.param(kw));
        ad::Var p = ad::upsample2(ad::avgpool2(c, 2, 4, 4), 2, 2, 2);
        p = ad::add_segments(p, g.param(seg), 16);
        ad::Var att = ad::attention(g.param(q), g.param(k), g.param(v), {{0, 2, 5}, {0, 3, 6}, 2}, 0.5);
        return ad::add(ad::mean(ad::mul(p, p)), ad::sum(ad::mul(att, att)));
    };
    CHECK(worst_grad_error(st, loss) < 1e-6);
}

TEST_CASE("autodiff: row_cosine of a zero row yields 0 and no gradient") {
    ad::ParamStore st;
    auto& a = st.add("a", Tensor(1, 3));
    auto& b = st.add("b", Tensor(1, 3, {1, 2, 3}));
    ad::Graph g;
    ad::Var c = ad::row_cosine(g.param(a), g.param(b));
    CHECK(c.value().data[0] == 0.0);
    g.backward(ad::sum(c));
    for (double d : b.grad.data) CHECK(d == 0.0);
}

TEST_CASE("autodiff: frozen params receive no gradient and duplicate names are refused") {
    ad::ParamStore st;
    auto& f = st.add("f", Tensor(1, 2, {1, 2}), false);
    auto& t = st.add("t", Tensor(1, 2, {3, 4}));
    ad::Graph g;
    g.backward(ad::sum(ad::mul(g.param(f), g.param(t))));
    CHECK(f.grad.data == std::vector<double>{0, 0});
    CHECK(t.grad.data == std::vector<double>{1, 2});
    CHECK_THROWS_AS(st.add("t", Tensor(1, 1)), ConfigError);
}
