#include <algorithm>
#include <cmath>

#include "objcustom/kernels.hpp"

namespace objcustom::kernels {

namespace omp {

void gemm(Trans ta, Trans tb, double alpha, const Tensor& a, const Tensor& b, double beta, Tensor& c) {
    const int m = ta == Trans::N ? a.rows : a.cols;
    const int k = ta == Trans::N ? a.cols : a.rows;
    const int kb = tb == Trans::N ? b.rows : b.cols;
    const int n = tb == Trans::N ? b.cols : b.rows;
    require_shape(k == kb, "gemm: inner dimensions differ " + a.shape_str() + " * " + b.shape_str());
    if (beta == 0.0) {
        c = Tensor(m, n);
    } else {
        require_shape(c.rows == m && c.cols == n, "gemm: output shape mismatch");
        if (beta != 1.0)
            for (auto& x : c.data) x *= beta;
    }
    const double* A = a.data.data();
    const double* B = b.data.data();
    double* C = c.data.data();
    const int lda = a.cols, ldb = b.cols;

    if (tb == Trans::N) {
        // Row i of C accumulates scaled rows of B; the inner j loop is contiguous.
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) {
            double* crow = C + static_cast<std::size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                const double aip = alpha * (ta == Trans::N ? A[static_cast<std::size_t>(i) * lda + p]
                                                           : A[static_cast<std::size_t>(p) * lda + i]);
                if (aip == 0.0) continue;
                const double* brow = B + static_cast<std::size_t>(p) * ldb;
#pragma omp simd
                for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    } else if (ta == Trans::N) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) {
            const double* arow = A + static_cast<std::size_t>(i) * lda;
            double* crow = C + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const double* brow = B + static_cast<std::size_t>(j) * ldb;
                double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] += alpha * acc;
            }
        }
    } else {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int p = 0; p < k; ++p)
                    acc += A[static_cast<std::size_t>(p) * lda + i] * B[static_cast<std::size_t>(j) * ldb + p];
                C[static_cast<std::size_t>(i) * n + j] += alpha * acc;
            }
    }
}

Tensor im2col3x3(const Tensor& x, int n, int h, int w) {
    require_shape(x.rows == n * h * w, "im2col3x3: rows != n*h*w");
    const int ch = x.cols;
    Tensor cols(x.rows, 9 * ch);
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double* dst = cols.data.data() + static_cast<std::size_t>((b * h + y) * w + xx) * 9 * ch;
                for (int ky = 0; ky < 3; ++ky) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int sx = xx + kx - 1;
                        if (sx < 0 || sx >= w) continue;
                        const double* src = x.data.data() + static_cast<std::size_t>((b * h + sy) * w + sx) * ch;
                        std::copy_n(src, ch, dst + (ky * 3 + kx) * ch);
                    }
                }
            }
    return cols;
}

void col2im3x3(const Tensor& cols, int n, int h, int w, Tensor& dx) {
    require_shape(cols.rows == n * h * w && cols.cols % 9 == 0, "col2im3x3: bad column matrix");
    const int ch = cols.cols / 9;
    if (dx.empty()) dx = Tensor(n * h * w, ch);
    require_shape(dx.rows == n * h * w && dx.cols == ch, "col2im3x3: bad output");
    // Gather form: each destination pixel pulls from the (up to) nine column rows
    // that reference it, so threads never write the same row.
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double* dst = dx.data.data() + static_cast<std::size_t>((b * h + y) * w + xx) * ch;
                for (int ky = 0; ky < 3; ++ky) {
                    const int oy = y - ky + 1;
                    if (oy < 0 || oy >= h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int ox = xx - kx + 1;
                        if (ox < 0 || ox >= w) continue;
                        const double* src = cols.data.data() +
                                            static_cast<std::size_t>((b * h + oy) * w + ox) * 9 * ch +
                                            (ky * 3 + kx) * ch;
#pragma omp simd
                        for (int c = 0; c < ch; ++c) dst[c] += src[c];
                    }
                }
            }
}

AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout,
                          double scale) {
    layout.validate(q, k, v);
    const int heads = layout.heads;
    const int dh = q.cols / heads;
    const int dv = v.cols / heads;
    const auto poff = layout.prob_offsets();
    AttentionResult res{Tensor(q.rows, v.cols), std::vector<double>(poff.back())};
    const int blocks = layout.samples() * heads;
#pragma omp parallel for schedule(dynamic)
    for (int blk = 0; blk < blocks; ++blk) {
        const int s = blk / heads, h = blk % heads;
        const int q0 = layout.q_offsets[s], mq = layout.q_offsets[s + 1] - q0;
        const int k0 = layout.k_offsets[s], nk = layout.k_offsets[s + 1] - k0;
        double* p = res.probs.data() + poff[blk];
        for (int i = 0; i < mq; ++i) {
            const double* qrow = q.data.data() + static_cast<std::size_t>(q0 + i) * q.cols + h * dh;
            double* prow = p + static_cast<std::size_t>(i) * nk;
            double mx = -INFINITY;
            for (int j = 0; j < nk; ++j) {
                const double* krow = k.data.data() + static_cast<std::size_t>(k0 + j) * k.cols + h * dh;
                double dot = 0.0;
                for (int d = 0; d < dh; ++d) dot += qrow[d] * krow[d];
                prow[j] = dot * scale;
                mx = std::max(mx, prow[j]);
            }
            double z = 0.0;
            for (int j = 0; j < nk; ++j) {
                prow[j] = std::exp(prow[j] - mx);
                z += prow[j];
            }
            for (int j = 0; j < nk; ++j) prow[j] /= z;
            double* orow = res.out.data.data() + static_cast<std::size_t>(q0 + i) * res.out.cols + h * dv;
            for (int j = 0; j < nk; ++j) {
                const double* vrow = v.data.data() + static_cast<std::size_t>(k0 + j) * v.cols + h * dv;
                const double pj = prow[j];
                for (int d = 0; d < dv; ++d) orow[d] += pj * vrow[d];
            }
        }
    }
    return res;
}

AttentionGrads attention_backward(const Tensor& dout, const Tensor& q, const Tensor& k, const Tensor& v,
                                  const AttentionResult& fwd, const AttentionLayout& layout, double scale) {
    const int heads = layout.heads;
    const int dh = q.cols / heads;
    const int dv = v.cols / heads;
    const auto poff = layout.prob_offsets();
    AttentionGrads g{Tensor(q.rows, q.cols), Tensor(k.rows, k.cols), Tensor(v.rows, v.cols)};
    const int blocks = layout.samples() * heads;
#pragma omp parallel for schedule(dynamic)
    for (int blk = 0; blk < blocks; ++blk) {
        const int s = blk / heads, h = blk % heads;
        const int q0 = layout.q_offsets[s], mq = layout.q_offsets[s + 1] - q0;
        const int k0 = layout.k_offsets[s], nk = layout.k_offsets[s + 1] - k0;
        const double* p = fwd.probs.data() + poff[blk];
        std::vector<double> dp(static_cast<std::size_t>(nk));
        for (int i = 0; i < mq; ++i) {
            const double* prow = p + static_cast<std::size_t>(i) * nk;
            const double* drow = dout.data.data() + static_cast<std::size_t>(q0 + i) * dout.cols + h * dv;
            double rowdot = 0.0;
            for (int j = 0; j < nk; ++j) {
                const double* vrow = v.data.data() + static_cast<std::size_t>(k0 + j) * v.cols + h * dv;
                double* dvrow = g.dv.data.data() + static_cast<std::size_t>(k0 + j) * v.cols + h * dv;
                double acc = 0.0;
                for (int d = 0; d < dv; ++d) {
                    acc += drow[d] * vrow[d];
                    dvrow[d] += prow[j] * drow[d];
                }
                dp[j] = acc;
                rowdot += acc * prow[j];
            }
            const double* qrow = q.data.data() + static_cast<std::size_t>(q0 + i) * q.cols + h * dh;
            double* dqrow = g.dq.data.data() + static_cast<std::size_t>(q0 + i) * q.cols + h * dh;
            for (int j = 0; j < nk; ++j) {
                const double ds = prow[j] * (dp[j] - rowdot) * scale;
                const double* krow = k.data.data() + static_cast<std::size_t>(k0 + j) * k.cols + h * dh;
                double* dkrow = g.dk.data.data() + static_cast<std::size_t>(k0 + j) * k.cols + h * dh;
                for (int d = 0; d < dh; ++d) {
                    dqrow[d] += ds * krow[d];
                    dkrow[d] += ds * qrow[d];
                }
            }
        }
    }
    return g;
}

}  // namespace omp

Tensor matmul(const Tensor& a, const Tensor& b, Trans ta, Trans tb) {
    Tensor c;
    gemm(ta, tb, 1.0, a, b, 0.0, c);
    return c;
}

}  // namespace objcustom::kernels
