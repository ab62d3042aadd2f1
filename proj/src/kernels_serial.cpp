#include <algorithm>
#include <cmath>

#include "objcustom/kernels.hpp"

namespace objcustom::kernels {

std::vector<std::size_t> AttentionLayout::prob_offsets() const {
    std::vector<std::size_t> off;
    off.reserve(static_cast<std::size_t>(samples()) * heads + 1);
    std::size_t acc = 0;
    for (int s = 0; s < samples(); ++s) {
        const std::size_t block = static_cast<std::size_t>(q_offsets[s + 1] - q_offsets[s]) *
                                  static_cast<std::size_t>(k_offsets[s + 1] - k_offsets[s]);
        for (int h = 0; h < heads; ++h) {
            off.push_back(acc);
            acc += block;
        }
    }
    off.push_back(acc);
    return off;
}

void AttentionLayout::validate(const Tensor& q, const Tensor& k, const Tensor& v) const {
    require_shape(heads >= 1, "attention: heads must be >= 1");
    require_shape(q_offsets.size() >= 2 && q_offsets.size() == k_offsets.size(),
                  "attention: offset arrays must describe the same number of samples");
    require_shape(q_offsets.front() == 0 && q_offsets.back() == q.rows, "attention: query offsets do not cover Q");
    require_shape(k_offsets.front() == 0 && k_offsets.back() == k.rows, "attention: key offsets do not cover K");
    require_shape(k.rows == v.rows, "attention: K and V row counts differ");
    require_shape(q.cols == k.cols, "attention: Q and K widths differ " + q.shape_str() + " vs " + k.shape_str());
    require_shape(q.cols % heads == 0 && v.cols % heads == 0, "attention: width not divisible by heads");
    for (int s = 0; s < samples(); ++s) {
        require_shape(q_offsets[s + 1] >= q_offsets[s], "attention: decreasing query offsets");
        require_shape(k_offsets[s + 1] > k_offsets[s], "attention: every sample needs at least one key");
    }
}

namespace serial {

namespace {
double at(const Tensor& m, Trans t, int r, int c) { return t == Trans::N ? m(r, c) : m(c, r); }
}  // namespace

void gemm(Trans ta, Trans tb, double alpha, const Tensor& a, const Tensor& b, double beta, Tensor& c) {
    const int m = ta == Trans::N ? a.rows : a.cols;
    const int k = ta == Trans::N ? a.cols : a.rows;
    const int kb = tb == Trans::N ? b.rows : b.cols;
    const int n = tb == Trans::N ? b.cols : b.rows;
    require_shape(k == kb, "gemm: inner dimensions differ " + a.shape_str() + " * " + b.shape_str());
    if (beta == 0.0) c = Tensor(m, n);
    require_shape(c.rows == m && c.cols == n, "gemm: output shape mismatch");
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += at(a, ta, i, p) * at(b, tb, p, j);
            c(i, j) = alpha * acc + beta * c(i, j);
        }
}

Tensor im2col3x3(const Tensor& x, int n, int h, int w) {
    require_shape(x.rows == n * h * w, "im2col3x3: rows != n*h*w");
    const int ch = x.cols;
    Tensor cols(x.rows, 9 * ch);
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const int row = (b * h + y) * w + xx;
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const int sy = y + ky - 1;
                        const int sx = xx + kx - 1;
                        if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                        const int src = (b * h + sy) * w + sx;
                        for (int c = 0; c < ch; ++c) cols(row, (ky * 3 + kx) * ch + c) = x(src, c);
                    }
            }
    return cols;
}

void col2im3x3(const Tensor& cols, int n, int h, int w, Tensor& dx) {
    require_shape(cols.rows == n * h * w && cols.cols % 9 == 0, "col2im3x3: bad column matrix");
    const int ch = cols.cols / 9;
    if (dx.empty()) dx = Tensor(n * h * w, ch);
    require_shape(dx.rows == n * h * w && dx.cols == ch, "col2im3x3: bad output");
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const int row = (b * h + y) * w + xx;
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const int sy = y + ky - 1;
                        const int sx = xx + kx - 1;
                        if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                        const int src = (b * h + sy) * w + sx;
                        for (int c = 0; c < ch; ++c) dx(src, c) += cols(row, (ky * 3 + kx) * ch + c);
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
    for (int s = 0; s < layout.samples(); ++s) {
        const int q0 = layout.q_offsets[s], mq = layout.q_offsets[s + 1] - q0;
        const int k0 = layout.k_offsets[s], nk = layout.k_offsets[s + 1] - k0;
        for (int h = 0; h < heads; ++h) {
            double* p = res.probs.data() + poff[static_cast<std::size_t>(s) * heads + h];
            for (int i = 0; i < mq; ++i) {
                for (int j = 0; j < nk; ++j) {
                    double dot = 0.0;
                    for (int d = 0; d < dh; ++d) dot += q(q0 + i, h * dh + d) * k(k0 + j, h * dh + d);
                    p[i * nk + j] = dot * scale;
                }
                double mx = p[i * nk];
                for (int j = 1; j < nk; ++j) mx = std::max(mx, p[i * nk + j]);
                double z = 0.0;
                for (int j = 0; j < nk; ++j) {
                    p[i * nk + j] = std::exp(p[i * nk + j] - mx);
                    z += p[i * nk + j];
                }
                for (int j = 0; j < nk; ++j) p[i * nk + j] /= z;
                for (int d = 0; d < dv; ++d) {
                    double acc = 0.0;
                    for (int j = 0; j < nk; ++j) acc += p[i * nk + j] * v(k0 + j, h * dv + d);
                    res.out(q0 + i, h * dv + d) = acc;
                }
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
    for (int s = 0; s < layout.samples(); ++s) {
        const int q0 = layout.q_offsets[s], mq = layout.q_offsets[s + 1] - q0;
        const int k0 = layout.k_offsets[s], nk = layout.k_offsets[s + 1] - k0;
        for (int h = 0; h < heads; ++h) {
            const double* p = fwd.probs.data() + poff[static_cast<std::size_t>(s) * heads + h];
            std::vector<double> dp(static_cast<std::size_t>(nk));
            for (int i = 0; i < mq; ++i) {
                for (int j = 0; j < nk; ++j) {
                    double acc = 0.0;
                    for (int d = 0; d < dv; ++d) {
                        acc += dout(q0 + i, h * dv + d) * v(k0 + j, h * dv + d);
                        g.dv(k0 + j, h * dv + d) += p[i * nk + j] * dout(q0 + i, h * dv + d);
                    }
                    dp[j] = acc;
                }
                double rowdot = 0.0;
                for (int j = 0; j < nk; ++j) rowdot += dp[j] * p[i * nk + j];
                for (int j = 0; j < nk; ++j) {
                    const double ds = p[i * nk + j] * (dp[j] - rowdot) * scale;
                    for (int d = 0; d < dh; ++d) {
                        g.dq(q0 + i, h * dh + d) += ds * k(k0 + j, h * dh + d);
                        g.dk(k0 + j, h * dh + d) += ds * q(q0 + i, h * dh + d);
                    }
                }
            }
        }
    }
    return g;
}

}  // namespace serial
}  // namespace objcustom::kernels
