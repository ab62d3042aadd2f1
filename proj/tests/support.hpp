#pragma once

// Helpers shared by the unit tests and the acceptance binary. The reference
// routines here are written from the textbook definitions on plain vectors and
// deliberately avoid the library's kernels.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "objcustom/dataset.hpp"
#include "objcustom/model.hpp"
#include "objcustom/tensor.hpp"

namespace support {

using objcustom::Tensor;

// Every width is `d`; small enough for finite differences.
inline objcustom::ModelConfig tiny_model_config(int d = 8) {
    objcustom::ModelConfig c;
    c.detail.d_enc = d;
    c.recon.d_enc = d;
    c.target.d_enc = d;
    c.unet.d_model = d;
    c.unet.base_width = 8;
    c.unet.heads = 2;
    c.unet.depth = 1;
    c.unet.latent_size = 8;
    c.image_size = 8;
    return c;
}

// A handful of reduced-size toy pairs.
inline std::vector<objcustom::data::PairSample> tiny_pairs(int groups, std::uint64_t seed, int max_side = 32) {
    objcustom::data::ToyCorpusOptions co;
    co.single_fraction = 0.0;
    co.small_fraction = 0.0;
    std::vector<objcustom::data::PairSample> out;
    for (int g = 0; g < groups; ++g)
        for (auto& p : objcustom::data::build_pairs({objcustom::data::make_toy_group(co, seed, g)}, seed))
            out.push_back(objcustom::data::shrink_pair(p, max_side));
    return out;
}

// softmax(Z Wq (C Wk)^T / sqrt(d)) C Wv with explicit loops.
inline Tensor dense_attention(const Tensor& z, const Tensor& c, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
    auto mm = [](const Tensor& a, const Tensor& b) {
        Tensor r(a.rows, b.cols);
        for (int i = 0; i < a.rows; ++i)
            for (int j = 0; j < b.cols; ++j) {
                long double s = 0;
                for (int k = 0; k < a.cols; ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
                r(i, j) = static_cast<double>(s);
            }
        return r;
    };
    const Tensor q = mm(z, wq), k = mm(c, wk), v = mm(c, wv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(wq.cols));
    Tensor out(z.rows, wv.cols);
    for (int i = 0; i < z.rows; ++i) {
        std::vector<double> s(static_cast<std::size_t>(c.rows));
        for (int j = 0; j < c.rows; ++j) {
            double dot = 0;
            for (int d = 0; d < q.cols; ++d) dot += q(i, d) * k(j, d);
            s[static_cast<std::size_t>(j)] = dot * scale;
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double z_sum = 0;
        for (double& x : s) z_sum += (x = std::exp(x - mx));
        for (int j = 0; j < c.rows; ++j)
            for (int d = 0; d < v.cols; ++d) out(i, d) += s[static_cast<std::size_t>(j)] / z_sum * v(j, d);
    }
    return out;
}

// ---- FID oracle: literal formula, Denman-Beavers square root ------------------

using Mat = std::vector<std::vector<double>>;

inline Mat mat_mul(const Mat& a, const Mat& b) {
    const std::size_t n = a.size();
    Mat r(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j) r[i][j] += a[i][k] * b[k][j];
    return r;
}

// Gauss-Jordan with partial pivoting.
inline Mat mat_inv(Mat a) {
    const std::size_t n = a.size();
    Mat inv(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(inv[col], inv[piv]);
        const double d = a[col][col];
        for (std::size_t j = 0; j < n; ++j) {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            for (std::size_t j = 0; j < n; ++j) {
                a[r][j] -= f * a[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    return inv;
}

// Principal square root of a matrix with positive real spectrum.
inline Mat sqrtm_denman_beavers(const Mat& a, int iters = 100) {
    const std::size_t n = a.size();
    Mat y = a, z(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) z[i][i] = 1.0;
    for (int it = 0; it < iters; ++it) {
        const Mat yi = mat_inv(y), zi = mat_inv(z);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                y[i][j] = 0.5 * (y[i][j] + zi[i][j]);
                z[i][j] = 0.5 * (z[i][j] + yi[i][j]);
            }
    }
    return y;
}

inline void sample_moments(const Tensor& x, std::vector<double>& mu, Mat& cov) {
    const int n = x.rows, d = x.cols;
    mu.assign(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mu[static_cast<std::size_t>(j)] += x(i, j) / n;
    cov.assign(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(d), 0.0));
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                cov[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
                    (x(i, a) - mu[static_cast<std::size_t>(a)]) * (x(i, b) - mu[static_cast<std::size_t>(b)]) / (n - 1);
}

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2))
inline double fid_oracle(const Tensor& a, const Tensor& b) {
    std::vector<double> ma, mb;
    Mat sa, sb;
    sample_moments(a, ma, sa);
    sample_moments(b, mb, sb);
    const Mat root = sqrtm_denman_beavers(mat_mul(sa, sb));
    double v = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) v += (ma[i] - mb[i]) * (ma[i] - mb[i]) + sa[i][i] + sb[i][i] - 2 * root[i][i];
    return v;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return d / std::sqrt(na * nb);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("objcustom_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace support
