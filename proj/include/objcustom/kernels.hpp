#pragma once

// Dense compute kernels. Every kernel exists twice: `serial::` is the plain
// reference kept for testing, `omp::` is the OpenMP-parallel version used by
// the rest of the library through the unqualified aliases at the bottom.

#include <vector>

#include "objcustom/tensor.hpp"

namespace objcustom::kernels {

enum class Trans { N, T };

// Segmented multi-head attention layout. Sample s owns query rows
// [q_offsets[s], q_offsets[s+1]) and key/value rows [k_offsets[s], k_offsets[s+1]).
struct AttentionLayout {
    std::vector<int> q_offsets;
    std::vector<int> k_offsets;
    int heads = 1;

    int samples() const { return static_cast<int>(q_offsets.size()) - 1; }
    // Start of the (sample, head) probability block inside the flat prob buffer.
    std::vector<std::size_t> prob_offsets() const;
    void validate(const Tensor& q, const Tensor& k, const Tensor& v) const;
};

struct AttentionResult {
    Tensor out;                 // [q_rows x heads*dv]
    std::vector<double> probs;  // per (sample, head): [mq x nk] row-major
};

struct AttentionGrads {
    Tensor dq, dk, dv;
};

namespace serial {
// c = alpha * op(a) * op(b) + beta * c
void gemm(Trans ta, Trans tb, double alpha, const Tensor& a, const Tensor& b, double beta, Tensor& c);
Tensor im2col3x3(const Tensor& x, int n, int h, int w);
void col2im3x3(const Tensor& cols, int n, int h, int w, Tensor& dx);
AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout, double scale);
AttentionGrads attention_backward(const Tensor& dout, const Tensor& q, const Tensor& k, const Tensor& v,
                                  const AttentionResult& fwd, const AttentionLayout& layout, double scale);
}  // namespace serial

namespace omp {
void gemm(Trans ta, Trans tb, double alpha, const Tensor& a, const Tensor& b, double beta, Tensor& c);
Tensor im2col3x3(const Tensor& x, int n, int h, int w);
void col2im3x3(const Tensor& cols, int n, int h, int w, Tensor& dx);
AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout, double scale);
AttentionGrads attention_backward(const Tensor& dout, const Tensor& q, const Tensor& k, const Tensor& v,
                                  const AttentionResult& fwd, const AttentionLayout& layout, double scale);
}  // namespace omp

using omp::attention;
using omp::attention_backward;
using omp::col2im3x3;
using omp::gemm;
using omp::im2col3x3;

Tensor matmul(const Tensor& a, const Tensor& b, Trans ta = Trans::N, Trans tb = Trans::N);

}  // namespace objcustom::kernels
