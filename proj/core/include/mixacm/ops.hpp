#pragma once

#include "mixacm/tensor.hpp"

namespace mixacm {

// Elementwise / scalar ops. All ops allocate fresh outputs and record onto
// the active tape when an input requires a gradient.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);
Tensor relu(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor sign(const Tensor& x);  // sign(0) = 0, gradient 0 everywhere

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K] x [K,N] -> [M,N]

/// 2d convolution, NCHW x [C_out,C,kH,kW] -> [N,C_out,H',W'],
/// H' = floor((H + 2*padding - kH)/stride) + 1 and likewise W'.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

Tensor add_channel_bias(const Tensor& x, const Tensor& bias);  // NCHW + [C]
Tensor add_row_bias(const Tensor& x, const Tensor& bias);      // [N,K] + [K]

// Reductions / shape ops.
Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar
Tensor l2_norm(const Tensor& x);  // -> scalar, sqrt(sum x^2)

/// Per-channel spatial max g_c: [N,C,H,W] -> [N,C]. Gradient routes to the
/// first argmax in row-major scan order on ties.
Tensor spatial_max(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]

// Row-wise ops on [N,K].
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

/// Rows scaled to unit Euclidean norm; rows with norm < 1e-12 map to zero
/// (and receive zero gradient).
Tensor row_l2_normalize(const Tensor& x);

/// 1d adaptive max pooling over the channel axis of [N,C_in] -> [N,C_out].
/// Output bin i covers input indices [floor(i*C_in/C_out), ceil((i+1)*C_in/C_out)).
Tensor adaptive_max_pool_1d(const Tensor& x, std::size_t out_channels);

namespace blas {
/// Row-major C = alpha * op(A) * op(B) + beta * C, single-threaded.
void dgemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
           const double* a, int lda, const double* b, int ldb, double beta,
           double* c, int ldc);
}  // namespace blas

}  // namespace mixacm
