#pragma once

#include "piars/tensor.hpp"

namespace piars::grad::kernels {

// out[co] = bias[co] + sum_{ci,ky,kx} img[ci][y+ky-1][x+kx-1] * ker[co][ci][ky][kx]
// 3x3 kernels, stride 1, zero padding 1 (spatial size preserved). The
// accumulation order (ci, ky, kx, then bias) is part of the contract; the
// test-side oracle sums in the same order and expects bitwise equality.
void conv2d(const Tensor& img, const Tensor& ker, const Tensor& bias, Tensor& out);

void conv2d_backward(const Tensor& img, const Tensor& ker, const Tensor& gout,
                     Tensor& gimg, Tensor& gker, Tensor& gbias);

// y = W x + b, W is [out x in]
void affine(const Tensor& w, const Tensor& b, const double* x, double* y);

// c = a * b for [m x k] x [k x n]
void matmul(const Tensor& a, const Tensor& b, Tensor& out);

// c = a * b^T for [m x k] x [n x k]
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out);

double logsumexp(const double* x, int n);

// Unit-norm copy of x; near-zero inputs fall back to the uniform unit
// vector (returns true in that case).
bool l2_normalize(const double* x, int n, double* y, double eps = 1e-8);

}  // namespace piars::grad::kernels
